"""xoshiro256** generator used for every synthetic-data decision.

Scalar draws step a single xoshiro256** state held in Python ints. Bulk draws
(per-pixel noise) run ``LANES`` independent xoshiro256** states in lockstep
with numpy ``uint64`` arithmetic; the lane states are seeded with splitmix64
from the next scalar output, and lane outputs are interleaved lane-major per
step. Everything is integer arithmetic, so streams are identical on every
platform.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
LANES = 64


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step; returns ``(new_state, output)``."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Per-record seed mixing the dataset seed with the record index."""
    _, a = splitmix64(seed & MASK64)
    _, b = splitmix64((a ^ (index & MASK64)) & MASK64)
    return b


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    def __init__(self, seed: int):
        state = seed & MASK64
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
        self.s = s

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def integers(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range ``[lo, hi]`` (multiply-shift reduction)."""
        n = hi - lo + 1
        if n <= 0:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + ((self.next_u64() * n) >> 64)

    def bulk_u64(self, n: int) -> np.ndarray:
        state = self.next_u64()
        lanes = np.empty((4, LANES), dtype=np.uint64)
        for j in range(LANES):
            for i in range(4):
                state, out = splitmix64(state)
                lanes[i, j] = out
        s0, s1, s2, s3 = (lanes[i].copy() for i in range(4))
        steps = -(-n // LANES)
        out = np.empty((steps, LANES), dtype=np.uint64)
        five, nine = np.uint64(5), np.uint64(9)
        with np.errstate(over="ignore"):
            for k in range(steps):
                x = s1 * five
                x = (x << np.uint64(7)) | (x >> np.uint64(57))
                out[k] = x * nine
                t = s1 << np.uint64(17)
                s2 ^= s0
                s3 ^= s1
                s1 ^= s2
                s0 ^= s3
                s2 ^= t
                s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
        return out.reshape(-1)[:n]

    def uniform_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        bits = self.bulk_u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) * (1.0 / (1 << 53))).reshape(shape)
