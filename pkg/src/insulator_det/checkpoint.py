"""Checkpoint archive.

A zip file (stored, fixed timestamps, entries in sorted key order) holding one
``<key>.npy`` per parameter, each a row-major little-endian float64 array
(``<f8``) whose header carries the shape, plus ``meta.json`` with the model
config and training metadata. Identical parameters give identical bytes.
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from pathlib import Path

import numpy as np
import torch

from .model import InsulatorModel, ModelConfig

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def checkpoint_bytes(model: InsulatorModel, meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    state = model.state_dict()
    with zipfile.ZipFile(buf, "w") as zf:
        for key in sorted(state):
            arr = np.ascontiguousarray(state[key].detach().cpu().double().numpy(), dtype="<f8")
            body = io.BytesIO()
            np.lib.format.write_array(body, arr, version=(1, 0), allow_pickle=False)
            zf.writestr(_entry(f"{key}.npy"), body.getvalue())
        doc = {"model": model.cfg.to_dict(), **(meta or {})}
        zf.writestr(_entry("meta.json"), json.dumps(doc, indent=2, sort_keys=True))
    return buf.getvalue()


def save_checkpoint(path, model: InsulatorModel, meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(model, meta))
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    arrays = {}
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    return arrays, meta


def load_checkpoint(path, dtype=torch.float32) -> tuple[InsulatorModel, dict]:
    arrays, meta = read_checkpoint(path)
    model = InsulatorModel(ModelConfig.from_dict(meta["model"])).to(dtype)
    expected = set(model.state_dict())
    if set(arrays) != expected:
        missing = sorted(expected - set(arrays))
        extra = sorted(set(arrays) - expected)
        raise ValueError(f"checkpoint keys do not match model: missing {missing}, unexpected {extra}")
    model.load_state_dict({k: torch.as_tensor(v).to(dtype) for k, v in arrays.items()})
    return model, meta
