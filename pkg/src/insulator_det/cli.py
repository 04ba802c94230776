"""Command line entry point: ``insulator-det {synth,train,infer,eval,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .data.records import AnnotationError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write(path: Path, data: bytes | str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        data = data.encode()
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _load_config(args):
    from .config import TrainConfig

    cfg = TrainConfig.from_json(Path(args.config).read_text()) if args.config else TrainConfig()
    d = cfg.to_dict()
    for key in ("seed", "iterations", "lr", "batch_size", "checkpoint_interval"):
        value = getattr(args, key, None)
        if value is not None:
            d[key] = value
    if getattr(args, "no_augment", False):
        d["augmentation"] = None
    return TrainConfig.from_dict(d)


def cmd_synth(args) -> int:
    from .data.synth import synth_generate, write_dataset

    seed = args.seed if args.seed is not None else 0
    size = (args.image_size, args.image_size)
    train = synth_generate(seed, args.n, size)
    val_seed = args.val_seed if args.val_seed is not None else seed + 1000
    val = synth_generate(val_seed, args.n_val, size) if args.n_val > 0 else []
    write_dataset(args.out, train, val)
    print(f"wrote {len(train)} train / {len(val)} val records to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import TrainConfig
    from .data.synth import load_split
    from .train import train

    cfg = _load_config(args)
    out = Path(args.out)
    d = cfg.to_dict()
    d["checkpoint_path"] = str(out / "checkpoint.npz")
    d["log_path"] = str(out / "loss_log.csv")
    cfg = TrainConfig.from_dict(d)
    records = load_split(args.data, args.split)
    _write(out / "config.json", json.dumps(cfg.settings(), indent=2, sort_keys=True) + "\n")
    train(cfg, records)
    print(f"checkpoint: {cfg.checkpoint_path}\nloss log: {cfg.log_path}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .checkpoint import load_checkpoint
    from .config import InferenceConfig, TrainConfig
    from .data.synth import load_split
    from .data.voc import export_voc_xml
    from .evaluation import dump_predictions
    from .infer import infer_image
    from .render import render_overlay

    model, meta = load_checkpoint(args.checkpoint)
    icfg = TrainConfig.from_dict(meta["train"]).inference if "train" in meta else InferenceConfig()
    if args.score_thresh is not None:
        icfg.score_thresh = args.score_thresh
    out = Path(args.out)
    preds = []
    for rec in load_split(args.data, args.split):
        res = infer_image(model, rec.image, icfg, rec.image_id, with_masks=not args.no_masks)
        pred = res.to_prediction()
        preds.append(pred)
        defects = [d for d in res.detections if d.class_id == 1]
        _write(out / "xml" / f"{rec.image_id}.xml", export_voc_xml(rec.image_id, defects, (rec.height, rec.width)))
        _write(out / "overlays" / f"{rec.image_id}.png", render_overlay(rec.image, pred.detections, pred.masks))
    _write(out / "predictions.json", dump_predictions(preds))
    print(f"wrote predictions for {len(preds)} images to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data.synth import load_split
    from .evaluation import dump_predictions, load_predictions, metric_table, predictions_from_records

    records = load_split(args.data, args.split)
    if args.predictions:
        preds = load_predictions(Path(args.predictions).read_text())
    else:
        preds = load_predictions(dump_predictions(predictions_from_records(records)))
    table = metric_table(preds, records)
    text = table.render()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        _write(out / "report.txt", text)
        _write(out / "metrics.json", table.to_json())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import SUITES, TOLERANCE, run_all

    names = args.suite or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise UsageError(f"gradcheck: unknown suite(s) {unknown}; choose from {list(SUITES)}")
    results = run_all(args.seed if args.seed is not None else 0, names)
    worst = {}
    for r in results:
        worst[r.suite] = max(worst.get(r.suite, 0.0), r.error)
    for name, err in worst.items():
        print(f"{'PASS' if err <= TOLERANCE else 'FAIL'}  {name:<18} max rel err {err:.3e}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    p = _Parser(prog="insulator-det", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--n-val", type=int, default=0)
    s.add_argument("--val-seed", type=int, default=None)
    s.add_argument("--image-size", type=int, default=128)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", parents=[common], help="train on a dataset split")
    t.add_argument("--data", required=True)
    t.add_argument("--split", default="train")
    t.add_argument("--config")
    t.add_argument("--iterations", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--checkpoint-interval", type=int)
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", parents=[common], help="detect, segment and export XML/overlays")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--split", default="val")
    i.add_argument("--score-thresh", type=float)
    i.add_argument("--no-masks", action="store_true")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", parents=[common], help="AP/AR table for predictions vs ground truth")
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="val")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--predictions")
    src.add_argument("--gt-as-predictions", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    g.add_argument("--suite", action="append")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (AnnotationError, FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
