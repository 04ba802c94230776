import json

import pytest

from insulator_det.cli import main
from insulator_det.data.voc import parse_voc_xml


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["synth", "--seed", "4", "--n", "2", "--n-val", "2", "--image-size", "64", "--out", str(root)]) == 0
    return root


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["bogus"]) == 1
    assert main(["eval", "--data", "x"]) == 1
    assert main(["gradcheck", "--suite", "nope"]) == 1
    assert main(["synth", "--n", "two", "--out", "x"]) == 1


def test_help_exits_0():
    assert main(["--help"]) == 0


def test_data_errors_exit_2(tmp_path, dataset, capsys):
    assert main(["eval", "--data", str(tmp_path / "missing"), "--gt-as-predictions"]) == 2
    bad = tmp_path / "bad"
    main(["synth", "--n", "1", "--image-size", "64", "--out", str(bad)])
    ann = next((bad / "annotations").glob("*.json"))
    ann.write_text(ann.read_text().replace('"Insulator"', '"insulator"'))
    assert main(["eval", "--data", str(bad), "--split", "train", "--gt-as-predictions"]) == 2
    assert "unknown label" in capsys.readouterr().err


def test_synth_is_byte_deterministic(tmp_path):
    args = ["synth", "--seed", "9", "--n", "2", "--image-size", "64"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_eval_ground_truth_report(tmp_path, dataset, capsys):
    out = tmp_path / "report"
    assert main(["eval", "--data", str(dataset), "--split", "val", "--gt-as-predictions", "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["value1_mask_insulator"]["AP"] == 1.0
    assert (out / "report.txt").read_text() == capsys.readouterr().out


def test_gradcheck_single_suite(capsys):
    assert main(["gradcheck", "--suite", "ese"]) == 0
    assert capsys.readouterr().out.startswith("PASS  ese")


def test_train_infer_eval_chain(tmp_path, dataset):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "iterations": 2, "batch_size": 2,
        "model": {"widths": [8, 8, 8], "stem_channels": 8, "fpn_width": 8, "mask_convs": 1, "roi_size": 7},
        "augmentation": {"scale_min": 64, "scale_max": 64, "max_long_side": 64},
        "inference": {"score_thresh": 0.0},
    }))
    run = tmp_path / "run"
    assert main(["train", "--data", str(dataset), "--config", str(cfg), "--out", str(run)]) == 0
    assert {"checkpoint.npz", "loss_log.csv", "config.json"} <= set(_tree(run))
    pred = tmp_path / "pred"
    assert main(["infer", "--checkpoint", str(run / "checkpoint.npz"), "--data", str(dataset),
                 "--out", str(pred)]) == 0
    files = _tree(pred)
    assert sum(k.startswith("xml/") for k in files) == 2 and sum(k.startswith("overlays/") for k in files) == 2
    for k, v in files.items():
        if k.startswith("xml/"):
            assert all(d.class_id == 1 for d in parse_voc_xml(v.decode()))
    assert main(["eval", "--data", str(dataset), "--predictions", str(pred / "predictions.json"),
                 "--out", str(tmp_path / "ev")]) == 0
