import os
from pathlib import Path

import numpy as np
import pytest

from cdgparse import formats
from cdgparse.cli import main
from cdgparse.labels import LabelMap

FIXTURES = Path(__file__).parent / "fixtures"


def write_tiny_config(path: Path, **overrides) -> Path:
    lines = [
        "[train]",
        "epochs = 2",
        "batch_size = 2",
        "seed = 0",
        "[model]",
        "channels = 8",
        "num_classes = 5",
        "[data]",
        "image_size = 32",
        "crop_size = 32",
        "train_samples = 4",
        "val_samples = 2",
    ]
    for key, value in overrides.items():
        lines.append(f"{key} = {value}")
    path.write_text("\n".join(lines) + "\n")
    return path


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 1


def test_encode_matches_worked_example(tmp_path):
    out_h, out_v = tmp_path / "h.dist", tmp_path / "v.dist"
    code = main(["encode", str(FIXTURES / "label_2x2.pgm"), str(out_h), str(out_v), "--normalize"])
    assert code == 0
    dist_h = formats.read_distribution(out_h)
    dist_v = formats.read_distribution(out_v)
    assert np.array_equal(dist_h.values, [[0.5, 0.5], [0.0, 1.0]])
    assert np.array_equal(dist_v.values, [[0.5, 0.5], [0.0, 1.0]])


def test_encode_feature_scale(tmp_path):
    label = LabelMap(np.arange(16).reshape(4, 4) % 4, 4)
    src = tmp_path / "label.pgm"
    formats.write_label(src, label)
    out_h, out_v = tmp_path / "h.dist", tmp_path / "v.dist"
    assert main(["encode", str(src), str(out_h), str(out_v), "--feature-scale", "2", "--classes", "4"]) == 0
    assert formats.read_distribution(out_h).values.shape == (2, 4)


def test_encode_missing_file_is_data_error(tmp_path, capsys):
    code = main(["encode", str(tmp_path / "nope.pgm"), "a", "b"])
    assert code == 2


def test_train_eval_infer_heatmap_end_to_end(tmp_path, capsys):
    cfg = write_tiny_config(tmp_path / "cfg.ini")
    ckpt = tmp_path / "net.cdgc"
    log = tmp_path / "log.csv"
    data_dir = tmp_path / "data"
    assert main(["train", str(cfg), "--checkpoint", str(ckpt), "--log", str(log), "--dump-data", str(data_dir)]) == 0
    assert ckpt.exists() and log.exists()
    assert len(list((data_dir / "train").glob("*.ppm"))) == 4
    assert len(list((data_dir / "val").glob("*.ppm"))) == 2

    report = tmp_path / "report.csv"
    code = main(
        ["eval", str(ckpt), "--images", str(data_dir / "train"), "--labels", str(data_dir / "train"), "--out", str(report), "--swaps", "3:4"]
    )
    assert code == 0
    assert report.read_text().splitlines()[0].startswith("label,iou")

    sample = next((data_dir / "train").glob("*.ppm"))
    pred_path = tmp_path / "pred.pgm"
    assert main(["infer", str(ckpt), str(sample), str(pred_path), "--scales", "0.75,1.0,1.25", "--flip", "--swaps", "3:4"]) == 0
    pred = formats.read_label(pred_path, 5)
    assert pred.pixels.shape == (32, 32)

    heat = tmp_path / "dist_h.pgm"
    assert main(["heatmap", str(heat), "--checkpoint", str(ckpt), "--image", str(sample), "--what", "dist-h"]) == 0
    assert heat.read_bytes().startswith(b"P5")
    heat2 = tmp_path / "guidance.pgm"
    assert main(["heatmap", str(heat2), "--checkpoint", str(ckpt), "--image", str(sample)]) == 0


def test_train_identical_seeds_identical_checkpoints(tmp_path):
    cfg = write_tiny_config(tmp_path / "cfg.ini")
    a, b = tmp_path / "a.cdgc", tmp_path / "b.cdgc"
    assert main(["train", str(cfg), "--checkpoint", str(a)]) == 0
    assert main(["train", str(cfg), "--checkpoint", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_heatmap_from_distribution_file(tmp_path):
    out = tmp_path / "strip.pgm"
    assert main(["heatmap", str(out), "--dist", str(FIXTURES / "dist_h_2x2.dist")]) == 0
    payload = out.read_bytes().split(b"255\n", 1)[1]
    assert list(payload) == [128, 128, 0, 255]


def test_heatmap_requires_source(capsys):
    assert main(["heatmap", "/tmp/out.pgm"]) == 1


def test_gradcheck_cli_passes(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "cdg.alpha" in out and "worst" in out


def test_bad_config_is_data_error(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[train]\nbogus = 1\n")
    assert main(["train", str(cfg), "--checkpoint", str(tmp_path / "x.cdgc")]) == 2
    assert "bogus" in capsys.readouterr().err


def test_corrupt_checkpoint_is_data_error(tmp_path, capsys):
    path = tmp_path / "c.cdgc"
    formats.save_checkpoint(path, {"decoder.weight": np.zeros((3, 3, 8, 5), np.float32)})
    raw = bytearray(path.read_bytes())
    raw[8] ^= 0x1
    path.write_bytes(bytes(raw))
    assert main(["infer", str(path), "x.ppm", "y.pgm"]) == 2
