import hashlib
import subprocess
import sys

import numpy as np
import pytest

from mgfa import netpbm
from mgfa.checkpoint import load_model, save_checkpoint
from mgfa.cli import main
from mgfa.config import ConfigError, RunConfig, parse_text
from mgfa.model import BackboneConfig, Model

SMALL = ["--classes", "3", "--samples-per-class", "2", "--image-size", "32", "--pool", "2"]


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode() + p.read_bytes())
    return h.hexdigest()


# ------------------------------------------------------------------- config


def test_defaults_match_published_settings():
    cfg = RunConfig.build()
    assert (cfg["lr"], cfg["momentum"], cfg["lr_decay_factor"], cfg["lr_decay_period"]) == (0.003, 0.938, 10.0, 100)
    assert (cfg["alpha"], cfg["beta"], cfg["gamma"]) == (0.3, 0.5, 0.2)
    assert (cfg["delta"], cfg["lambda"], cfg["mu"]) == (0.1, 0.1, 1.0)


def test_parse_text_comments_and_types():
    vals = parse_text("# run\nalpha = 0.3  # blend\nseed=42\nchannels=4,8,8\ncrop=false\n")
    assert vals == {"alpha": 0.3, "seed": 42, "channels": (4, 8, 8), "crop": False}


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="'colour'"):
        parse_text("colour=green")


def test_constraint_checked_at_parse_time():
    with pytest.raises(ConfigError):
        RunConfig.build({"alpha": 0.5, "beta": 0.5, "gamma": 0.5})
    with pytest.raises(ConfigError):
        RunConfig.build({"classes": 1})


def test_flags_override_file():
    cfg = RunConfig.build({"seed": 1, "lr": 0.1}, {"seed": 2})
    assert cfg["seed"] == 2 and cfg["lr"] == 0.1


def test_partial_blend_rescales_rest():
    assert RunConfig.build({}, {"alpha": 1.0}).blend() == RunConfig.build({}, {"mode": "baseline"}).blend()
    b = RunConfig.build({}, {"alpha": 0.65}).blend()
    assert abs(b.beta - 0.25) < 1e-12 and abs(b.gamma - 0.1) < 1e-12


def test_mode_presets():
    for mode, (a, b, g) in {"baseline": (1, 0, 0), "vein": (0.5, 0.5, 0), "contour": (0.8, 0, 0.2),
                            "full": (0.3, 0.5, 0.2)}.items():
        w = RunConfig.build({"mode": mode}).blend()
        assert (w.alpha, w.beta, w.gamma) == (a, b, g)


# ---------------------------------------------------------------------- CLI


def test_synth_deterministic(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "a"), "--seed", "1", *SMALL]) == 0
    assert main(["synth", "--out", str(tmp_path / "b"), "--seed", "1", *SMALL]) == 0
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")
    files = [p for p in (tmp_path / "a").rglob("*") if p.is_file()]
    assert len(files) == 3 * 2 * 3 + 1


def test_synth_bad_class_count_exits_2(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--classes", "1"]) == 2
    assert "class" in capsys.readouterr().err


def test_config_file_unknown_key_exits_2(tmp_path, capsys):
    (tmp_path / "run.cfg").write_text("learning_rate=0.1\n")
    assert main(["synth", "--out", str(tmp_path), "--config", str(tmp_path / "run.cfg")]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_missing_config_file_exits_3(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--config", str(tmp_path / "none.cfg")]) == 3


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(root), "--seed", "2", *SMALL]) == 0
    return root / "manifest.tsv"


def _train(tmp_path, manifest, tag, *extra):
    ck, csv = tmp_path / f"{tag}.ckpt", tmp_path / f"{tag}.csv"
    rc = main(["train", "--manifest", str(manifest), "--out", str(ck), "--metrics", str(csv), "--epochs", "2",
               "--channels", "4,4,4", *SMALL, *extra])
    return rc, ck, csv


def test_train_outputs_and_determinism(tmp_path, dataset):
    rc, ck, csv = _train(tmp_path, dataset, "a")
    assert rc == 0
    rc, ck2, csv2 = _train(tmp_path, dataset, "b")
    assert csv.read_bytes() == csv2.read_bytes()
    assert ck.read_bytes() == ck2.read_bytes()
    assert len(csv.read_text().splitlines()) == 1 + 2


def test_train_flags_reproduce_baseline_mode(tmp_path, dataset):
    _, ck1, csv1 = _train(tmp_path, dataset, "flags", "--alpha", "1", "--delta", "0", "--lambda", "0")
    _, ck2, csv2 = _train(tmp_path, dataset, "mode", "--mode", "baseline")
    assert csv1.read_bytes() == csv2.read_bytes()
    assert ck1.read_bytes() == ck2.read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exits_4(tmp_path, dataset):
    rc, _, _ = _train(tmp_path, dataset, "boom", "--lr", "1e200")
    assert rc == 4


def test_train_missing_manifest_exits_3(tmp_path):
    assert main(["train", "--manifest", str(tmp_path / "no.tsv"), "--out", str(tmp_path / "x")]) == 3


def test_eval_prints_six_decimals(tmp_path, dataset, capsys):
    _, ck, _ = _train(tmp_path, dataset, "e")
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(ck), "--manifest", str(dataset)]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("top1=") and len(line.split("=")[1].split(".")[1]) == 6
    assert 0.0 <= float(line[5:]) <= 1.0


def test_eval_constant_model_is_one_over_k(tmp_path, dataset, capsys):
    m = Model.init(BackboneConfig(channels=(4, 4, 4), input_size=32, num_classes=3), seed=0)
    m.cls_weight.data[:] = 0.0
    save_checkpoint(m, None, tmp_path / "c.ckpt")
    assert main(["eval", "--checkpoint", str(tmp_path / "c.ckpt"), "--manifest", str(dataset)]) == 0
    assert capsys.readouterr().out.strip() == f"top1={1 / 3:.6f}"


def test_eval_missing_checkpoint_exits_3(tmp_path, dataset):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--manifest", str(dataset)]) == 3


def test_eval_corrupt_checkpoint_exits_3(tmp_path, dataset):
    (tmp_path / "bad.ckpt").write_bytes(b"NOPE")
    assert main(["eval", "--checkpoint", str(tmp_path / "bad.ckpt"), "--manifest", str(dataset)]) == 3


def test_detect_eval_perfect(tmp_path, capsys):
    (tmp_path / "gt.txt").write_text("i1 vein 0 0 10 10\ni1 contour 5 5 20 20\n")
    (tmp_path / "det.txt").write_text("i1 vein 0 0 10 10 0.9\ni1 contour 5 5 20 20 0.8\n")
    assert main(["detect-eval", str(tmp_path / "det.txt"), str(tmp_path / "gt.txt")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["ap_contour=1.000000", "ap_vein=1.000000", "map=1.000000"]


def test_detect_eval_matches_oracle(tmp_path, capsys):
    from oracles import brute_force_ap
    from mgfa.detect import read_detections, read_ground_truth

    (tmp_path / "gt.txt").write_text("a vein 0 0 12 10\na vein 4 0 12 10\nb vein 0 0 12 10\n")
    (tmp_path / "det.txt").write_text("a vein 2 0 12 10 0.7\na vein 6 0 12 10 0.7\nb vein 30 0 12 10 0.9\n"
                                      "b vein 0 0 12 10 0.2\n")
    assert main(["detect-eval", str(tmp_path / "det.txt"), str(tmp_path / "gt.txt")]) == 0
    dets = [d for c, d in read_detections(tmp_path / "det.txt")]
    gts = [g for c, g in read_ground_truth(tmp_path / "gt.txt")]
    want = brute_force_ap(dets, gts)
    assert capsys.readouterr().out.splitlines()[-1] == f"map={want:.6f}"


def test_detect_eval_malformed_line_exits_2(tmp_path, capsys):
    (tmp_path / "gt.txt").write_text("i1 vein 0 0 10 10\n")
    (tmp_path / "det.txt").write_text("# header\ni1 vein 0 0 10 10 0.9\ni1 vein 0 0 ten 10 0.9\n")
    assert main(["detect-eval", str(tmp_path / "det.txt"), str(tmp_path / "gt.txt")]) == 2
    assert ":3:" in capsys.readouterr().err


def test_cam_writes_valid_pgm(tmp_path, dataset):
    _, ck, _ = _train(tmp_path, dataset, "cam")
    img = next((dataset.parent / "images").glob("*.ppm"))
    out = tmp_path / "heat.pgm"
    assert main(["cam", "--checkpoint", str(ck), "--image", str(img), "--class-id", "1", "--out", str(out)]) == 0
    buf = out.read_bytes()
    assert buf.startswith(b"P5\n32 32\n255\n")
    assert netpbm.decode(buf).shape == (32, 32)


def test_cam_zero_classifier_all_zero_pgm(tmp_path, dataset):
    m = Model.init(BackboneConfig(channels=(4, 4, 4), input_size=32, num_classes=3), seed=0)
    m.cls_weight.data[:] = 0.0
    save_checkpoint(m, None, tmp_path / "z.ckpt")
    img = next((dataset.parent / "images").glob("*.ppm"))
    out = tmp_path / "z.pgm"
    assert main(["cam", "--checkpoint", str(tmp_path / "z.ckpt"), "--image", str(img), "--class-id", "0",
                 "--out", str(out)]) == 0
    assert not netpbm.decode(out.read_bytes()).any()


def test_cam_bad_class_exits_2(tmp_path, dataset):
    _, ck, _ = _train(tmp_path, dataset, "cls")
    img = next((dataset.parent / "images").glob("*.ppm"))
    assert main(["cam", "--checkpoint", str(ck), "--image", str(img), "--class-id", "9",
                 "--out", str(tmp_path / "o.pgm")]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mgfa", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "detect-eval" in r.stdout
    r = subprocess.run([sys.executable, "-m", "mgfa", "frobnicate"], capture_output=True, text=True)
    assert r.returncode == 2
