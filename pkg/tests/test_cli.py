import json
import subprocess
import sys

import numpy as np
import pytest

from hsaw import store
from hsaw.cli import main, read_signal
from hsaw.scene import ActivityLabel


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "small.cfg"
    p.write_text(
        "# fast settings for tests\n"
        "image_size = 32x32\n"
        "gan.epochs = 1   # one pass is enough for plumbing\n"
        "som_rows = 2\n"
        "som_cols = 2\n"
        "som_epochs = 1\n"
    )
    return p


@pytest.fixture(scope="module")
def d2(tmp_path_factory, small_cfg):
    out = tmp_path_factory.mktemp("d") / "d2"
    assert run("synth", "--scenario", 2, "--laps", 1, "--config", small_cfg, "--out", out) == 0
    return out


def test_synth_example(tmp_path):
    out = tmp_path / "d1"
    assert run("synth", "--scenario", 1, "--laps", 1, "--frames-per-segment", 16, "--seed", 7, "--out", out) == 0
    data = store.load_dataset(out)
    assert len(data) == 128
    assert data.frames.shape == (128, 1, 64, 64) and data.flows.shape == (128, 2, 64, 64)
    m = json.loads((out / "manifest.json").read_text())
    assert m["scenario"] == 1 and m["seed"] == 7 and m["count"] == 128


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    assert run("synth", "--scenario", 1, "--bogus", "--out", tmp_path) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--bogus" in err


def test_missing_subcommand_and_bad_choice(capsys):
    assert run() == 1
    assert run("synth", "--scenario", 3, "--out", "x") == 1
    assert "usage:" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    assert "gradcheck" in capsys.readouterr().out


def test_config_keys_are_honored(tmp_path, small_cfg, d2):
    data = store.load_dataset(d2)
    assert data.frames.shape[2:] == (32, 32)
    cfg = tmp_path / "c.cfg"
    cfg.write_text("seed = 11\nframes_per_segment = 8\n")
    assert run("synth", "--scenario", 1, "--config", cfg, "--out", tmp_path / "d") == 0
    m = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert m["seed"] == 11 and m["count"] == 64
    # an explicit flag wins over the file
    assert run("synth", "--scenario", 1, "--config", cfg, "--seed", 12, "--out", tmp_path / "e") == 0
    assert json.loads((tmp_path / "e" / "manifest.json").read_text())["seed"] == 12


def test_unknown_config_key_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("lapz = 3\n")
    assert run("synth", "--scenario", 1, "--config", cfg, "--out", tmp_path / "d") == 1
    assert "lapz" in capsys.readouterr().err
    cfg.write_text("no equals sign here\n")
    assert run("synth", "--scenario", 1, "--config", cfg, "--out", tmp_path / "d") == 1


def test_runtime_failures_exit_two(tmp_path, capsys):
    assert run("detect", "--model", tmp_path / "nope", "--data", tmp_path / "nada", "--out", tmp_path / "s.csv") == 2
    assert "hsaw detect" in capsys.readouterr().err
    # a bad value inside the config is a runtime failure of the command, not a parse error
    cfg = tmp_path / "c.cfg"
    cfg.write_text("laps = 0\n")
    assert run("synth", "--scenario", 1, "--config", cfg, "--out", tmp_path / "d") == 2


def test_gradcheck_subcommand(capsys):
    assert run("gradcheck", "--seeds", 1) == 0
    assert "checks passed" in capsys.readouterr().out


def test_evaluate_from_hand_written_signal(tmp_path, d2, capsys):
    data = store.load_dataset(d2)
    y = data.is_anomalous.astype(float) * 0.8 + 0.1
    y[data.labels == ActivityLabel.Curve] = 0.5
    rows = ["frame_index,raw_y,normalized_y,accepted_level,verdict"]
    rows += [f"{i},{v},{v},0,normal" for i, v in enumerate(y)]
    (tmp_path / "s.csv").write_text("\n".join(rows) + "\n")
    assert run("evaluate", "--signal", tmp_path / "s.csv", "--data", d2, "--out", tmp_path / "rpt") == 0
    rpt = tmp_path / "rpt"
    assert {p.name for p in rpt.iterdir()} == {"roc.csv", "metrics.json", "roc.svg"}
    m = json.loads((rpt / "metrics.json").read_text())
    assert m["auc"] == 1.0 and m["eer"] == 0.0 and m["curve_false_positives"] == 0
    assert "AUC 1.0000" in capsys.readouterr().out
    assert (rpt / "roc.svg").read_text().startswith("<svg")


def test_evaluate_rejects_foreign_signal(tmp_path, d2):
    (tmp_path / "s.csv").write_text("a,b\n1,2\n")
    assert run("evaluate", "--signal", tmp_path / "s.csv", "--data", d2, "--out", tmp_path / "r") == 2
    (tmp_path / "t.csv").write_text("frame_index,raw_y,normalized_y,accepted_level,verdict\n9999,0,0,0,normal\n")
    assert run("evaluate", "--signal", tmp_path / "t.csv", "--data", d2, "--out", tmp_path / "r") == 2


def build_and_detect(root, cfg, d2):
    assert run("build", "--data", d2, "--config", cfg, "--theta", "0.02", "--max-levels", 2, "--out", root / "m") == 0
    assert run("detect", "--model", root / "m", "--data", d2, "--config", cfg, "--out", root / "sig.csv") == 0
    assert run("evaluate", "--signal", root / "sig.csv", "--data", d2, "--out", root / "rpt") == 0


def test_build_detect_evaluate_flow_is_reproducible(tmp_path, small_cfg, d2):
    build_and_detect(tmp_path / "a", small_cfg, d2)
    build_and_detect(tmp_path / "b", small_cfg, d2)
    idx, y = read_signal(tmp_path / "a" / "sig.csv")
    assert np.array_equal(idx, np.arange(len(store.load_dataset(d2))))
    assert y.min() == 0 and y.max() == 1
    a_files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    b_files = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert a_files == b_files and len(a_files) > 10
    for rel in a_files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_train_base_gives_one_level(tmp_path, small_cfg, d2):
    assert run("train-base", "--data", d2, "--config", small_cfg, "--out", tmp_path / "m") == 0
    assert len(store.load_model(tmp_path / "m")) == 1


def test_bad_theta_value(tmp_path, small_cfg, d2):
    assert run("build", "--data", d2, "--config", small_cfg, "--theta", "high", "--out", tmp_path / "m") == 1


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hsaw.cli", "synth", "--scenario", "1", "--out", str(tmp_path),
                        "--frames-per-segment", "4"], capture_output=True, text=True)
    assert r.returncode == 2 and "frames_per_segment" in r.stderr
