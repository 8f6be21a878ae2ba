import json

import pytest

from inttrain.cli import main


def write_cfg(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text("format_version = 1\nwidths = 32, 8, 32\niterations = 10\neval_every = 5\n"
                    "n_normal = 80\nn_anomaly = 20\nmetrics_path = m.jsonl\nweights_path = w.npz\n" + extra)
    return path


def test_table(capsys):
    assert main(["table"]) == 0
    out = capsys.readouterr().out
    assert "25/16" in out and "(0, 0, 2)" in out
    assert len([l for l in out.splitlines() if "(" in l and ")" in l]) == 12


def test_missing_config_names_path(capsys):
    assert main(["train", "/no/such/file.cfg"]) == 1
    assert "/no/such/file.cfg" in capsys.readouterr().err


def test_unknown_flag(capsys):
    assert main(["table", "--frobnicate"]) == 1
    assert main([]) == 1


@pytest.mark.parametrize("cmd", ["train", "eval", "estimate-mem", "table", "bench-matmul"])
def test_help(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_train_then_eval(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["train", str(cfg)]) == 0
    assert (tmp_path / "m.jsonl").exists() and (tmp_path / "w.npz").exists()
    capsys.readouterr()
    assert main(["eval", str(cfg), str(tmp_path / "w.npz")]) == 0
    assert "mse_normal" in json.loads(capsys.readouterr().out)


def test_eval_missing_weights(tmp_path):
    assert main(["eval", str(write_cfg(tmp_path)), str(tmp_path / "nope.npz")]) == 1


def test_bad_config_is_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("format_version = 1\nbackend = quantum\n")
    assert main(["train", str(path)]) == 1
    assert "backend" in capsys.readouterr().err


def test_runtime_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "dataset = csv\ntrain_path = missing.csv\ntest_path = missing.csv\n")
    assert main(["train", str(cfg)]) == 2
    assert "missing.csv" in capsys.readouterr().err


def test_estimate_mem(tmp_path, capsys):
    path = tmp_path / "ae.cfg"
    path.write_text("format_version = 1\nwidths = 32, 24, 24, 24, 32\nbatch_size = 32\n")
    assert main(["estimate-mem", str(path)]) == 0
    out = capsys.readouterr().out
    assert "13184" in out and "31232" in out


def test_bench(capsys):
    assert main(["bench-matmul", "--size", "8", "--reps", "2"]) == 0
    out = capsys.readouterr().out
    assert "int8 matmul" in out and "fp32 matmul" in out
    assert main(["bench-matmul", "--size", "0"]) == 1
