import json
import subprocess
import sys

import numpy as np
import pytest

from qrnn import cli
from qrnn import config as cfg


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_config_text_round_trip():
    exp = cfg.load(overrides=["n_qubits=5", "dropout=0.25", "decoupled_wd=true", "dataset=parity"])
    assert exp.model.n_qubits == 5 and exp.run.decoupled_wd and exp.data.dataset == "parity"
    again = cfg.build(cfg.parse_text(exp.to_text()))
    assert again == exp


def test_config_errors():
    with pytest.raises(cfg.ConfigError, match="unknown config key 'qubits'"):
        cfg.parse_text("qubits = 4")
    with pytest.raises(cfg.ConfigError, match="not a valid int"):
        cfg.build({"n_qubits": "four"})
    with pytest.raises(cfg.ConfigError):
        cfg.build({"batch_size": "0"})
    with pytest.raises(cfg.ConfigError):
        cfg.parse_text("just words")


def test_unknown_key_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "info", "--set", "bogus=1")
    assert code == 1 and err.startswith("ERROR 1:") and "bogus" in err
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_qubits = 4\nlayres = 2\n")
    code, _, err = run(capsys, "train", "--config", bad, "--out", tmp_path / "o")
    assert code == 1 and "layres" in err


def test_usage_error(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 1 and "ERROR 1" in err


def test_help_lists_every_key():
    out = subprocess.run([sys.executable, "-m", "qrnn", "train", "--help"], capture_output=True, text=True,
                         check=True).stdout
    for key in cfg.KEYS:
        assert key in out


def test_info_counts(capsys):
    code, out, _ = run(capsys, "info", "--set", "n_qubits=8", "--set", "embed_dim=100", "--set", "hidden=33",
                       "--set", "vocab_size=1000")
    rep = json.loads(out)
    assert code == 0 and rep["total"] == 5263 and rep["readout_width"] == 24 and rep["circuit_parameters"] == 32


def test_gen_data_train_eval(capsys, tmp_path):
    base = ["--set", "task=copy", "--set", "copy_T=3", "--set", "copy_k=2", "--set", "n_train=16",
            "--set", "n_test=8", "--set", "n_qubits=3", "--set", "hidden=4", "--set", "embed_dim=3"]
    data = tmp_path / "data"
    code, _, _ = run(capsys, "gen-data", *base, "--out", data)
    assert code == 0 and (data / "manifest.json").exists() and (data / "train.inputs.txt").exists()
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "train", *base, "--set", "epochs=2", "--set", "batch_size=8",
                          "--set", f"data_dir={data}", "--seed", 3, "--out", out)
    assert code == 0
    summary = json.loads(stdout)
    for f in ("metrics.csv", "model.ckpt", "summary.json", "resolved.cfg"):
        assert (out / f).exists()
    assert "init_seed = 3" in (out / "resolved.cfg").read_text()
    code, stdout, _ = run(capsys, "eval", *base, "--checkpoint", out / "model.ckpt", "--out", tmp_path / "ev")
    assert code == 0 and json.loads(stdout)["test_loss"] == summary["test_loss"]

    code, stdout, _ = run(capsys, "gradprofile", "--checkpoint", out / "model.ckpt", "--T", 4, "--batch-size", 2,
                          "--out", tmp_path / "gp")
    assert code == 0 and json.loads(stdout)["normalized_last"] == 1.0
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "missing.ckpt", "--out", tmp_path / "ev")
    assert code == 2 and "ERROR 2" in err
    (tmp_path / "junk.ckpt").write_bytes(b"nope")
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "junk.ckpt", "--out", tmp_path / "ev")
    assert code == 1 and "magic" in err


def test_diagnostic_commands(capsys, tmp_path):
    code, out, _ = run(capsys, "expressibility", "--n-qubits", 2, "--pairs", 500, "--bins", 20,
                       "--out", tmp_path / "ex")
    assert code == 0 and float(out) >= 0 and (tmp_path / "ex" / "expressibility.csv").exists()
    code, out, _ = run(capsys, "gradcheck", "--n-qubits", 3, "--T", 3)
    assert code == 0 and "max_rel_error" in out
    code, out, _ = run(capsys, "norm-audit", "--n-qubits", 4, "--T", 50)
    assert code == 0


def test_training_divergence_exit_code(capsys, tmp_path, monkeypatch):
    from qrnn import training

    def boom(*a, **k):
        raise training.NonFiniteError("non-finite gradient for w at batch 0")

    monkeypatch.setattr(training, "adam_step", boom)
    code, _, err = run(capsys, "train", "--set", "task=copy", "--set", "copy_T=2", "--set", "copy_k=1",
                       "--set", "n_train=4", "--set", "n_test=2", "--set", "n_qubits=2", "--set", "epochs=1",
                       "--out", tmp_path / "o")
    assert code == 2 and "batch 0" in err
