import struct

import numpy as np
import pytest

from qrnn.controller import ParamStore
from qrnn.model import QRNN, QrnnConfig, TaskBatch, batch_loss
from qrnn.tasks import CopyTaskSpec, gen_copy_dataset
from qrnn.training import (AdamState, CheckpointError, NonFiniteError, TrainRunConfig, adam_step,
                           compute_gradients, evaluate, fit, load_checkpoint, save_checkpoint)


def store(**arrays):
    s = ParamStore()
    for k, v in arrays.items():
        s.add(k, np.array(v, dtype=float))
    return s


def test_adam_first_step_by_hand():
    p = store(w=[1.0, -2.0])
    st = AdamState(weight_decay=0.0)
    adam_step(p, {"w": np.array([0.5, -0.25])}, st)
    # m_hat = g, v_hat = g^2, so each entry moves by lr * sign(g)
    assert np.allclose(p["w"], [1.0 - 1e-3, -2.0 + 1e-3], atol=1e-12)
    assert st.step == 1
    assert np.allclose(st.m["w"], [0.05, -0.025]) and np.allclose(st.v["w"], [0.00025, 0.0000625])


def test_adam_coupled_weight_decay():
    p = store(w=[2.0])
    st = AdamState(weight_decay=0.1, lr=0.01)
    adam_step(p, {"w": np.array([0.0])}, st)
    g = 0.1 * 2.0
    assert np.allclose(st.m["w"], 0.1 * g)
    assert p["w"][0] == pytest.approx(2.0 - 0.01)


def test_adam_decoupled_weight_decay():
    p = store(w=[2.0])
    st = AdamState(weight_decay=0.1, lr=0.01, decoupled=True)
    adam_step(p, {"w": np.array([0.0])}, st)
    assert st.m["w"][0] == 0.0
    assert p["w"][0] == pytest.approx(2.0 * (1 - 0.001))


def test_zero_gradient_is_a_no_op_and_moments_decay():
    p = store(w=[0.3])
    st = AdamState(weight_decay=0.0)
    adam_step(p, {"w": np.zeros(1)}, st)
    assert p["w"][0] == 0.3
    adam_step(p, {"w": np.array([1.0])}, st)
    m1, v1 = st.m["w"].copy(), st.v["w"].copy()
    adam_step(p, {"w": np.zeros(1)}, st)
    assert st.m["w"][0] == pytest.approx(0.9 * m1[0]) and st.v["w"][0] == pytest.approx(0.999 * v1[0])


def test_nan_gradient_halts_with_batch_index():
    p = store(w=[1.0])
    st = AdamState()
    with pytest.raises(NonFiniteError, match="batch 7"):
        adam_step(p, {"w": np.array([np.nan])}, st, batch_index=7)
    assert p["w"][0] == 1.0 and st.step == 0


def test_padding_row_stays_zero(rng):
    m = QRNN(QrnnConfig(vocab_size=6, n_qubits=3, hidden=4, embed_dim=3))
    x = np.array([[1, 2, 0, 0], [3, 4, 5, 0]])
    batch = TaskBatch(x, np.array([0, 1]), np.array([2, 3]))
    st = AdamState(weight_decay=0.0, lr=0.1)
    for _ in range(3):
        grads, _ = compute_gradients(m, batch)
        adam_step(m.params, grads, st)
    assert np.all(m.params["embed"][0] == 0.0)
    assert np.any(m.params["embed"][1] != 0.0)


def copy_setup(dropout=0.0, seed=0):
    spec = CopyTaskSpec(T=4, k=3, n_train=24, n_test=8)
    cfg = QrnnConfig(task="copy", n_qubits=3, hidden=6, embed_dim=4, vocab_size=10, n_classes=10,
                     dropout=dropout, init_seed=seed)
    return QRNN(cfg), TaskBatch(*gen_copy_dataset(spec, "train")), TaskBatch(*gen_copy_dataset(spec, "test"))


@pytest.mark.parametrize("dropout", [0.0, 0.2])
def test_training_is_deterministic(dropout):
    losses = []
    for _ in range(2):
        m, tr, te = copy_setup(dropout)
        hist = fit(m, tr, TrainRunConfig(epochs=2, batch_size=8, seed=5), te, copy_k=3)
        losses.append([h.loss for h in hist])
    assert losses[0] == losses[1]


def test_threads_match_single_thread_without_dropout():
    m, tr, _ = copy_setup()
    g1, s1 = compute_gradients(m, tr, threads=1, copy_k=3)
    g4, s4 = compute_gradients(m, tr, threads=4, copy_k=3)
    for k in g1:
        assert np.allclose(g1[k], g4[k], rtol=1e-12, atol=1e-15)
    assert s1.loss_sum == pytest.approx(s4.loss_sum, rel=1e-13)


def test_evaluation_is_reproducible_and_dropout_free():
    m, _, te = copy_setup(dropout=0.5)
    a, b = evaluate(m, te, copy_k=3), evaluate(m, te, copy_k=3)
    assert a.loss == b.loss
    c = evaluate(m, te, batch_size=3, copy_k=3)
    assert c.loss == pytest.approx(a.loss, rel=1e-13)


def test_training_lowers_loss():
    m, tr, te = copy_setup()
    before = evaluate(m, tr, copy_k=3).loss
    fit(m, tr, TrainRunConfig(epochs=3, batch_size=8, lr=1e-2), copy_k=3)
    assert evaluate(m, tr, copy_k=3).loss < before


def test_nan_parameter_halts_training():
    m, tr, _ = copy_setup()
    m.params["vocab.b"][0] = np.nan
    with pytest.raises(NonFiniteError, match="batch 0"):
        fit(m, tr, TrainRunConfig(epochs=1, batch_size=8), copy_k=3)


def trained(tmp_path):
    m, tr, te = copy_setup()
    opt = TrainRunConfig().make_optimizer()
    fit(m, tr, TrainRunConfig(epochs=1, batch_size=8), opt=opt, copy_k=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m, opt)
    return m, opt, te, path


def test_checkpoint_round_trip(tmp_path):
    m, opt, te, path = trained(tmp_path)
    m2, opt2 = load_checkpoint(path)
    assert m2.config == m.config and opt2.step == opt.step and opt2.hyper() == opt.hyper()
    for k in m.params:
        assert np.array_equal(m.params[k], m2.params[k])
        assert np.array_equal(opt.m[k], opt2.m[k]) and np.array_equal(opt.v[k], opt2.v[k])
    assert evaluate(m, te, copy_k=3).loss == evaluate(m2, te, copy_k=3).loss
    again = tmp_path / "again.ckpt"
    save_checkpoint(again, m2, opt2)
    assert again.read_bytes() == path.read_bytes()


def test_resume_matches_uninterrupted(tmp_path):
    m, tr, _ = copy_setup()
    opt = TrainRunConfig().make_optimizer()
    fit(m, tr, TrainRunConfig(epochs=1, batch_size=8, seed=1), opt=opt, copy_k=3)
    save_checkpoint(tmp_path / "a.ckpt", m, opt)
    m2, opt2 = load_checkpoint(tmp_path / "a.ckpt")
    fit(m, tr, TrainRunConfig(epochs=1, batch_size=8, seed=2), opt=opt, copy_k=3)
    fit(m2, tr, TrainRunConfig(epochs=1, batch_size=8, seed=2), opt=opt2, copy_k=3)
    for k in m.params:
        assert np.array_equal(m.params[k], m2.params[k])


def test_checkpoint_corruption(tmp_path):
    m, opt, _, path = trained(tmp_path)
    data = path.read_bytes()
    bad = tmp_path / "bad.ckpt"
    cases = {
        "magic": b"XXXX" + data[4:],
        "version": data[:4] + struct.pack("<I", 99) + data[8:],
        "digest": data[:8] + bytes(32) + data[40:],
        "truncated": data[:-5],
        "trailing": data + b"\0",
    }
    for what, blob in cases.items():
        bad.write_bytes(blob)
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)
    other = QrnnConfig(task="copy", n_qubits=4, hidden=6, embed_dim=4, vocab_size=10, n_classes=10)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected=other)


def test_checkpoint_shape_mismatch(tmp_path):
    m, opt, _, path = trained(tmp_path)
    m.params.arrays["head.W" if "head.W" in m.params else "vocab.W"] = np.zeros((2, 2))
    save_checkpoint(tmp_path / "x.ckpt", m, AdamState())
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(tmp_path / "x.ckpt")


def test_run_config_validation():
    for bad in (dict(batch_size=0), dict(epochs=-1), dict(threads=0)):
        with pytest.raises(ValueError):
            TrainRunConfig(**bad).validate()


@pytest.mark.slow
def test_toy_seq2seq_copy_learns(tmp_path):
    from pathlib import Path

    from qrnn import config as cfg
    from qrnn.experiment import train_from_config

    exp = cfg.load(Path(__file__).resolve().parents[1] / "configs" / "toy_seq2seq.cfg")
    model, hist = train_from_config(exp, tmp_path)
    final = [h for h in hist if h.split == "test"][-1]
    assert final.metric > 0.95
