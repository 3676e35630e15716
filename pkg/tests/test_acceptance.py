"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 7 and 10 use the copy-task checkpoint written by
``qrnn train --config configs/copy_t50.cfg --out artifacts/copy_t50``; the
run is started here if ``artifacts/copy_t50/summary.json`` is missing (about
an hour on one core).  Criterion 8 trains 15 small parity models.
"""

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from qrnn import config as cfg
from qrnn import diagnostics as diag
from qrnn import statevector as sv
from qrnn.ansatz import adjoint_backward, apply_unitary, build_ansatz14, build_ry_layer, readout
from qrnn.experiment import fit_model_config, load_datasets, train_from_config
from qrnn.model import QRNN, QrnnConfig, TaskBatch
from qrnn.tasks import CopyTaskSpec, gen_copy_dataset, random_baseline_loss
from qrnn.training import TrainRunConfig, evaluate, fit, load_checkpoint, save_checkpoint

from test_tasks import monte_carlo_baseline

ROOT = Path(__file__).resolve().parents[1]
COPY_CFG = ROOT / "configs" / "copy_t50.cfg"
COPY_DIR = ROOT / "artifacts" / "copy_t50"

RESULTS: dict[int, tuple[bool, str]] = {}


def report(num: int, ok: bool, detail: str) -> None:
    RESULTS[num] = (ok, detail)
    print(f"\nCRITERION {num:2d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


# ---------------------------------------------------------------- 1-4: closed-form contracts

def test_c01_norm_preservation():
    rng = np.random.default_rng(1)
    worst = {}
    for n in (4, 8, 14):
        layout = build_ansatz14(n)
        psi = sv.zero_state(n)
        dev = 0.0
        for _ in range(400):
            psi = apply_unitary(layout, rng.uniform(0, 2 * np.pi, layout.param_count), psi, inplace=True)
            dev = max(dev, abs(sv.norm_squared(psi) - 1.0))
        worst[n] = dev
    report(1, max(worst.values()) < 1e-9, "max | ||h_t||^2 - 1 | over 400 steps: "
           + ", ".join(f"n={n}: {d:.1e}" for n, d in worst.items()))


def test_c02_gate_goldens():
    one = np.array([0, 1], dtype=complex)
    e_ry = np.abs(sv.ry_matrix(np.pi) @ [1, 0] - one).max()
    e_rx = np.abs(sv.rx_matrix(np.pi) @ [1, 0] - (-1j) * one).max()
    # CRX(theta) with control qubit 0, target qubit 1: states with bit 0 clear are untouched
    crx = sv.full_operator(sv.rx_matrix(1.234), target=1, n_qubits=2, control=0)
    e_crx = max(np.abs(crx[:, i] - np.eye(4)[:, i]).max() for i in (0b00, 0b10))
    worst = max(e_ry, e_rx, e_crx)
    report(2, worst < 1e-12, f"RY(pi)|0>, RX(pi)|0>, CRX control-|0> errors {e_ry:.1e}, {e_rx:.1e}, {e_crx:.1e}")


def test_c03_readout_width():
    expect = {4: 12, 5: 15, 8: 24, 10: 30, 13: 39, 14: 42}
    got = {}
    for n in expect:
        got[n] = readout(sv.zero_state(n)).shape[-1]
        assert QrnnConfig(n_qubits=n).readout_dim == got[n]
    report(3, got == expect, f"readout widths {got}")


def test_c04_param_count():
    counts = {n: build_ansatz14(n).param_count for n in range(2, 15)}
    ok = all(c == 4 * n for n, c in counts.items()) and counts[4] == 16
    report(4, ok, f"ansatz-14 parameters: n=4 -> {counts[4]}, n=14 -> {counts[14]} (4n for n=2..14)")


# ---------------------------------------------------------------- 5: gradients

def test_c05_gradients():
    worst, checked = 0.0, 0
    extra = {"classify": dict(vocab_size=5), "copy": dict(vocab_size=10, n_classes=10),
             "lm": dict(vocab_size=12), "seq2seq": dict(vocab_size=9, tgt_vocab_size=11)}
    for n in range(4, 9):
        for task in ("classify", "copy", "lm", "seq2seq"):
            c = QrnnConfig(task=task, n_qubits=n, hidden=6, embed_dim=3, init_seed=n, **extra[task])
            res = diag.gradient_check(QRNN(c), diag.random_check_batch(c, T=5, batch=2, seed=n), per_param=4, seed=n)
            assert any(k.endswith("embed") for k in res.per_group)
            worst, checked = max(worst, res.max_rel_error), checked + res.n_checked
    rng = np.random.default_rng(5)
    shift_err = 0.0
    for n in range(4, 9):
        layout = build_ansatz14(n)
        theta = rng.uniform(0, 2 * np.pi, layout.param_count)
        psi = diag.haar_states(n, 1, rng)[0]
        cot = rng.standard_normal(3 * n)
        g, _ = adjoint_backward(layout, theta, psi, cot)
        ry = [op.param_index for op in layout.ops if op.kind == "RY"]
        shift_err = max(shift_err, np.abs(diag.parameter_shift_grad(layout, theta, psi, cot, ry) - g[ry]).max())
    report(5, worst < 1e-5 and shift_err < 1e-8,
           f"max relative error {worst:.2e} over {checked} entries; parameter-shift gap {shift_err:.1e}")


# ---------------------------------------------------------------- 6: baseline formula

def test_c06_copy_baseline():
    spec = CopyTaskSpec(T=200, k=10)
    value = random_baseline_loss(spec)
    mc = monte_carlo_baseline(spec, 1000)
    mc_gap = abs(mc - value) / value
    ok = abs(value - 0.0954) <= 1e-4 and mc_gap < 0.01
    report(6, ok, f"k ln(n-1)/(T+2k) at T=200 = {value:.5f} (target 0.0954 +- 0.0001); "
           f"Monte-Carlo {mc:.5f}, gap {100 * mc_gap:.2f}%")


# ---------------------------------------------------------------- 7 + 10: copy-task checkpoint

@pytest.fixture(scope="module")
def copy_run():
    summary = COPY_DIR / "summary.json"
    if not summary.exists():
        exp = cfg.load(COPY_CFG)
        train_from_config(exp, COPY_DIR)
    exp = cfg.build(cfg.parse_text((COPY_DIR / "resolved.cfg").read_text()))
    model, _ = load_checkpoint(COPY_DIR / "model.ckpt")
    return exp, model, json.loads(summary.read_text())


def test_c07_copy_learning(copy_run):
    exp, model, summary = copy_run
    data = load_datasets(exp)
    m = evaluate(model, data.test, copy_k=exp.data.copy_k)
    baseline = random_baseline_loss(CopyTaskSpec(T=exp.data.copy_T, k=exp.data.copy_k))
    seconds = 0.0
    with open(COPY_DIR / "metrics.csv") as fh:
        next(fh)
        seconds = sum(float(line.split(",")[4]) for line in fh)
    setup_ok = (exp.model.n_qubits == 8 and exp.model.activation == "leaky_relu" and exp.data.copy_T == 50
                and exp.run.batch_size == 64 and exp.run.epochs <= 100 and len(data.train) == 5000
                and len(data.test) == 1000)
    ok = setup_ok and m.loss < 0.5 * baseline and m.recall_accuracy > 0.9 and seconds <= 7200
    report(7, ok, f"test loss {m.loss:.4f} (need < {0.5 * baseline:.4f}), recall accuracy "
           f"{m.recall_accuracy:.3f} (need > 0.9), {exp.run.epochs} epochs in {seconds / 60:.0f} min")


def test_c10_gradient_profile(copy_run):
    _, model, _ = copy_run
    spec = CopyTaskSpec(T=100, k=10, n_test=32, seed=7)
    prof = diag.grad_profile(model, TaskBatch(*gen_copy_dataset(spec, "test")))
    r = prof.normalized
    ok = np.all(np.isfinite(r)) and np.all(r > 0) and r[-1] == 1.0 and len(r) == spec.length
    report(10, bool(ok), f"{len(r)} steps, normalized min {r.min():.3e}, first {r[0]:.3e}, last {r[-1]}")


# ---------------------------------------------------------------- 8: parity ablation

PARITY_SEEDS = range(5)
PARITY_EPOCHS = 8


def parity_accuracy(n_qubits: int, activation: str, seed: int, extra=()) -> float:
    exp = cfg.load(ROOT / "configs" / "parity.cfg",
                   [f"n_qubits={n_qubits}", f"activation={activation}", f"init_seed={seed}", f"seed={seed}",
                    f"epochs={PARITY_EPOCHS}", *extra])
    data = load_datasets(exp)
    model = QRNN(fit_model_config(exp.model, data))
    fit(model, data.train, exp.run)
    return evaluate(model, data.test).metric


def test_c08_parity_ablation():
    t0 = time.perf_counter()
    med = {}
    for name, n, act in (("nonlinear n=8", 8, "leaky_relu"), ("identity n=8", 8, "identity"),
                         ("identity n=4", 4, "identity")):
        med[name] = float(np.median([parity_accuracy(n, act, s) for s in PARITY_SEEDS]))
    minutes = (time.perf_counter() - t0) / 60
    ok = med["nonlinear n=8"] >= med["identity n=8"] >= med["identity n=4"] and minutes < 60
    report(8, ok, "median test accuracy " + ", ".join(f"{k}: {v:.4f}" for k, v in med.items())
           + f" ({minutes:.0f} min)")


# ---------------------------------------------------------------- 9: expressibility

def test_c09_expressibility():
    spec3 = diag.ExpressibilitySpec(n_qubits=3, pairs=5000, bins=75, seed=0)
    haar_kl = diag.expressibility_kl(spec3)
    spec4 = replace(spec3, n_qubits=4)
    kl14 = diag.expressibility_kl(spec4, build_ansatz14(4))
    kl_ry = diag.expressibility_kl(spec4, build_ry_layer(4))
    from scipy import integrate

    integral, _ = integrate.quad(diag.haar_density, 0.0, 1.0, args=(16,), epsabs=1e-13, epsrel=1e-13)
    ok = haar_kl < 0.05 and kl14 < kl_ry and abs(integral - 1) < 1e-10
    report(9, ok, f"Haar self-test KL {haar_kl:.4f}; ansatz-14 {kl14:.4f} < RY layer {kl_ry:.4f}; "
           f"density integral - 1 = {integral - 1:.1e}")


# ---------------------------------------------------------------- 11: determinism and persistence

def test_c11_determinism_and_persistence(tmp_path):
    spec = CopyTaskSpec(T=6, k=3, n_train=64, n_test=32)
    train = TaskBatch(*gen_copy_dataset(spec, "train"))
    test = TaskBatch(*gen_copy_dataset(spec, "test"))
    c = QrnnConfig(task="copy", n_qubits=4, hidden=8, embed_dim=4, vocab_size=10, n_classes=10, dropout=0.1,
                   padding_idx=-1, init_seed=3)
    finals, models = [], []
    for _ in range(2):
        model = QRNN(c)
        run = TrainRunConfig(epochs=2, batch_size=16, seed=11)
        opt = run.make_optimizer()
        hist = fit(model, train, run, opt=opt, copy_k=3)
        finals.append(hist[-1].loss)
        models.append((model, opt))
    same_loss = finals[0] == finals[1]
    model, opt = models[0]
    save_checkpoint(tmp_path / "a.ckpt", model, opt)
    loaded, opt2 = load_checkpoint(tmp_path / "a.ckpt")
    params_ok = all(np.array_equal(model.params[k], loaded.params[k]) for k in model.params)
    moments_ok = all(np.array_equal(opt.m[k], opt2.m[k]) and np.array_equal(opt.v[k], opt2.v[k]) for k in opt.m)
    eval_ok = evaluate(model, test, copy_k=3).loss == evaluate(loaded, test, copy_k=3).loss
    save_checkpoint(tmp_path / "b.ckpt", loaded, opt2)
    bytes_ok = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    ok = same_loss and params_ok and moments_ok and opt2.step == opt.step and eval_ok and bytes_ok
    report(11, ok, f"repeat-run final loss equal: {same_loss} ({finals[0]!r}); checkpoint params/moments/step "
           f"exact: {params_ok and moments_ok and opt2.step == opt.step}; eval loss equal: {eval_ok}; "
           f"re-save byte-identical: {bytes_ok}")
