import numpy as np
import pytest
from scipy import integrate

from qrnn import diagnostics as diag
from qrnn.ansatz import build_ansatz14, build_ry_layer
from qrnn.model import QRNN, QrnnConfig, TaskBatch
from qrnn.tasks import CopyTaskSpec, gen_copy_dataset


def test_haar_density_normalized():
    for dim in (2, 8, 16, 256):
        val, _ = integrate.quad(diag.haar_density, 0, 1, args=(dim,), epsabs=1e-13)
        assert abs(val - 1) < 1e-10
    edges = np.linspace(0, 1, 76)
    assert abs(diag.haar_bin_mass(edges, 16).sum() - 1) < 1e-14


def test_haar_bin_mass_matches_quadrature():
    edges = np.linspace(0, 1, 11)
    mass = diag.haar_bin_mass(edges, 8)
    quad = [integrate.quad(diag.haar_density, a, b, args=(8,))[0] for a, b in zip(edges[:-1], edges[1:])]
    assert np.allclose(mass, quad, atol=1e-12)


def test_kl_divergence():
    p = np.array([0.5, 0.5, 0.0])
    assert diag.kl_divergence(p, p) == 0.0
    assert diag.kl_divergence(p, [0.25, 0.25, 0.5]) == pytest.approx(np.log(2))
    with pytest.raises(ValueError):
        diag.kl_divergence([0.5, 0.5], [1.0, 0.0])


def test_haar_self_test():
    kl = diag.expressibility_kl(diag.ExpressibilitySpec(n_qubits=3, pairs=5000, bins=75))
    assert kl < 0.05


def test_haar_fidelity_mean_monte_carlo():
    fids = diag.sample_fidelities(diag.ExpressibilitySpec(n_qubits=3, pairs=20000, seed=4))
    assert abs(fids.mean() - 1 / 8) < 0.005  # E[F] = 1/dim


def test_expressibility_ordering():
    spec = diag.ExpressibilitySpec(n_qubits=4, pairs=3000)
    rich = diag.expressibility_kl(spec, build_ansatz14(4))
    poor = diag.expressibility_kl(spec, build_ry_layer(4))
    assert rich < poor


def test_pool_mode_and_csv(tmp_path):
    spec = diag.ExpressibilitySpec(n_qubits=2, pairs=200, bins=10, mode="pool")
    fids = diag.sample_fidelities(spec, build_ansatz14(2))
    assert fids.shape == (200 * 199 // 2,)
    res = diag.expressibility(spec, build_ansatz14(2))
    res.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "bin_lower,empirical_mass,haar_mass" and len(lines) == 11
    with pytest.raises(ValueError):
        diag.ExpressibilitySpec(bins=1).validate()
    with pytest.raises(ValueError):
        diag.sample_fidelities(diag.ExpressibilitySpec(n_qubits=3), build_ansatz14(2))


def copy_model(T=20):
    m = QRNN(QrnnConfig(task="copy", n_qubits=4, hidden=6, embed_dim=4, vocab_size=10, n_classes=10))
    return m, TaskBatch(*gen_copy_dataset(CopyTaskSpec(T=T, n_test=4), "test"))


def test_grad_profile(tmp_path):
    m, batch = copy_model()
    prof = diag.grad_profile(m, batch)
    assert prof.norms.shape == (40,) and prof.normalized[-1] == 1.0
    assert np.all(np.isfinite(prof.normalized)) and np.all(prof.normalized > 0)
    prof.to_csv(tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "t,mean_grad_norm,normalized"
    with pytest.raises(ValueError):
        diag.grad_profile(m, TaskBatch(batch.inputs, batch.targets, np.array([40, 39, 40, 40])))


def test_norm_audit_detects_tampering(rng):
    m, batch = copy_model()
    assert diag.norm_audit(m, batch.inputs) < 1e-12

    def scale(states):
        states[5] = states[5] * 1.001

    assert diag.norm_audit(m, batch.inputs, tamper=scale) > 1e-3


def test_relative_error_floor():
    assert diag.relative_error(1e-9, 2e-9) == pytest.approx(1e-5)
    assert diag.relative_error(1.0, 1.1) == pytest.approx(0.1 / 1.1)


@pytest.mark.parametrize("task", ["classify", "lm", "copy", "seq2seq"])
@pytest.mark.parametrize("activation", ["leaky_relu", "gelu", "identity"])
def test_gradient_check(task, activation):
    extra = {"copy": dict(vocab_size=10, n_classes=10), "lm": dict(vocab_size=12),
             "seq2seq": dict(vocab_size=9, tgt_vocab_size=11), "classify": dict(vocab_size=5)}[task]
    cfg = QrnnConfig(task=task, n_qubits=4, hidden=5, embed_dim=3, activation=activation, **extra)
    res = diag.gradient_check(QRNN(cfg), diag.random_check_batch(cfg, 4, 2), per_param=3)
    assert res.max_rel_error < 1e-5, res.per_group
    assert any(k.endswith("embed") for k in res.per_group)

