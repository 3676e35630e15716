"""Analysis tools: expressibility against Haar, gradient-norm profiles,
norm audits and finite-difference gradient checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import statevector as sv
from .ansatz import CircuitLayout, apply_unitary, readout
from .model import QRNN, QrnnConfig, StepTrace, TaskBatch, batch_loss, run_classifier, run_copy_task, run_lm

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------- expressibility

@dataclass
class ExpressibilitySpec:
    n_qubits: int = 4
    pairs: int = 5000
    bins: int = 75
    seed: int = 0
    mode: str = "pairs"  # pairs: i.i.d. pairs; pool: all pairs of ``pairs`` states

    def validate(self):
        if self.bins < 2:
            raise ValueError("need at least 2 histogram bins")
        if self.pairs < 100:
            raise ValueError("need at least 100 fidelity pairs")
        if self.mode not in ("pairs", "pool"):
            raise ValueError("mode must be 'pairs' or 'pool'")


def haar_density(F, dim: int):
    """Density of |<a|b>|^2 for independent Haar states in dimension ``dim``."""
    F = np.asarray(F, dtype=float)
    return (dim - 1) * (1.0 - F) ** (dim - 2)


def haar_bin_mass(edges: np.ndarray, dim: int) -> np.ndarray:
    """Exact per-bin probabilities from the CDF 1 - (1 - F)^(dim - 1)."""
    tail = (1.0 - np.asarray(edges, dtype=float)) ** (dim - 1)
    return tail[:-1] - tail[1:]


def haar_states(n_qubits: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random states as normalized complex Gaussian vectors."""
    dim = 1 << n_qubits
    z = rng.standard_normal((count, dim)) + 1j * rng.standard_normal((count, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with 0 log 0 = 0; ``q`` must be positive where ``p`` is."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    nz = p > 0
    if np.any(q[nz] <= 0):
        raise ValueError("reference distribution has zero mass where the sample has mass")
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def fidelity_histogram(fids: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(np.clip(fids, 0.0, 1.0), bins=edges)
    if counts.sum() == 0:
        raise ValueError("no fidelities fell in [0, 1]")
    return counts / counts.sum(), edges


def _pair_fidelities(states_a: np.ndarray, states_b: np.ndarray) -> np.ndarray:
    return np.abs(np.sum(np.conj(states_a) * states_b, axis=-1)) ** 2


def _pool_fidelities(states: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(len(states), k=1)
    return (np.abs(np.conj(states) @ states.T) ** 2)[iu]


def circuit_states(layout: CircuitLayout, count: int, rng: np.random.Generator) -> np.ndarray:
    """U(theta)|0...0> for ``count`` angle vectors drawn uniformly from [0, 2 pi)."""
    theta = rng.uniform(0.0, TWO_PI, size=(count, layout.param_count))
    return apply_unitary(layout, theta, sv.zero_state(layout.n_qubits, count))


def sample_fidelities(spec: ExpressibilitySpec, layout: CircuitLayout | None = None) -> np.ndarray:
    """Pairwise fidelities of circuit states, or of Haar states when ``layout`` is None."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_states = 2 * spec.pairs if spec.mode == "pairs" else spec.pairs
    if layout is None:
        states = haar_states(spec.n_qubits, n_states, rng)
    else:
        if layout.n_qubits != spec.n_qubits:
            raise ValueError("layout and spec disagree on the qubit count")
        states = circuit_states(layout, n_states, rng)
    if spec.mode == "pairs":
        return _pair_fidelities(states[0::2], states[1::2])
    return _pool_fidelities(states)


@dataclass
class ExpressibilityResult:
    kl: float
    edges: np.ndarray
    empirical: np.ndarray
    haar: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lower", "empirical_mass", "haar_mass"])
            for lo, e, h in zip(self.edges[:-1], self.empirical, self.haar):
                w.writerow([repr(float(lo)), repr(float(e)), repr(float(h))])


def expressibility(spec: ExpressibilitySpec, layout: CircuitLayout | None = None) -> ExpressibilityResult:
    fids = sample_fidelities(spec, layout)
    emp, edges = fidelity_histogram(fids, spec.bins)
    haar = haar_bin_mass(edges, 1 << spec.n_qubits)
    return ExpressibilityResult(kl_divergence(emp, haar), edges, emp, haar)


def expressibility_kl(spec: ExpressibilitySpec, layout: CircuitLayout | None = None) -> float:
    """KL(empirical fidelity histogram || Haar bin mass); lower is more expressive.

    ``layout=None`` samples Haar-random states instead (a self-test of the
    reference distribution).
    """
    return expressibility(spec, layout).kl


# ---------------------------------------------------------------- gradient profile

@dataclass
class GradProfile:
    norms: np.ndarray  # batch-mean ||dL/dz_t||_2, t = 1..T
    batch_size: int

    @property
    def normalized(self) -> np.ndarray:
        return self.norms / self.norms[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean_grad_norm", "normalized"])
            for t, (g, r) in enumerate(zip(self.norms, self.normalized), start=1):
                w.writerow([t, repr(float(g)), repr(float(r))])


def grad_profile(model: QRNN, batch: TaskBatch) -> GradProfile:
    """One forward/backward pass; gradient norms at every per-step readout.

    All sequences must share one length.  Raises if the last-step gradient
    vanishes, since the curve is normalized by it.
    """
    if batch.lengths is not None and len(set(np.asarray(batch.lengths).tolist())) > 1:
        raise ValueError("grad_profile needs sequences of identical length")
    if model.config.task == "seq2seq":
        raise ValueError("grad_profile supports classify, lm and copy models")
    p = model.leaves()
    with ag.Tape() as tape:
        loss, _, trace = batch_loss(model, batch, p)
    tape.backward(loss)
    norms = trace.record_grad_norms(tape)
    if not np.all(np.isfinite(norms)):
        raise FloatingPointError("non-finite gradient norm in profile")
    if norms[-1] == 0.0:
        raise ValueError("final-step gradient norm is zero; cannot normalize")
    return GradProfile(norms, len(batch))


# ---------------------------------------------------------------- norm audit

def norm_deviation(states) -> float:
    """max_t | ||h_t||^2 - 1 | over a sequence of (batched) states."""
    return max(float(np.max(np.abs(np.asarray(sv.norm_squared(h)) - 1.0))) for h in states)


def forward_trace(model: QRNN, tokens) -> StepTrace:
    """Forward pass keeping every hidden state (no gradients)."""
    task = model.config.task
    if task == "classify":
        return run_classifier(model, tokens, keep_states=True)[1]
    if task == "copy":
        return run_copy_task(model, tokens, keep_states=True)[1]
    if task == "lm":
        return run_lm(model, tokens, keep_states=True)[3]
    raise ValueError("norm_audit supports classify, lm and copy models")


def norm_audit(model: QRNN, tokens, tamper=None) -> float:
    """Largest deviation of ||h_t||^2 from 1 along an unrolled forward pass.

    ``tamper(states)`` may edit the recorded states before measurement; it
    exists so tests can confirm that the audit notices a broken state.
    """
    states = forward_trace(model, tokens).states
    if tamper is not None:
        tamper(states)
    return norm_deviation(states)


# ---------------------------------------------------------------- gradient checks

def parameter_shift_grad(layout: CircuitLayout, theta, state, cotangent, indices) -> np.ndarray:
    """Two-term shift rule for ``E = <cotangent, readout(U(theta) state)>``.

    Exact for gates generated by a Pauli with eigenvalues +-1/2 (the RY gates
    here); CRX has a zero eigenvalue too and needs more terms.
    """
    theta = np.asarray(theta, dtype=float)
    out = []
    for j in indices:
        plus, minus = theta.copy(), theta.copy()
        plus[..., j] += np.pi / 2
        minus[..., j] -= np.pi / 2
        ep = np.sum(cotangent * readout(apply_unitary(layout, plus, state)))
        em = np.sum(cotangent * readout(apply_unitary(layout, minus, state)))
        out.append(0.5 * (ep - em))
    return np.array(out)


def relative_error(a, b, floor: float = 1e-4) -> np.ndarray:
    """|a - b| / max(|a|, |b|, floor); the floor keeps near-zero gradients from
    turning finite-difference rounding noise into large ratios."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_group: dict[str, float]
    n_checked: int


def _loss_value(model: QRNN, batch: TaskBatch) -> float:
    loss, _, _ = batch_loss(model, batch)
    return float(loss.value)


def gradient_check(model: QRNN, batch: TaskBatch, h: float = 1e-5, per_param: int = 6,
                   seed: int = 0, floor: float = 1e-4) -> GradCheckResult:
    """Central differences against the tape gradients of the mean batch loss.

    Up to ``per_param`` entries of every parameter array are probed (embedding
    rows are picked among the tokens present in the batch).
    """
    rng = np.random.default_rng(seed)
    p = model.leaves()
    with ag.Tape() as tape:
        loss, _, _ = batch_loss(model, batch, p)
    tape.backward(loss)
    present = np.unique(np.concatenate([np.ravel(batch.inputs)] +
                                       ([np.ravel(batch.targets)] if model.config.task == "seq2seq" else [])))
    per_group: dict[str, float] = {}
    checked = 0
    for name, arr in model.params.items():
        grad = tape.grad(p[name])
        flat = arr.reshape(-1)
        if name.endswith("embed"):
            rows = [r for r in present if r != model.params.frozen_rows.get(name)]
            cand = np.array([r * arr.shape[1] + c for r in rows if r < arr.shape[0] for c in range(arr.shape[1])])
        else:
            cand = np.arange(flat.size)
        pick = cand if cand.size <= per_param else rng.choice(cand, per_param, replace=False)
        worst = 0.0
        for i in pick:
            old = flat[i]
            flat[i] = old + h
            lp = _loss_value(model, batch)
            flat[i] = old - h
            lm = _loss_value(model, batch)
            flat[i] = old
            fd = (lp - lm) / (2 * h)
            worst = max(worst, float(relative_error(grad.reshape(-1)[i], fd, floor)))
            checked += 1
        per_group[name] = worst
    return GradCheckResult(max(per_group.values()), per_group, checked)


def random_check_batch(config: QrnnConfig, T: int = 5, batch: int = 2, seed: int = 0) -> TaskBatch:
    """Small random batch matching ``config.task``, for gradient checks."""
    rng = np.random.default_rng(seed)
    c = config
    ids = rng.integers(1, c.vocab_size, size=(batch, T))
    if c.task == "classify":
        return TaskBatch(ids, rng.integers(0, c.n_classes, size=batch))
    if c.task == "copy":
        return TaskBatch(ids, rng.integers(0, c.n_classes, size=(batch, T)))
    if c.task == "lm":
        return TaskBatch(ids)
    tgt = rng.integers(4, c.tgt_vocab_size, size=(batch, T))
    tgt[:, 0] = c.bos_id
    return TaskBatch(ids, tgt)
