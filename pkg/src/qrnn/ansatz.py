"""Fixed-layout parametrized circuit (ansatz-14) and its adjoint gradients."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from . import statevector as sv


@dataclass(frozen=True)
class GateOp:
    kind: str  # "RY" or "CRX"
    target: int
    param_index: int
    control: int | None = None

    def __post_init__(self):
        if self.kind not in ("RY", "CRX"):
            raise ValueError(f"unsupported gate kind {self.kind!r}")
        if (self.kind == "CRX") != (self.control is not None):
            raise ValueError("control is required for CRX and forbidden otherwise")
        if self.control is not None and self.control == self.target:
            raise ValueError("control and target must differ")

    def to_text(self) -> str:
        if self.kind == "RY":
            return f"RY q={self.target} p={self.param_index}"
        return f"CRX c={self.control} t={self.target} p={self.param_index}"


@dataclass(frozen=True)
class CircuitLayout:
    n_qubits: int
    ops: tuple[GateOp, ...]

    def __post_init__(self):
        indices = sorted(op.param_index for op in self.ops)
        if indices != list(range(len(self.ops))):
            raise ValueError("each parameter index must be used exactly once")
        for op in self.ops:
            wires = (op.target,) if op.control is None else (op.target, op.control)
            if any(not 0 <= w < self.n_qubits for w in wires):
                raise ValueError(f"{op.to_text()} addresses a qubit outside 0..{self.n_qubits - 1}")

    @cached_property
    def encoded(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(kinds, targets, controls, param indices) as int arrays for the kernels."""
        kinds = np.array([_kernels.RY if op.kind == "RY" else _kernels.CRX for op in self.ops], dtype=np.int64)
        targets = np.array([op.target for op in self.ops], dtype=np.int64)
        controls = np.array([0 if op.control is None else op.control for op in self.ops], dtype=np.int64)
        pidx = np.array([op.param_index for op in self.ops], dtype=np.int64)
        return kinds, targets, controls, pidx

    @property
    def param_count(self) -> int:
        return len(self.ops)

    @property
    def readout_width(self) -> int:
        return 3 * self.n_qubits

    def to_text(self) -> str:
        return "\n".join(op.to_text() for op in self.ops) + "\n"

    @classmethod
    def from_text(cls, n_qubits: int, text: str) -> "CircuitLayout":
        ops = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            kind, *fields = line.split()
            kv = dict(f.split("=", 1) for f in fields)
            if kind == "RY":
                ops.append(GateOp("RY", int(kv["q"]), int(kv["p"])))
            elif kind == "CRX":
                ops.append(GateOp("CRX", int(kv["t"]), int(kv["p"]), control=int(kv["c"])))
            else:
                raise ValueError(f"unknown gate line {line!r}")
        return cls(n_qubits, tuple(ops))


def build_ansatz14(n_qubits: int, layers: int = 1) -> CircuitLayout:
    """RY layer, CRX ring (k -> k+1, k descending), RY layer, CRX ring (k -> k-1, k ascending).

    Repeated ``layers`` times; every gate has its own parameter.
    """
    if n_qubits < 2:
        raise ValueError("ansatz-14 needs at least 2 qubits for its entangling ring")
    if layers < 1:
        raise ValueError("layers must be >= 1")
    n = n_qubits
    ops: list[GateOp] = []
    p = 0
    for _ in range(layers):
        for q in range(n):
            ops.append(GateOp("RY", q, p)); p += 1
        for k in range(n - 1, -1, -1):
            ops.append(GateOp("CRX", (k + 1) % n, p, control=k)); p += 1
        for q in range(n):
            ops.append(GateOp("RY", q, p)); p += 1
        for k in range(n):
            ops.append(GateOp("CRX", (k - 1 + n) % n, p, control=k)); p += 1
    return CircuitLayout(n, tuple(ops))


def build_ry_layer(n_qubits: int) -> CircuitLayout:
    """A single RY per qubit; product states only.  Used as a weak baseline."""
    return CircuitLayout(n_qubits, tuple(GateOp("RY", q, q) for q in range(n_qubits)))


def _check(layout: CircuitLayout, theta: np.ndarray, state: np.ndarray):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != layout.param_count:
        raise ValueError(f"theta has {theta.shape[-1]} entries, layout needs {layout.param_count}")
    if state.shape[-1] != 1 << layout.n_qubits:
        raise ValueError(f"state length {state.shape[-1]} does not match {layout.n_qubits} qubits")
    if theta.shape[:-1] != state.shape[:-1]:
        raise ValueError(f"batch shapes differ: theta {theta.shape[:-1]} vs state {state.shape[:-1]}")
    return theta


def _run(layout: CircuitLayout, theta, state: np.ndarray, inplace: bool, inverse: bool) -> np.ndarray:
    theta = _check(layout, theta, state)
    out = state if inplace else np.array(state, dtype=np.complex128, order="C", copy=True)
    flat = sv._flat(out)
    th = np.ascontiguousarray(theta.reshape(flat.shape[0], layout.param_count))
    _kernels.apply_circuit(flat, *layout.encoded, th, inverse)
    return out


def apply_unitary(layout: CircuitLayout, theta, state: np.ndarray, inplace: bool = False) -> np.ndarray:
    """U(theta)|state>.  ``theta`` has shape ``batch + (param_count,)``."""
    return _run(layout, theta, state, inplace, False)


def apply_inverse(layout: CircuitLayout, theta, state: np.ndarray, inplace: bool = False) -> np.ndarray:
    """U(theta)^dagger|state>: gates in reverse with negated angles."""
    return _run(layout, theta, state, inplace, True)


def readout(state: np.ndarray) -> np.ndarray:
    """(<X_1>, <Y_1>, <Z_1>, ..., <X_n>, <Y_n>, <Z_n>) along the last axis."""
    e = sv.single_qubit_expectations(state)
    return e.reshape(e.shape[:-2] + (-1,))


def readout_cotangent(state: np.ndarray, cot_readout: np.ndarray) -> np.ndarray:
    """Cotangent of ``sum_j g_j <P_j>`` w.r.t. the amplitudes: ``2 sum_j g_j P_j |state>``.

    Cotangents of complex amplitudes are packed as ``dL/dRe + i dL/dIm``.
    """
    n = sv.n_qubits_of(state)
    g = np.ascontiguousarray(np.broadcast_to(cot_readout, state.shape[:-1] + (3 * n,)), dtype=float)
    flat = sv._flat(np.ascontiguousarray(state, dtype=np.complex128))
    out = _kernels.readout_cotangent(flat, g.reshape(-1, n, 3))
    return out.reshape(state.shape)


def backward_from_output(layout: CircuitLayout, theta, state_out: np.ndarray, cot_state_out: np.ndarray):
    """Reverse sweep through U(theta) starting from the output state.

    Gates are undone one at a time with negated angles, so only two
    state-sized buffers are live.  Returns ``(grad_theta, cot_state_in,
    state_in)``; the inputs are not modified.
    """
    theta = _check(layout, theta, state_out)
    psi = np.array(state_out, dtype=np.complex128, order="C", copy=True)
    lam = np.array(np.broadcast_to(cot_state_out, psi.shape), dtype=np.complex128, order="C", copy=True)
    th = np.ascontiguousarray(theta.reshape(psi.reshape(-1, psi.shape[-1]).shape[0], layout.param_count))
    grad = np.zeros(th.shape)
    _kernels.circuit_backward(sv._flat(psi), sv._flat(lam), *layout.encoded, th, grad)
    return grad.reshape(theta.shape), lam, psi


def adjoint_backward(layout: CircuitLayout, theta, state_in: np.ndarray, cotangent_readout,
                     cotangent_state_out: np.ndarray | None = None):
    """Gradients of ``L = <cotangent_readout, readout(U(theta) state_in)>``.

    Returns ``(grad_theta, cotangent_state_in)``; an optional cotangent on the
    output state (e.g. from later timesteps) is added before the sweep.
    """
    out = apply_unitary(layout, theta, state_in)
    lam = readout_cotangent(out, cotangent_readout)
    if cotangent_state_out is not None:
        lam += cotangent_state_out
    grad, lam_in, _ = backward_from_output(layout, theta, out, lam)
    return grad, lam_in
