"""Dense statevector simulation.

States are complex128 numpy arrays of shape ``(..., 2**n)``; any leading axes
are an independent batch.  Qubit ``k`` is bit ``k`` (least significant first)
of the basis index, so a single-qubit gate on ``k`` touches amplitude pairs
that are ``2**k`` apart.  Gates are applied in place on strided views.
"""

from __future__ import annotations

import numpy as np

from . import _kernels

MAX_QUBITS = 20
NORM_ATOL = 1e-10

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)


class StateError(ValueError):
    """Raised for malformed states, gates or qubit indices."""


def ry_matrix(theta):
    """RY rotation; batched when ``theta`` is an array (shape ``theta.shape + (2, 2)``)."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0], out[..., 0, 1] = c, -s
    out[..., 1, 0], out[..., 1, 1] = s, c
    return out


def rx_matrix(theta):
    """RX rotation; batched like :func:`ry_matrix`."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0], out[..., 0, 1] = c, -1j * s
    out[..., 1, 0], out[..., 1, 1] = -1j * s, c
    return out


def zero_state(n_qubits: int, batch: int | tuple[int, ...] | None = None) -> np.ndarray:
    """|0...0>, optionally replicated over a batch."""
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise StateError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits!r}")
    if batch is None:
        batch = ()
    elif isinstance(batch, (int, np.integer)):
        batch = (int(batch),)
    state = np.zeros(tuple(batch) + (1 << int(n_qubits),), dtype=np.complex128)
    state[..., 0] = 1.0
    return state


def n_qubits_of(state: np.ndarray) -> int:
    dim = state.shape[-1]
    n = dim.bit_length() - 1
    if dim < 2 or (1 << n) != dim:
        raise StateError(f"state length {dim} is not a power of two")
    if n > MAX_QUBITS:
        raise StateError(f"{n} qubits exceeds the supported maximum of {MAX_QUBITS}")
    return n


def norm_squared(state: np.ndarray) -> np.ndarray | float:
    sq = np.sum(state.real**2 + state.imag**2, axis=-1)
    return float(sq) if np.ndim(sq) == 0 else sq


def is_normalized(state: np.ndarray, atol: float = NORM_ATOL) -> bool:
    return bool(np.all(np.abs(np.asarray(norm_squared(state)) - 1.0) <= atol))


def _check_qubit(q: int, n: int, what: str = "qubit") -> int:
    if not 0 <= q < n:
        raise StateError(f"{what} index {q} out of range for {n} qubits")
    return int(q)


def _pair(state: np.ndarray, target: int):
    """Views ``(a0, a1)`` of the amplitudes with ``target`` bit 0 / 1."""
    n = n_qubits_of(state)
    _check_qubit(target, n, "target")
    if not state.flags.c_contiguous:
        raise StateError("state buffer must be C-contiguous")
    v = state.reshape(state.shape[:-1] + (1 << (n - target - 1), 2, 1 << target))
    return v[..., 0, :], v[..., 1, :]


def _controlled_pair(state: np.ndarray, control: int, target: int):
    """Views ``(a0, a1)`` on the control=|1> subspace, split on ``target``."""
    n = n_qubits_of(state)
    _check_qubit(control, n, "control")
    _check_qubit(target, n, "target")
    if control == target:
        raise StateError("control and target must differ")
    if not state.flags.c_contiguous:
        raise StateError("state buffer must be C-contiguous")
    hi, lo = max(control, target), min(control, target)
    v = state.reshape(
        state.shape[:-1] + (1 << (n - hi - 1), 2, 1 << (hi - lo - 1), 2, 1 << lo)
    )
    # axes: (..., A, hi, B, lo, C)
    if control == hi:
        return v[..., :, 1, :, 0, :], v[..., :, 1, :, 1, :]
    return v[..., :, 0, :, 1, :], v[..., :, 1, :, 1, :]


def _coef(x, batch_ndim: int, view_ndim: int):
    """Reshape a per-sample coefficient so it broadcasts over a view."""
    x = np.asarray(x)
    if x.ndim == 0:
        return x
    if x.shape[:batch_ndim] != x.shape or x.ndim != batch_ndim:
        raise StateError(f"coefficient shape {x.shape} does not match batch rank {batch_ndim}")
    return x.reshape(x.shape + (1,) * (view_ndim - batch_ndim))


def _apply_2x2(a0, a1, gate, batch_ndim: int):
    gate = np.asarray(gate, dtype=complex)
    if gate.shape[-2:] != (2, 2):
        raise StateError(f"gate must be 2x2, got shape {gate.shape}")
    if gate.ndim == 2:
        g00, g01, g10, g11 = gate[0, 0], gate[0, 1], gate[1, 0], gate[1, 1]
    else:
        nd = a0.ndim
        g00, g01, g10, g11 = (_coef(gate[..., i, j], batch_ndim, nd) for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)))
    new0 = g00 * a0 + g01 * a1
    a1 *= g11
    a1 += g10 * a0
    a0[...] = new0


def apply_single_qubit(state: np.ndarray, gate, target: int) -> np.ndarray:
    """Apply a 2x2 ``gate`` to ``target`` in place and return ``state``.

    ``gate`` may carry the state's batch axes in front of the 2x2 block, in
    which case each sample gets its own matrix.
    """
    a0, a1 = _pair(state, target)
    _apply_2x2(a0, a1, gate, state.ndim - 1)
    return state


def apply_controlled(state: np.ndarray, gate, control: int, target: int) -> np.ndarray:
    """Apply |0><0| (x) I + |1><1| (x) gate on (control, target), in place."""
    a0, a1 = _controlled_pair(state, control, target)
    _apply_2x2(a0, a1, gate, state.ndim - 1)
    return state


def _batched_angles(state: np.ndarray, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.ascontiguousarray(np.broadcast_to(theta, state.shape[:-1]).reshape(-1))


def _flat(state: np.ndarray) -> np.ndarray:
    if not state.flags.c_contiguous or state.dtype != np.complex128:
        raise StateError("state buffer must be C-contiguous complex128")
    return state.reshape(-1, state.shape[-1])


def apply_ry(state: np.ndarray, theta, target: int) -> np.ndarray:
    """RY(theta) on ``target`` in place; ``theta`` is a scalar or per-sample array."""
    _check_qubit(target, n_qubits_of(state), "target")
    _kernels.rotate(_flat(state), _kernels.RY, target, 0, _batched_angles(state, theta))
    return state


def apply_crx(state: np.ndarray, theta, control: int, target: int) -> np.ndarray:
    """CRX(theta) with ``control`` -> ``target`` in place."""
    n = n_qubits_of(state)
    _check_qubit(control, n, "control")
    _check_qubit(target, n, "target")
    if control == target:
        raise StateError("control and target must differ")
    _kernels.rotate(_flat(state), _kernels.CRX, target, control, _batched_angles(state, theta))
    return state


_AXES = {"X": 0, "Y": 1, "Z": 2}


def _sum_tail(x: np.ndarray, batch_ndim: int):
    axes = tuple(range(batch_ndim, x.ndim))
    out = np.sum(x, axis=axes)
    return float(out) if np.ndim(out) == 0 else out


def pauli_expectation(state: np.ndarray, axis: str, qubit: int):
    """<psi|P_qubit|psi> for P in {X, Y, Z}.  Read-only on ``state``."""
    axis = axis.upper()
    if axis not in _AXES:
        raise StateError(f"unknown Pauli axis {axis!r}")
    a0, a1 = _pair(state, qubit)
    nb = state.ndim - 1
    if axis == "Z":
        return _sum_tail(a0.real**2 + a0.imag**2 - a1.real**2 - a1.imag**2, nb)
    cross = np.conj(a0) * a1
    if axis == "X":
        return _sum_tail(2.0 * cross.real, nb)
    return _sum_tail(2.0 * cross.imag, nb)


def single_qubit_expectations(state: np.ndarray) -> np.ndarray:
    """All per-qubit (<X>, <Y>, <Z>) packed as ``(..., n, 3)``."""
    n = n_qubits_of(state)
    out = _kernels.expectations(_flat(np.ascontiguousarray(state, dtype=np.complex128)), n)
    return out.reshape(state.shape[:-1] + (n, 3))


def inner_product(a: np.ndarray, b: np.ndarray):
    """<a|b>, conjugate-linear in ``a``; batched over leading axes."""
    if a.shape[-1] != b.shape[-1]:
        raise StateError(f"state sizes differ: {a.shape[-1]} vs {b.shape[-1]}")
    out = np.sum(np.conj(a) * b, axis=-1)
    return complex(out) if np.ndim(out) == 0 else out


def fidelity(a: np.ndarray, b: np.ndarray):
    return np.abs(inner_product(a, b)) ** 2


def full_operator(gate, target: int, n_qubits: int, control: int | None = None) -> np.ndarray:
    """Explicit ``2**n x 2**n`` matrix of a (controlled) single-qubit gate.

    Built from Kronecker products, independently of the strided kernels.
    Only meant for small ``n``.
    """
    if n_qubits > 5:
        raise StateError("full_operator is restricted to n <= 5")
    gate = np.asarray(gate, dtype=complex)

    def kron_chain(ops):
        # qubit n-1 is the most significant bit -> leftmost factor
        out = np.array([[1.0 + 0j]])
        for q in reversed(range(n_qubits)):
            out = np.kron(out, ops.get(q, IDENTITY))
        return out

    if control is None:
        return kron_chain({target: gate})
    p0 = np.diag([1.0, 0.0]).astype(complex)
    p1 = np.diag([0.0, 1.0]).astype(complex)
    return kron_chain({control: p0}) + kron_chain({control: p1, target: gate})
