"""Fused numba kernels for the RY/CRX hot path.

States are ``(B, 2**n)`` complex128 arrays.  A circuit is passed as parallel
int arrays ``kinds`` (0 = RY, 1 = CRX), ``targets``, ``controls`` and
``pidx`` (parameter index), with angles ``theta`` of shape ``(B, P)``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

RY, CRX = 0, 1


@njit(cache=True, inline="always")
def _insert0(k, p):
    return ((k >> p) << (p + 1)) | (k & ((1 << p) - 1))


@njit(cache=True, inline="always")
def _pair_index(k, kind, t, c):
    """k-th amplitude pair (i0, i1) of a gate; CRX pairs live on control = 1."""
    if kind == RY:
        i0 = _insert0(k, t)
    else:
        lo, hi = (t, c) if t < c else (c, t)
        i0 = _insert0(_insert0(k, lo), hi) | (1 << c)
    return i0, i0 | (1 << t)


@njit(cache=True)
def _rot(state, b, kind, t, c, cs, sn):
    n_pairs = state.shape[1] >> (1 if kind == RY else 2)
    for k in range(n_pairs):
        i0, i1 = _pair_index(k, kind, t, c)
        a0 = state[b, i0]
        a1 = state[b, i1]
        if kind == RY:
            state[b, i0] = cs * a0 - sn * a1
            state[b, i1] = sn * a0 + cs * a1
        else:
            state[b, i0] = cs * a0 - 1j * sn * a1
            state[b, i1] = cs * a1 - 1j * sn * a0


@njit(cache=True)
def rotate(state, kind, t, c, theta):
    """One RY/CRX gate with a per-sample angle ``theta`` (B,)."""
    for b in range(state.shape[0]):
        h = 0.5 * theta[b]
        _rot(state, b, kind, t, c, np.cos(h), np.sin(h))


@njit(cache=True)
def apply_circuit(state, kinds, targets, controls, pidx, theta, inverse):
    for b in range(state.shape[0]):
        n_ops = kinds.shape[0]
        for j in range(n_ops):
            g = n_ops - 1 - j if inverse else j
            h = 0.5 * theta[b, pidx[g]]
            if inverse:
                h = -h
            _rot(state, b, kinds[g], targets[g], controls[g], np.cos(h), np.sin(h))


@njit(cache=True)
def circuit_backward(psi, lam, kinds, targets, controls, pidx, theta, grad):
    """Reverse sweep: ``psi``/``lam`` enter at the circuit output and leave at its input.

    Per gate, with output-side psi and cotangent lam:
      RY:  dL/dangle = 1/2 sum Re(conj(l1) a0 - conj(l0) a1)
      CRX: dL/dangle = 1/2 sum_{control=1} Im(conj(l0) a1 + conj(l1) a0)
    Both buffers are then rotated back through the gate in the same pass.
    """
    n_ops = kinds.shape[0]
    for b in range(psi.shape[0]):
        for j in range(n_ops - 1, -1, -1):
            kind, t, c = kinds[j], targets[j], controls[j]
            h = -0.5 * theta[b, pidx[j]]
            cs, sn = np.cos(h), np.sin(h)
            n_pairs = psi.shape[1] >> (1 if kind == RY else 2)
            acc = 0.0
            for k in range(n_pairs):
                i0, i1 = _pair_index(k, kind, t, c)
                a0, a1 = psi[b, i0], psi[b, i1]
                l0, l1 = lam[b, i0], lam[b, i1]
                if kind == RY:
                    acc += (l1.real * a0.real + l1.imag * a0.imag) - (l0.real * a1.real + l0.imag * a1.imag)
                    psi[b, i0] = cs * a0 - sn * a1
                    psi[b, i1] = sn * a0 + cs * a1
                    lam[b, i0] = cs * l0 - sn * l1
                    lam[b, i1] = sn * l0 + cs * l1
                else:
                    acc += (l0.real * a1.imag - l0.imag * a1.real) + (l1.real * a0.imag - l1.imag * a0.real)
                    psi[b, i0] = cs * a0 - 1j * sn * a1
                    psi[b, i1] = cs * a1 - 1j * sn * a0
                    lam[b, i0] = cs * l0 - 1j * sn * l1
                    lam[b, i1] = cs * l1 - 1j * sn * l0
            grad[b, pidx[j]] += 0.5 * acc


@njit(cache=True)
def expectations(state, n):
    """(B, n, 3) array of <X_q>, <Y_q>, <Z_q>."""
    B, dim = state.shape
    out = np.zeros((B, n, 3))
    half = dim >> 1
    for b in range(B):
        for q in range(n):
            low = (1 << q) - 1
            qbit = 1 << q
            x = 0.0
            y = 0.0
            z = 0.0
            for k in range(half):
                i0 = ((k & ~low) << 1) | (k & low)
                a0, a1 = state[b, i0], state[b, i0 | qbit]
                # conj(a0) * a1
                re = a0.real * a1.real + a0.imag * a1.imag
                im = a0.real * a1.imag - a0.imag * a1.real
                x += re
                y += im
                z += (a0.real * a0.real + a0.imag * a0.imag) - (a1.real * a1.real + a1.imag * a1.imag)
            out[b, q, 0] = 2.0 * x
            out[b, q, 1] = 2.0 * y
            out[b, q, 2] = z
    return out


@njit(cache=True)
def readout_cotangent(state, g):
    """2 sum_{q,P} g[b, q, P] P_q |state> for Pauli cotangents ``g`` (B, n, 3)."""
    B, dim = state.shape
    n = g.shape[1]
    out = np.zeros_like(state)
    half = dim >> 1
    for b in range(B):
        for q in range(n):
            gx, gy, gz = g[b, q, 0], g[b, q, 1], g[b, q, 2]
            if gx == 0.0 and gy == 0.0 and gz == 0.0:
                continue
            low = (1 << q) - 1
            qbit = 1 << q
            for k in range(half):
                i0 = ((k & ~low) << 1) | (k & low)
                i1 = i0 | qbit
                a0, a1 = state[b, i0], state[b, i1]
                out[b, i0] += 2.0 * ((gx - 1j * gy) * a1 + gz * a0)
                out[b, i1] += 2.0 * ((gx + 1j * gy) * a0 - gz * a1)
    return out
