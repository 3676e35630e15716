"""A small tape-based reverse-mode differentiation engine over numpy arrays.

Operations record themselves on the active :class:`Tape` (entered with a
``with`` block).  With no active tape nothing is recorded, which is how
evaluation runs.  Gradients live on the tape, not on the tensors, so several
tapes can be differentiated independently (e.g. one per batch chunk).

Complex tensors (quantum states) carry cotangents packed as
``dL/dRe + i dL/dIm``.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from . import ansatz

_ACTIVE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("qrnn_tape", default=None)

ACTIVATIONS = ("relu", "leaky_relu", "gelu", "glu", "tanh", "identity")


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "requires_grad", "name", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value)
        if not np.iscomplexobj(self.value):
            self.value = self.value.astype(float, copy=False)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return mul(self, as_tensor(-1.0))

    def __sub__(self, other):
        return add(self, -as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def detach(x: Tensor) -> Tensor:
    return Tensor(x.value.copy())


@dataclass
class _Node:
    inputs: tuple[Tensor, ...]
    outputs: tuple[Tensor, ...]
    backward: Callable[..., Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._grads: dict[int, np.ndarray] = {}
        self._keep: dict[int, Tensor] = {}
        self._token = None
        self._done = False

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.reset(self._token)
        self._token = None
        return False

    def record(self, inputs, outputs, backward):
        if self._done:
            raise TapeError("tape already differentiated; record a new forward pass")
        self.nodes.append(_Node(tuple(inputs), tuple(outputs), backward))

    def _accumulate(self, t: Tensor, g):
        if g is None or not t.requires_grad:
            return
        key = id(t)
        if key in self._grads:
            self._grads[key] = self._grads[key] + g
        else:
            self._grads[key] = np.asarray(g)
            self._keep[key] = t

    def backward(self, loss: Tensor, seed=None) -> "Tape":
        """Reverse sweep from ``loss``; each node is visited exactly once."""
        if self._done:
            raise TapeError("backward already ran on this tape")
        self._done = True
        if seed is None:
            if loss.value.size != 1:
                raise TapeError("backward needs a scalar loss or an explicit seed")
            seed = np.ones_like(loss.value)
        self._accumulate(loss, np.asarray(seed, dtype=loss.value.dtype))
        for node in reversed(self.nodes):
            gouts = [self._grads.get(id(o)) for o in node.outputs]
            if all(g is None for g in gouts):
                continue
            gins = node.backward(*gouts)
            for t, g in zip(node.inputs, gins):
                self._accumulate(t, g)
        return self

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the loss w.r.t. ``t`` (zeros when ``t`` was not reached)."""
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros_like(t.value)
        return g


def active_tape() -> Tape | None:
    return _ACTIVE.get()


def _track(inputs: Sequence[Tensor], outputs: Sequence[Tensor], backward) -> None:
    tape = _ACTIVE.get()
    if tape is None or not any(t.requires_grad for t in inputs):
        return
    for o in outputs:
        o.requires_grad = True
    tape.record(inputs, outputs, backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value + b.value)
    _track((a, b), (out,), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = Tensor(av * bv)
    _track((a, b), (out,), lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))
    return out


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W.T + b`` over the last axis of ``x``."""
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"affine: input width {x.shape[-1]} != weight columns {W.shape[1]}")
    if b is not None and b.shape != (W.shape[0],):
        raise ValueError(f"affine: bias shape {b.shape} != ({W.shape[0]},)")
    xv, Wv = x.value, W.value
    y = xv @ Wv.T
    if b is not None:
        y = y + b.value
    out = Tensor(y)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gW = g2.T @ xv.reshape(-1, xv.shape[-1])
        gb = g2.sum(axis=0) if b is not None else None
        return g @ Wv, gW, gb

    _track((x, W) if b is None else (x, W, b), (out,), backward)
    return out


def _sigmoid(x):
    return special.expit(x)


def activation(x: Tensor, kind: str, negative_slope: float = 0.01) -> Tensor:
    """Elementwise (or, for GLU, gated over the last axis) nonlinearity."""
    kind = kind.lower()
    v = x.value
    if kind == "identity":
        return x
    if kind == "relu":
        mask = v > 0
        out = Tensor(np.where(mask, v, 0.0))
        _track((x,), (out,), lambda g: (g * mask,))
    elif kind == "leaky_relu":
        slope = np.where(v > 0, 1.0, negative_slope)
        out = Tensor(v * slope)
        _track((x,), (out,), lambda g: (g * slope,))
    elif kind == "gelu":
        cdf = special.ndtr(v)
        out = Tensor(v * cdf)
        pdf = np.exp(-0.5 * v * v) / np.sqrt(2 * np.pi)
        _track((x,), (out,), lambda g: (g * (cdf + v * pdf),))
    elif kind == "tanh":
        t = np.tanh(v)
        out = Tensor(t)
        _track((x,), (out,), lambda g: (g * (1.0 - t * t),))
    elif kind == "sigmoid":
        s = _sigmoid(v)
        out = Tensor(s)
        _track((x,), (out,), lambda g: (g * s * (1.0 - s),))
    elif kind == "glu":
        d = v.shape[-1]
        if d % 2:
            raise ValueError(f"GLU needs an even last dimension, got {d}")
        a, b = v[..., : d // 2], v[..., d // 2:]
        s = _sigmoid(b)
        out = Tensor(a * s)
        _track((x,), (out,), lambda g: (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=-1),))
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return out


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = Tensor(np.concatenate([x.value for x in xs], axis=axis))
    ax = axis % out.value.ndim
    bounds = np.cumsum([x.shape[ax] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    _track(xs, (out,), backward)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.value.reshape(shape))
    _track((x,), (out,), lambda g: (g.reshape(x.shape),))
    return out


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = Tensor(np.stack([x.value for x in xs], axis=axis))
    ax = axis % out.value.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(xs)))

    _track(xs, (out,), backward)
    return out


def select_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Per-sample gather along axis 1: ``out[b] = x[b, index[b]]``."""
    index = np.asarray(index, dtype=np.intp)
    rows = np.arange(x.shape[0])
    out = Tensor(x.value[rows, index])

    def backward(g):
        gx = np.zeros_like(x.value)
        gx[rows, index] = g
        return (gx,)

    _track((x,), (out,), backward)
    return out


def embedding(table: Tensor, ids, padding_idx: int | None = 0) -> Tensor:
    """Row lookup; the padding row is returned as zeros and never receives gradient."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for vocabulary of {table.shape[0]}")
    vals = table.value[ids]
    if padding_idx is not None:
        vals = np.where((ids == padding_idx)[..., None], 0.0, vals)
    out = Tensor(vals)

    def backward(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        if padding_idx is not None:
            gt[padding_idx] = 0.0
        return (gt,)

    _track((table,), (out,), backward)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or no generator is given."""
    if rate <= 0.0 or rng is None:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(mask))


# ---------------------------------------------------------------- losses

def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """``sum_i w_i * CE(logits_i, targets_i)`` as a scalar.

    ``weights`` defaults to 1 per row; pass ``1/count`` for a mean and zeros to
    mask positions out.
    """
    targets = np.asarray(targets, dtype=np.intp)
    C = logits.shape[-1]
    if C < 2:
        raise ValueError("need at least two classes")
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} != logits batch shape {logits.shape[:-1]}")
    if targets.size and (targets.min() < 0 or targets.max() >= C):
        raise IndexError(f"target class out of range [0, {C})")
    w = np.ones(targets.shape) if weights is None else np.broadcast_to(np.asarray(weights, float), targets.shape)
    logp = log_softmax(logits.value)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    out = Tensor(np.asarray(-(w * picked).sum()))

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], -1) - 1.0, -1)
        return (g * w[..., None] * grad,)

    _track((logits,), (out,), backward)
    return out


def masked_softmax(scores: Tensor, mask) -> Tensor:
    """Softmax over the last axis; ``mask`` False positions get weight exactly 0."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if not mask.any(axis=-1).all():
        raise ValueError("every row needs at least one unmasked position")
    s = np.where(mask, scores.value, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(s), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    _track((scores,), (out,), backward)
    return out


def weighted_sum(weights: Tensor, values: Tensor) -> Tensor:
    """``out[b] = sum_t weights[b, t] * values[b, t]`` for values ``(B, T, d)``."""
    wv, vv = weights.value, values.value
    out = Tensor(np.einsum("bt,btd->bd", wv, vv))
    _track((weights, values), (out,), lambda g: (np.einsum("bd,btd->bt", g, vv), wv[..., None] * g[:, None, :]))
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.value.sum()))
    _track((x,), (out,), lambda g: (np.broadcast_to(g, x.shape).copy(),))
    return out


# ---------------------------------------------------------------- quantum

def quantum_step(layout: "ansatz.CircuitLayout", theta: Tensor, state: Tensor) -> tuple[Tensor, Tensor]:
    """``h = U(theta) state``, ``z = readout(h)``; backward runs the adjoint sweep.

    The state cotangent flows to the previous timestep, so chaining steps
    differentiates through the whole quantum trajectory.
    """
    h = ansatz.apply_unitary(layout, theta.value, state.value)
    z = ansatz.readout(h)
    h_t, z_t = Tensor(h), Tensor(z)

    def backward(g_h, g_z):
        lam = np.zeros_like(h) if g_h is None else np.array(g_h, dtype=complex)
        if g_z is not None:
            lam += ansatz.readout_cotangent(h, g_z)
        g_theta, g_state, _ = ansatz.backward_from_output(layout, theta.value, h, lam)
        return g_theta, g_state

    _track((theta, state), (h_t, z_t), backward)
    return h_t, z_t
