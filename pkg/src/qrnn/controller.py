"""Classical parts of the hybrid model: parameters, the controller network,
task heads and additive attention."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class ParamStore:
    """Named float64 parameter arrays, in insertion order.

    ``leaves()`` wraps every array in a fresh gradient-tracking tensor for one
    forward pass; the arrays themselves are updated in place by the optimizer.
    """

    def __init__(self):
        self.arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.frozen_rows: dict[str, int] = {}

    def add(self, name: str, array: np.ndarray, frozen_row: int | None = None) -> np.ndarray:
        if name in self.arrays:
            raise KeyError(f"duplicate parameter {name!r}")
        self.arrays[name] = np.ascontiguousarray(array, dtype=np.float64)
        if frozen_row is not None:
            self.frozen_rows[name] = frozen_row
            self.arrays[name][frozen_row] = 0.0
        return self.arrays[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def leaves(self) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=True, name=k) for k, v in self.arrays.items()}

    def count(self, prefix: str | None = None, exclude: tuple[str, ...] = ()) -> int:
        return sum(
            v.size for k, v in self.arrays.items()
            if (prefix is None or k.startswith(prefix)) and not k.startswith(exclude)
        )

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self.arrays.items():
            out.arrays[k] = v.copy()
        out.frozen_rows = dict(self.frozen_rows)
        return out


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def _pre_width(width: int, activation: str) -> int:
    # GLU halves its input, so the layer in front of it projects to twice the width.
    return 2 * width if activation == "glu" else width


def add_affine(store: ParamStore, rng, name: str, fan_in: int, fan_out: int, bias: bool = True):
    store.add(f"{name}.W", xavier_uniform(rng, fan_out, fan_in))
    if bias:
        store.add(f"{name}.b", np.zeros(fan_out))


def add_controller(store: ParamStore, rng, name: str, in_width: int, hidden: int,
                   n_angles: int, activation: str):
    """W1: hidden x (feedback + embedding), W2: angles x hidden."""
    add_affine(store, rng, f"{name}.l1", in_width, _pre_width(hidden, activation))
    add_affine(store, rng, f"{name}.l2", hidden, n_angles)


def add_embedding(store: ParamStore, rng, name: str, vocab: int, width: int, padding_idx: int | None = 0):
    store.add(name, xavier_uniform(rng, vocab, width), frozen_row=padding_idx)


def controller_forward(p: dict[str, Tensor], name: str, z_prev: Tensor, x_t: Tensor,
                       activation: str, negative_slope: float = 0.01) -> Tensor:
    """theta_t = W2 phi(W1 (z_prev : x_t) + b1) + b2.  Angles are left unwrapped."""
    u = ag.concat([z_prev, x_t], axis=-1)
    v = ag.activation(ag.affine(u, p[f"{name}.l1.W"], p[f"{name}.l1.b"]), activation, negative_slope)
    return ag.affine(v, p[f"{name}.l2.W"], p[f"{name}.l2.b"])


def classify_final(p: dict[str, Tensor], z_T: Tensor, name: str = "head") -> Tensor:
    return ag.affine(z_T, p[f"{name}.W"], p[f"{name}.b"])


def readout_transform(p: dict[str, Tensor], z_t: Tensor, activation: str,
                      negative_slope: float = 0.01, name: str = "readout") -> Tensor:
    """y_t = phi(A z_t + a); passes ``z_t`` through when the model has no transform."""
    if f"{name}.W" not in p:
        return z_t
    return ag.activation(ag.affine(z_t, p[f"{name}.W"], p[f"{name}.b"]), activation, negative_slope)


def lm_step_head(p: dict[str, Tensor], z_t: Tensor, activation: str,
                 negative_slope: float = 0.01) -> tuple[Tensor, Tensor]:
    """Returns ``(y_t, logits)``; ``y_t`` is also the next step's feedback."""
    y = readout_transform(p, z_t, activation, negative_slope)
    return y, ag.affine(y, p["vocab.W"], p["vocab.b"])


def attention_keys(p: dict[str, Tensor], enc_outputs: Tensor, name: str = "attn") -> Tensor:
    """Encoder half of the score network, computed once per source sequence."""
    return ag.affine(enc_outputs, p[f"{name}.We"], p[f"{name}.b"])


def attention_step(p: dict[str, Tensor], dec_state: Tensor, enc_outputs: Tensor, mask,
                   keys: Tensor | None = None, name: str = "attn") -> tuple[Tensor, Tensor]:
    """Additive attention.

    score_j = v . tanh(Wd dec + We enc_j + b), softmax over unmasked j, and the
    context is the weighted sum of ``enc_outputs``.  Shapes: ``dec_state``
    (B, r), ``enc_outputs`` (B, T, m), ``mask`` (B, T).
    """
    if keys is None:
        keys = attention_keys(p, enc_outputs, name)
    q = ag.affine(dec_state, p[f"{name}.Wd"])
    B, a = q.shape
    hidden = ag.activation(ag.add(keys, ag.reshape(q, (B, 1, a))), "tanh")
    scores = ag.affine(hidden, p[f"{name}.v"])
    scores = ag.reshape(scores, scores.shape[:-1])
    weights = ag.masked_softmax(scores, mask)
    return ag.weighted_sum(weights, enc_outputs), weights


# ---------------------------------------------------------------- accounting

def controller_param_count(in_width: int, hidden: int, n_angles: int, activation: str = "relu") -> int:
    pre = _pre_width(hidden, activation)
    return pre * in_width + pre + n_angles * hidden + n_angles


def classifier_param_count(n_qubits: int, embed_dim: int, hidden: int, n_classes: int,
                           activation: str = "relu", layers: int = 1) -> int:
    """Trainable parameters of the sequence classifier, embedding table excluded."""
    m, d = 3 * n_qubits, 4 * n_qubits * layers
    return controller_param_count(m + embed_dim, hidden, d, activation) + n_classes * m + n_classes


def infer_hidden_width(target: int, n_qubits: int, embed_dim: int, n_classes: int,
                       activation: str = "relu", layers: int = 1) -> int:
    """Hidden width whose classifier parameter count is closest to ``target``."""
    best = min(
        range(1, 4096),
        key=lambda h: abs(classifier_param_count(n_qubits, embed_dim, h, n_classes, activation, layers) - target),
    )
    return best
