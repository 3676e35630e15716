"""Unrolled hybrid models: classifier, per-step tagger (language model and copy
task) and the attention encoder-decoder.

Every forward function takes a dict of parameter tensors ``p`` (from
``model.params.leaves()``) so a surrounding :class:`~qrnn.autograd.Tape` can
report gradients for them.  When ``p`` is omitted fresh leaves are created.
"""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import controller as ctl
from . import statevector as sv
from .ansatz import CircuitLayout, build_ansatz14, readout
from .autograd import Tensor

TASKS = ("classify", "lm", "copy", "seq2seq")


@dataclass
class QrnnConfig:
    task: str = "classify"
    n_qubits: int = 8
    layers: int = 1
    embed_dim: int = 16
    hidden: int = 32
    activation: str = "leaky_relu"
    negative_slope: float = 0.01
    vocab_size: int = 2
    n_classes: int = 2
    tgt_vocab_size: int = 0
    # readout transform y = phi(A z + a); width 0 means 3 * n_qubits
    readout_transform: str = "auto"  # auto | ffn | none
    readout_width: int = 0
    attention_memory: str = "raw"  # raw | transformed
    attn_dim: int = 0
    decoder_start: str = "continue"  # continue | reset
    dropout: float = 0.0
    bptt: int = 0
    padding_idx: int = 0  # -1: no padding row (every id gets a trainable embedding)
    bos_id: int = 2
    eos_id: int = 3
    max_decode_len: int = 64
    init_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.activation not in ag.ACTIVATIONS:
            raise ValueError(f"activation must be one of {ag.ACTIVATIONS}, got {self.activation!r}")
        if self.readout_transform not in ("auto", "ffn", "none"):
            raise ValueError(f"readout_transform must be auto, ffn or none, got {self.readout_transform!r}")
        if self.attention_memory not in ("raw", "transformed"):
            raise ValueError(f"attention_memory must be raw or transformed, got {self.attention_memory!r}")
        if self.decoder_start not in ("continue", "reset"):
            raise ValueError(f"decoder_start must be continue or reset, got {self.decoder_start!r}")
        if self.n_qubits < 2 or self.n_qubits > sv.MAX_QUBITS:
            raise ValueError(f"n_qubits must be in [2, {sv.MAX_QUBITS}]")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.bptt < 0:
            raise ValueError("bptt must be >= 0")

    @property
    def pad_id(self) -> int | None:
        return None if self.padding_idx < 0 else self.padding_idx

    @property
    def readout_dim(self) -> int:
        return 3 * self.n_qubits

    @property
    def n_angles(self) -> int:
        return 4 * self.n_qubits * self.layers

    @property
    def uses_transform(self) -> bool:
        if self.readout_transform == "auto":
            return self.task in ("lm", "copy", "seq2seq")
        return self.readout_transform == "ffn"

    @property
    def feedback_dim(self) -> int:
        """Width of the recurrent feedback entering the controller."""
        if self.task == "classify" or not self.uses_transform:
            return self.readout_dim
        return self.readout_width or self.readout_dim

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class StepTrace:
    """Per-timestep readouts and angles of one unrolled batch."""

    z: list[Tensor] = field(default_factory=list)
    theta: list[Tensor] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    grad_norms: np.ndarray | None = None

    def __len__(self):
        return len(self.z)

    def readouts(self) -> np.ndarray:
        """(B, T, 3n) array of z_1..z_T."""
        return np.stack([z.value for z in self.z], axis=1)

    def record_grad_norms(self, tape: ag.Tape) -> np.ndarray:
        """Batch-mean of ||dL/dz_t||_2 per timestep; needs a differentiated tape."""
        self.grad_norms = np.array([np.linalg.norm(tape.grad(z), axis=-1).mean() for z in self.z])
        return self.grad_norms

    def to_csv(self, path, values: bool = False) -> None:
        zs = self.readouts()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["t", "z_inf_norm"]
            if values:
                head += [f"z{j}" for j in range(zs.shape[-1])]
            head.append("grad_norm")
            w.writerow(head)
            for t in range(zs.shape[1]):
                row = [t + 1, repr(float(np.abs(zs[:, t]).max()))]
                if values:
                    row += [repr(float(v)) for v in zs[:, t].mean(axis=0)]
                row.append("" if self.grad_norms is None else repr(float(self.grad_norms[t])))
                w.writerow(row)


class QRNN:
    """Parameters + circuit layout for one configured hybrid model."""

    def __init__(self, config: QrnnConfig, params: ctl.ParamStore | None = None):
        config.validate()
        self.config = config
        self.layout: CircuitLayout = build_ansatz14(config.n_qubits, config.layers)
        self.params = params if params is not None else init_params(config)

    def leaves(self) -> dict[str, Tensor]:
        return self.params.leaves()

    def parameter_report(self) -> dict[str, int]:
        """Trainable parameter counts per group; ``total`` excludes embedding tables."""
        groups: dict[str, int] = {}
        for name, arr in self.params.items():
            groups[name.split(".")[0]] = groups.get(name.split(".")[0], 0) + arr.size
        emb = sum(v for k, v in groups.items() if k.endswith("embed"))
        groups["total"] = self.params.count() - emb
        groups["total_with_embeddings"] = self.params.count()
        return groups


def init_params(config: QrnnConfig) -> ctl.ParamStore:
    """Xavier-uniform weights (embeddings included), zero biases."""
    rng = np.random.default_rng(config.init_seed)
    c = config
    store = ctl.ParamStore()
    m, d, a = c.readout_dim, c.n_angles, c.activation
    r = c.feedback_dim
    pad = c.pad_id
    if c.task == "classify":
        ctl.add_embedding(store, rng, "embed", c.vocab_size, c.embed_dim, pad)
        ctl.add_controller(store, rng, "ctrl", m + c.embed_dim, c.hidden, d, a)
        ctl.add_affine(store, rng, "head", m, c.n_classes)
    elif c.task in ("lm", "copy"):
        n_out = c.vocab_size if c.task == "lm" else c.n_classes
        ctl.add_embedding(store, rng, "embed", c.vocab_size, c.embed_dim, pad)
        ctl.add_controller(store, rng, "ctrl", r + c.embed_dim, c.hidden, d, a)
        if c.uses_transform:
            ctl.add_affine(store, rng, "readout", m, ctl._pre_width(r, a))
        ctl.add_affine(store, rng, "vocab", r, n_out)
    else:
        if c.tgt_vocab_size < 4:
            raise ValueError("seq2seq needs tgt_vocab_size (including specials)")
        mem = r if c.attention_memory == "transformed" else m
        attn = c.attn_dim or r
        ctl.add_embedding(store, rng, "src_embed", c.vocab_size, c.embed_dim, pad)
        ctl.add_embedding(store, rng, "tgt_embed", c.tgt_vocab_size, c.embed_dim, pad)
        ctl.add_controller(store, rng, "enc", m + c.embed_dim, c.hidden, d, a)
        ctl.add_controller(store, rng, "dec", r + c.embed_dim, c.hidden, d, a)
        if c.uses_transform:
            ctl.add_affine(store, rng, "readout", m, ctl._pre_width(r, a))
        store.add("attn.Wd", ctl.xavier_uniform(rng, attn, r))
        store.add("attn.We", ctl.xavier_uniform(rng, attn, mem))
        store.add("attn.b", np.zeros(attn))
        store.add("attn.v", ctl.xavier_uniform(rng, 1, attn))
        ctl.add_affine(store, rng, "comb", r + mem, r)
        ctl.add_affine(store, rng, "vocab", r, c.tgt_vocab_size)
    return store


# ---------------------------------------------------------------- helpers

def initial_readout(n_qubits: int, batch: int) -> Tensor:
    """z_0: the readout of |0...0>, i.e. (0, 0, 1) per qubit."""
    return Tensor(readout(sv.zero_state(n_qubits, batch)))


def _tokens(tokens, vocab: int) -> np.ndarray:
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    if tokens.shape[1] == 0:
        raise ValueError("empty sequence")
    if tokens.min() < 0 or tokens.max() >= vocab:
        raise ValueError(f"token id out of range for vocabulary of {vocab}")
    return tokens


def _lengths(tokens: np.ndarray, lengths) -> np.ndarray:
    if lengths is None:
        return np.full(tokens.shape[0], tokens.shape[1])
    lengths = np.asarray(lengths, dtype=np.int64)
    if (lengths < 1).any() or (lengths > tokens.shape[1]).any():
        raise ValueError("sequence lengths must be in [1, padded length]")
    return lengths


def _freeze_past(mask_t: np.ndarray, new: Tensor, old: Tensor) -> Tensor:
    """Keep ``old`` where the sample has already ended (mask False)."""
    if mask_t.all():
        return new
    m = mask_t.astype(float).reshape((-1,) + (1,) * (new.value.ndim - 1))
    return ag.add(ag.mul(Tensor(m), new), ag.mul(Tensor(1.0 - m), old))


def _cell(model: QRNN, p, name: str, state: Tensor, feedback: Tensor, x: Tensor, trace: StepTrace | None,
          keep_states: bool = False):
    c = model.config
    theta = ctl.controller_forward(p, name, feedback, x, c.activation, c.negative_slope)
    h, z = ag.quantum_step(model.layout, theta, state)
    if trace is not None:
        trace.z.append(z)
        trace.theta.append(theta)
        if keep_states:
            trace.states.append(h.value)
    return h, z


def _embed(p, name, ids, config: QrnnConfig, rng) -> Tensor:
    x = ag.embedding(p[name], ids, config.pad_id)
    return ag.dropout(x, config.dropout, rng)


# ---------------------------------------------------------------- classifier

def run_classifier(model: QRNN, tokens, lengths=None, p=None, rng=None, keep_states: bool = False):
    """Unroll over ``tokens`` (B, T) and classify from the last real position.

    ``rng`` enables input dropout (training mode).  Returns ``(logits, trace)``.
    """
    c = model.config
    p = p if p is not None else model.leaves()
    tokens = _tokens(tokens, c.vocab_size)
    lengths = _lengths(tokens, lengths)
    B, T = tokens.shape
    state = Tensor(sv.zero_state(c.n_qubits, B))
    z = initial_readout(c.n_qubits, B)
    trace = StepTrace()
    for t in range(T):
        x = _embed(p, "embed", tokens[:, t], c, rng)
        state, z = _cell(model, p, "ctrl", state, z, x, trace, keep_states)
    z_last = trace.z[-1] if (lengths == T).all() else ag.select_rows(ag.stack(trace.z, axis=1), lengths - 1)
    return ctl.classify_final(p, z_last), trace


# ---------------------------------------------------------------- per-step tagger

def _run_tagger(model: QRNN, inputs: np.ndarray, p, rng, keep_states: bool = False):
    c = model.config
    B, T = inputs.shape
    state = Tensor(sv.zero_state(c.n_qubits, B))
    fb = ctl.readout_transform(p, initial_readout(c.n_qubits, B), c.activation, c.negative_slope)
    trace = StepTrace()
    logits = []
    for t in range(T):
        if c.bptt and t and t % c.bptt == 0:
            state, fb = ag.detach(state), ag.detach(fb)
        x = _embed(p, "embed", inputs[:, t], c, rng)
        state, z = _cell(model, p, "ctrl", state, fb, x, trace, keep_states)
        fb, lg = ctl.lm_step_head(p, z, c.activation, c.negative_slope)
        logits.append(lg)
    return ag.stack(logits, axis=1), trace


def run_lm(model: QRNN, tokens, lengths=None, p=None, rng=None, keep_states: bool = False):
    """Teacher-forced next-token prediction.

    Returns ``(logits (B, T-1, V), targets (B, T-1), mask (B, T-1), trace)``.
    """
    c = model.config
    p = p if p is not None else model.leaves()
    tokens = _tokens(tokens, c.vocab_size)
    if tokens.shape[1] < 2:
        raise ValueError("language modelling needs sequences of length >= 2")
    lengths = _lengths(tokens, lengths)
    logits, trace = _run_tagger(model, tokens[:, :-1], p, rng, keep_states)
    mask = np.arange(tokens.shape[1] - 1)[None, :] < (lengths - 1)[:, None]
    return logits, tokens[:, 1:], mask, trace


def run_copy_task(model: QRNN, inputs, p=None, rng=None, keep_states: bool = False):
    """Per-step logits (B, T + 2k, n_classes) for copy-memory inputs."""
    c = model.config
    p = p if p is not None else model.leaves()
    inputs = _tokens(inputs, c.vocab_size)
    return _run_tagger(model, inputs, p, rng, keep_states)


# ---------------------------------------------------------------- seq2seq

def encode(model: QRNN, src, src_lengths=None, p=None, rng=None, trace: StepTrace | None = None):
    """Encoder pass.  Returns ``(final state, memory (B, Ts, m), feedback, mask)``."""
    c = model.config
    p = p if p is not None else model.leaves()
    src = _tokens(src, c.vocab_size)
    src_lengths = _lengths(src, src_lengths)
    B, Ts = src.shape
    mask = np.arange(Ts)[None, :] < src_lengths[:, None]
    state = Tensor(sv.zero_state(c.n_qubits, B))
    z = initial_readout(c.n_qubits, B)
    mem = []
    for t in range(Ts):
        x = _embed(p, "src_embed", src[:, t], c, rng)
        h, z_new = _cell(model, p, "enc", state, z, x, trace)
        state = _freeze_past(mask[:, t], h, state)
        z = _freeze_past(mask[:, t], z_new, z)
        mem.append(z_new if c.attention_memory == "raw"
                   else ctl.readout_transform(p, z_new, c.activation, c.negative_slope))
    return state, ag.stack(mem, axis=1), z, mask


def _decoder_start(model: QRNN, p, state: Tensor, z_enc: Tensor):
    c = model.config
    if c.decoder_start == "reset":
        B = state.shape[0]
        state = Tensor(sv.zero_state(c.n_qubits, B))
        z_enc = initial_readout(c.n_qubits, B)
    return state, ctl.readout_transform(p, z_enc, c.activation, c.negative_slope)


def _decode_step(model: QRNN, p, state, fb, x, memory, keys, mask, trace):
    c = model.config
    state, z = _cell(model, p, "dec", state, fb, x, trace)
    y = ctl.readout_transform(p, z, c.activation, c.negative_slope)
    ctx, w = ctl.attention_step(p, y, memory, mask, keys=keys)
    o = ag.activation(ag.affine(ag.concat([y, ctx]), p["comb.W"], p["comb.b"]), "tanh")
    return state, y, ag.affine(o, p["vocab.W"], p["vocab.b"]), w


def run_seq2seq(model: QRNN, src, tgt=None, src_lengths=None, p=None, rng=None, max_len: int | None = None):
    """Encoder-decoder with additive attention over encoder readouts.

    With ``tgt`` (B, Tt) -- starting with BOS -- the decoder is teacher forced
    on ``tgt[:, :-1]`` and returns ``(logits (B, Tt-1, V), attention (B, Tt-1, Ts))``.
    Without it, greedy decoding from BOS runs for ``max_len`` steps and returns
    ``(tokens (B, max_len), attention)``.
    """
    c = model.config
    p = p if p is not None else model.leaves()
    state, memory, z_enc, mask = encode(model, src, src_lengths, p, rng)
    keys = ctl.attention_keys(p, memory)
    state, fb = _decoder_start(model, p, state, z_enc)
    B = state.shape[0]
    trace = StepTrace()
    weights = []
    if tgt is not None:
        tgt = _tokens(tgt, c.tgt_vocab_size)
        logits = []
        for t in range(tgt.shape[1] - 1):
            x = _embed(p, "tgt_embed", tgt[:, t], c, rng)
            state, fb, lg, w = _decode_step(model, p, state, fb, x, memory, keys, mask, trace)
            logits.append(lg)
            weights.append(w.value)
        return ag.stack(logits, axis=1), np.stack(weights, axis=1)
    max_len = max_len or c.max_decode_len
    if max_len < 1 or max_len > 4 * c.max_decode_len:
        raise ValueError(f"decode length {max_len} outside [1, {4 * c.max_decode_len}]")
    prev = np.full(B, c.bos_id)
    out = np.zeros((B, max_len), dtype=np.int64)
    for t in range(max_len):
        x = ag.embedding(p["tgt_embed"], prev, c.pad_id)
        state, fb, lg, w = _decode_step(model, p, state, fb, x, memory, keys, mask, trace)
        prev = lg.value.argmax(axis=-1)
        out[:, t] = prev
        weights.append(w.value)
    return out, np.stack(weights, axis=1)


# ---------------------------------------------------------------- batches & losses

@dataclass
class TaskBatch:
    """Padded integer inputs plus targets for one task head.

    classify: ``inputs`` (B, T), ``lengths``, ``targets`` (B,).
    lm: ``inputs`` (B, T) token stream, ``lengths``.
    copy: ``inputs`` and ``targets`` (B, T + 2k).
    seq2seq: ``inputs`` source (B, Ts), ``lengths``, ``targets`` (B, Tt) from BOS,
    ``target_lengths``.
    """

    inputs: np.ndarray
    targets: np.ndarray | None = None
    lengths: np.ndarray | None = None
    target_lengths: np.ndarray | None = None

    def __len__(self):
        return len(self.inputs)

    def take(self, idx) -> "TaskBatch":
        pick = lambda a: None if a is None else a[idx]
        return TaskBatch(self.inputs[idx], pick(self.targets), pick(self.lengths), pick(self.target_lengths))


@dataclass
class LossStats:
    loss_sum: float = 0.0  # summed over counted positions/samples
    count: int = 0
    correct: int = 0
    recall_correct: int = 0
    recall_count: int = 0

    def merge(self, other: "LossStats") -> "LossStats":
        return LossStats(*(a + b for a, b in zip(astuple(self), astuple(other))))

    @property
    def mean_loss(self) -> float:
        return self.loss_sum / max(self.count, 1)

    @property
    def accuracy(self) -> float:
        return self.correct / max(self.count, 1)

    @property
    def recall_accuracy(self) -> float:
        return self.recall_correct / max(self.recall_count, 1)


def batch_loss(model: QRNN, batch: TaskBatch, p=None, rng=None, normalizer: float | None = None,
               copy_k: int = 10):
    """Task loss as a scalar tensor plus summary statistics.

    The tensor is ``sum(per-item losses) / normalizer``; the normalizer
    defaults to the number of counted items in this batch, giving the mean.
    Copy-task losses average over all T + 2k positions.
    """
    c = model.config
    p = p if p is not None else model.leaves()
    stats = LossStats()
    if c.task == "classify":
        logits, trace = run_classifier(model, batch.inputs, batch.lengths, p, rng)
        targets = np.asarray(batch.targets, dtype=np.int64)
        w = np.ones(len(targets))
        pred = logits.value.argmax(-1)
        stats.correct = int((pred == targets).sum())
    elif c.task == "lm":
        logits, targets, w, trace = run_lm(model, batch.inputs, batch.lengths, p, rng)
        w = w.astype(float)
        pred = logits.value.argmax(-1)
        stats.correct = int(((pred == targets) & (w > 0)).sum())
    elif c.task == "copy":
        logits, trace = run_copy_task(model, batch.inputs, p, rng)
        targets = np.asarray(batch.targets, dtype=np.int64)
        w = np.ones(targets.shape)
        pred = logits.value.argmax(-1)
        stats.correct = int((pred == targets).sum())
        stats.recall_correct = int((pred[:, -copy_k:] == targets[:, -copy_k:]).sum())
        stats.recall_count = targets[:, -copy_k:].size
    else:
        logits, _ = run_seq2seq(model, batch.inputs, batch.targets, batch.lengths, p, rng)
        targets = np.asarray(batch.targets, dtype=np.int64)[:, 1:]
        tl = _lengths(batch.targets, batch.target_lengths)
        w = (np.arange(targets.shape[1])[None, :] < (tl - 1)[:, None]).astype(float)
        pred = logits.value.argmax(-1)
        stats.correct = int(((pred == targets) & (w > 0)).sum())
        trace = None
    stats.count = int(np.count_nonzero(w))
    per_item = -np.take_along_axis(ag.log_softmax(logits.value), targets[..., None], -1)[..., 0]
    stats.loss_sum = float((per_item * w).sum())
    norm = normalizer if normalizer is not None else max(stats.count, 1)
    loss = ag.softmax_cross_entropy(logits, targets, w / norm)
    return loss, stats, trace
