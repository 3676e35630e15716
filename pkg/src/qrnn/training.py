"""Adam, epoch loop, evaluation, binary checkpoints and metric CSVs."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .controller import ParamStore
from .model import QRNN, LossStats, QrnnConfig, TaskBatch, batch_loss

log = logging.getLogger(__name__)

MAGIC = b"QRNN"
FORMAT_VERSION = 1
_F64 = 1  # dtype tag


class NonFiniteError(RuntimeError):
    """A loss or gradient turned NaN/Inf; training halts instead of clamping."""


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    eps: float = 1e-10
    beta1: float = 0.9
    beta2: float = 0.999
    decoupled: bool = False
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def hyper(self) -> dict:
        return {k: getattr(self, k) for k in ("lr", "weight_decay", "eps", "beta1", "beta2", "decoupled")}


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState, batch_index: int | None = None):
    """One bias-corrected Adam update, in place.

    Weight decay is L2-coupled (``g += wd * w``) unless ``state.decoupled``,
    in which case ``w -= lr * wd * w`` is applied outside the moments.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            where = "" if batch_index is None else f" at batch {batch_index}"
            raise NonFiniteError(f"non-finite gradient for {name}{where}")
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name}")
        if state.weight_decay and not state.decoupled:
            g = g + state.weight_decay * w
        m = state.m.setdefault(name, np.zeros_like(w))
        v = state.v.setdefault(name, np.zeros_like(w))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay and state.decoupled:
            w -= state.lr * state.weight_decay * w
        w -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        row = params.frozen_rows.get(name)
        if row is not None:
            w[row] = 0.0
            m[row] = 0.0
            v[row] = 0.0


# ---------------------------------------------------------------- loop

@dataclass
class TrainRunConfig:
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    lr: float = 1e-3
    weight_decay: float = 1e-4
    eps: float = 1e-10
    decoupled_wd: bool = False
    clip: float = 0.0  # global-norm clip; 0 disables
    eval_every: int = 1
    threads: int = 1
    checkpoint: str = ""

    def validate(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    def make_optimizer(self) -> AdamState:
        return AdamState(lr=self.lr, weight_decay=self.weight_decay, eps=self.eps, decoupled=self.decoupled_wd)


@dataclass
class EpochMetrics:
    epoch: int
    split: str
    loss: float
    metric: float  # accuracy, or perplexity for lm
    seconds: float
    recall_accuracy: float = float("nan")
    grad_norm: float = float("nan")


def _metric(model: QRNN, stats: LossStats) -> float:
    if model.config.task == "lm":
        return float(np.exp(stats.mean_loss))
    return stats.accuracy


def count_items(model: QRNN, batch: TaskBatch) -> int:
    """Number of loss terms in ``batch`` (the mean's denominator), known before the forward pass."""
    task = model.config.task
    if task == "classify":
        return len(batch)
    if task == "copy":
        return int(np.size(batch.targets))
    if task == "lm":
        T = batch.inputs.shape[1]
        L = np.full(len(batch), T) if batch.lengths is None else np.asarray(batch.lengths)
        return int(np.sum(L - 1))
    T = batch.targets.shape[1]
    L = np.full(len(batch), T) if batch.target_lengths is None else np.asarray(batch.target_lengths)
    return int(np.sum(L - 1))


def _grads_on_chunk(model: QRNN, chunk: TaskBatch, normalizer: float, rng, copy_k: int):
    p = model.leaves()
    with ag.Tape() as tape:
        loss, stats, _ = batch_loss(model, chunk, p, rng, normalizer=normalizer, copy_k=copy_k)
    tape.backward(loss)
    return {k: tape.grad(t) for k, t in p.items()}, stats


def compute_gradients(model: QRNN, batch: TaskBatch, rng=None, threads: int = 1, copy_k: int = 10):
    """Mean-loss gradients for one batch, plus statistics.

    With ``threads > 1`` the batch is split into contiguous chunks whose
    gradients are summed in chunk order, so the result does not depend on
    thread scheduling.
    """
    norm = max(count_items(model, batch), 1)
    if threads <= 1 or len(batch) < 2:
        return _grads_on_chunk(model, batch, norm, rng, copy_k)
    bounds = np.linspace(0, len(batch), min(threads, len(batch)) + 1).astype(int)
    chunks = [batch.take(slice(a, b)) for a, b in zip(bounds[:-1], bounds[1:])]
    rngs = [None] * len(chunks) if rng is None else [np.random.default_rng(s) for s in
                                                      rng.integers(0, 2**63, size=len(chunks))]
    with ThreadPoolExecutor(len(chunks)) as pool:
        results = list(pool.map(lambda a: _grads_on_chunk(model, a[0], norm, a[1], copy_k), zip(chunks, rngs)))
    grads, stats = results[0][0], results[0][1]
    grads = {k: g.copy() for k, g in grads.items()}
    for g_c, s_c in results[1:]:
        for k in grads:
            grads[k] += g_c[k]
        stats = stats.merge(s_c)
    return grads, stats


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def train_epoch(model: QRNN, data: TaskBatch, run: TrainRunConfig, opt: AdamState, rng: np.random.Generator,
                epoch: int = 0, copy_k: int = 10) -> EpochMetrics:
    """One pass over ``data`` in seeded random order; dropout on."""
    if len(data) == 0:
        raise ValueError("empty training set")
    t0 = time.perf_counter()
    order = rng.permutation(len(data))
    total = LossStats()
    norms = []
    for bi, start in enumerate(range(0, len(data), run.batch_size)):
        batch = data.take(order[start:start + run.batch_size])
        grads, stats = compute_gradients(model, batch, rng, run.threads, copy_k)
        if not np.isfinite(stats.loss_sum):
            raise NonFiniteError(f"non-finite loss at batch {bi}")
        gn = global_norm(grads)
        norms.append(gn)
        if run.clip > 0 and gn > run.clip:
            scale = run.clip / gn
            grads = {k: g * scale for k, g in grads.items()}
        adam_step(model.params, grads, opt, batch_index=bi)
        total = total.merge(stats)
    return EpochMetrics(epoch, "train", total.mean_loss, _metric(model, total), time.perf_counter() - t0,
                        total.recall_accuracy if total.recall_count else float("nan"),
                        float(np.mean(norms)))


def evaluate(model: QRNN, data: TaskBatch, batch_size: int = 256, copy_k: int = 10,
             split: str = "test", epoch: int = 0) -> EpochMetrics:
    """Loss and metric without dropout or gradient tracking."""
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    t0 = time.perf_counter()
    p = model.leaves()
    total = LossStats()
    for start in range(0, len(data), batch_size):
        _, stats, _ = batch_loss(model, data.take(slice(start, start + batch_size)), p, None, copy_k=copy_k)
        total = total.merge(stats)
    return EpochMetrics(epoch, split, total.mean_loss, _metric(model, total), time.perf_counter() - t0,
                        total.recall_accuracy if total.recall_count else float("nan"))


def fit(model: QRNN, train: TaskBatch, run: TrainRunConfig, test: TaskBatch | None = None,
        opt: AdamState | None = None, metrics_path=None, copy_k: int = 10, start_epoch: int = 1,
        stop=None) -> list[EpochMetrics]:
    """Train for ``run.epochs`` epochs, evaluating every ``run.eval_every``.

    ``stop(history)`` may return True to end early.
    """
    run.validate()
    opt = opt if opt is not None else run.make_optimizer()
    rng = np.random.default_rng(run.seed)
    history: list[EpochMetrics] = []
    for epoch in range(start_epoch, start_epoch + run.epochs):
        m = train_epoch(model, train, run, opt, rng, epoch, copy_k)
        history.append(m)
        log.info("epoch %d train loss %.5f metric %.4f (%.1fs)", epoch, m.loss, m.metric, m.seconds)
        if metrics_path:
            append_metrics(metrics_path, m)
        if test is not None and epoch % run.eval_every == 0:
            e = evaluate(model, test, copy_k=copy_k, epoch=epoch)
            history.append(e)
            log.info("epoch %d test loss %.5f metric %.4f recall %.4f", epoch, e.loss, e.metric, e.recall_accuracy)
            if metrics_path:
                append_metrics(metrics_path, e)
        if run.checkpoint:
            save_checkpoint(run.checkpoint, model, opt)
        if stop is not None and stop(history):
            break
    return history


METRIC_FIELDS = ("epoch", "split", "loss", "metric", "seconds", "recall_accuracy", "grad_norm")


def append_metrics(path, m: EpochMetrics) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRIC_FIELDS)
        w.writerow([getattr(m, f) if isinstance(getattr(m, f), (int, str)) else repr(float(getattr(m, f)))
                    for f in METRIC_FIELDS])


# ---------------------------------------------------------------- checkpoints

def config_blob(config: QrnnConfig, opt: AdamState) -> bytes:
    return json.dumps({"model": asdict(config), "optimizer": opt.hyper()}, sort_keys=True).encode()


def config_digest(config: QrnnConfig) -> bytes:
    return hashlib.sha256(json.dumps(asdict(config), sort_keys=True).encode()).digest()


def _write_section(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode()
    arr = np.ascontiguousarray(arr, dtype="<f8")
    buf.write(struct.pack("<I", len(raw)) + raw)
    buf.write(struct.pack("<BI", _F64, arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(arr.tobytes())


def save_checkpoint(path, model: QRNN, opt: AdamState | None = None) -> None:
    """Layout: magic, u32 version, 32-byte config digest, u32 + JSON config,
    u32 section count, then per section (u32 name length, name, u8 dtype tag,
    u32 ndim, u64 dims, little-endian float64 payload)."""
    opt = opt if opt is not None else AdamState()
    sections = [(f"param/{k}", v) for k, v in model.params.items()]
    sections += [(f"adam.m/{k}", opt.m[k]) for k in model.params if k in opt.m]
    sections += [(f"adam.v/{k}", opt.v[k]) for k in model.params if k in opt.v]
    sections.append(("adam.step", np.array(float(opt.step))))
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", FORMAT_VERSION) + config_digest(model.config))
    blob = config_blob(model.config, opt)
    buf.write(struct.pack("<I", len(blob)) + blob)
    buf.write(struct.pack("<I", len(sections)))
    for name, arr in sections:
        _write_section(buf, name, arr)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected: QrnnConfig | None = None) -> tuple[QRNN, AdamState]:
    """Inverse of :func:`save_checkpoint`; bit-exact for parameters and moments."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError("not a QRNN checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    digest = r.take(32)
    (n,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(n))
        config = QrnnConfig(**meta["model"])
    except (ValueError, TypeError, KeyError) as exc:
        raise CheckpointError(f"unreadable config block: {exc}") from exc
    if config_digest(config) != digest:
        raise CheckpointError("config digest mismatch")
    if expected is not None and config_digest(expected) != digest:
        raise CheckpointError("checkpoint was written for a different model config")
    opt = AdamState(**meta["optimizer"])
    model = QRNN(config)
    (count,) = r.unpack("<I")
    seen = set()
    for _ in range(count):
        (ln,) = r.unpack("<I")
        name = r.take(ln).decode()
        tag, ndim = r.unpack("<BI")
        if tag != _F64:
            raise CheckpointError(f"section {name}: unknown dtype tag {tag}")
        shape = r.unpack(f"<{ndim}Q")
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        kind, _, key = name.partition("/")
        if kind == "adam.step":
            opt.step = int(arr.reshape(-1)[0])
            continue
        if key not in model.params:
            raise CheckpointError(f"section {name} does not match any parameter")
        if arr.shape != model.params[key].shape:
            raise CheckpointError(f"section {name}: shape {arr.shape} != expected {model.params[key].shape}")
        if kind == "param":
            model.params[key][...] = arr
            seen.add(key)
        elif kind == "adam.m":
            opt.m[key] = arr
        elif kind == "adam.v":
            opt.v[key] = arr
        else:
            raise CheckpointError(f"unknown section {name}")
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after last section")
    missing = set(model.params) - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)}")
    return model, opt
