"""Glue between a resolved config, the datasets and the training loop."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tasks
from .config import ExperimentConfig
from .model import QRNN, QrnnConfig, TaskBatch
from .training import AdamState, EpochMetrics, evaluate, fit, save_checkpoint


@dataclass
class Datasets:
    train: TaskBatch
    test: TaskBatch
    kind: str
    vocab_size: int
    n_classes: int = 0
    tgt_vocab_size: int = 0
    copy_k: int = 10


def _split(n: int, test_fraction: float) -> int:
    n_test = max(1, int(round(n * test_fraction)))
    if n_test >= n:
        raise ValueError("dataset too small to split")
    return n - n_test


def _rows_to_batch(inputs, targets, task: str) -> TaskBatch:
    if task == "copy":
        return TaskBatch(np.asarray(inputs, dtype=np.int64), np.asarray(targets, dtype=np.int64))
    if task == "classify":
        x, lens = tasks.pad_sequences(inputs)
        return TaskBatch(x, np.array([t[0] for t in targets], dtype=np.int64), lens)
    if task == "seq2seq":
        x, lens = tasks.pad_sequences(inputs)
        y, tlens = tasks.pad_sequences(targets)
        return TaskBatch(x, y, lens, tlens)
    x, lens = tasks.pad_sequences(inputs)
    return TaskBatch(x, None, lens)


def load_datasets(exp: ExperimentConfig) -> Datasets:
    """Build train/test batches for the configured task and data source."""
    d, task = exp.data, exp.model.task
    kind = d.resolved_dataset(task)
    if kind == "copy":
        if task != "copy":
            raise ValueError("the copy dataset needs task = copy")
        spec = tasks.CopyTaskSpec(T=d.copy_T, k=d.copy_k, n_digits=d.n_digits, n_train=d.n_train,
                                  n_test=d.n_test, seed=d.data_seed)
        if d.data_dir:
            tr, te = tasks.read_dataset(d.data_dir, "train"), tasks.read_dataset(d.data_dir, "test")
            train, test = _rows_to_batch(*tr, "copy"), _rows_to_batch(*te, "copy")
            for b in (train, test):
                tasks.check_copy_sample(spec, b.inputs, b.targets)
        else:
            train = TaskBatch(*tasks.gen_copy_dataset(spec, "train"))
            test = TaskBatch(*tasks.gen_copy_dataset(spec, "test"))
        return Datasets(train, test, kind, vocab_size=10, n_classes=10, copy_k=d.copy_k)
    if kind == "parity":
        if task != "classify":
            raise ValueError("the parity dataset needs task = classify")
        seqs, labels = tasks.gen_parity_dataset(d.parity_length, 2, d.parity_count, d.data_seed)
        cut = _split(len(seqs), d.test_fraction)
        tokens = seqs + 1  # keep id 0 for padding
        return Datasets(TaskBatch(tokens[:cut], labels[:cut]), TaskBatch(tokens[cut:], labels[cut:]),
                        kind, vocab_size=3, n_classes=2)
    if kind == "ints":
        if not d.data_dir:
            raise ValueError("dataset = ints needs data_dir")
        tr, te = tasks.read_dataset(d.data_dir, "train"), tasks.read_dataset(d.data_dir, "test")
        train, test = _rows_to_batch(*tr, task), _rows_to_batch(*te, task)
        vocab = int(max(train.inputs.max(), test.inputs.max())) + 1
        out = Datasets(train, test, kind, vocab_size=vocab)
        if task in ("classify", "copy"):
            out.n_classes = int(max(train.targets.max(), test.targets.max())) + 1
        if task == "seq2seq":
            out.tgt_vocab_size = int(max(train.targets.max(), test.targets.max())) + 1
        return out
    if kind == "corpus":
        if task != "lm":
            raise ValueError("the corpus dataset needs task = lm")
        if not d.corpus:
            raise ValueError("dataset = corpus needs a corpus path")
        corpus = tasks.load_token_corpus(d.corpus, d.vocab_limit)

        def stream(split):
            return [i for line in corpus.splits[split] for i in line + [tasks.EOS]]

        train_rows = tasks.lm_windows(stream("train"), d.lm_seq_len)
        held = "test" if "test" in corpus.splits else "valid" if "valid" in corpus.splits else None
        if held is None:
            cut = _split(len(train_rows), d.test_fraction)
            train_rows, test_rows = train_rows[:cut], train_rows[cut:]
        else:
            test_rows = tasks.lm_windows(stream(held), d.lm_seq_len)
        return Datasets(TaskBatch(train_rows), TaskBatch(test_rows), kind, vocab_size=corpus.size)
    if kind == "toy_copy":
        if task != "seq2seq":
            raise ValueError("the toy_copy dataset needs task = seq2seq")
        n = d.n_train + d.n_test
        src, tgt = tasks.gen_toy_copy_pairs(d.toy_vocab, d.toy_min_len, d.toy_max_len, n, d.data_seed)
        x, xl = tasks.pad_sequences(src, eos=tasks.EOS)
        y, yl = tasks.pad_sequences(tgt, bos=tasks.BOS, eos=tasks.EOS)
        full = TaskBatch(x, y, xl, yl)
        V = len(tasks.SPECIALS) + d.toy_vocab
        return Datasets(full.take(slice(0, d.n_train)), full.take(slice(d.n_train, n)), kind,
                        vocab_size=V, tgt_vocab_size=V)
    raise ValueError(f"unknown dataset {kind!r}")


def fit_model_config(config: QrnnConfig, data: Datasets) -> QrnnConfig:
    """Vocabulary and class counts come from the data, not the config file."""
    upd = {"vocab_size": data.vocab_size}
    if data.n_classes:
        upd["n_classes"] = data.n_classes
    if data.tgt_vocab_size:
        upd["tgt_vocab_size"] = data.tgt_vocab_size
    return replace(config, **upd)


def write_generated(exp: ExperimentConfig, out_dir) -> Path:
    """Materialize the configured dataset as integer text files plus a manifest."""
    data = load_datasets(exp)
    out = Path(out_dir)
    manifest = {"dataset": data.kind, "task": exp.model.task, "data": vars(exp.data).copy()}
    for name, b in (("train", data.train), ("test", data.test)):
        if exp.model.task == "copy":
            rows_in, rows_tg = b.inputs, b.targets
        else:
            lens = b.lengths if b.lengths is not None else np.full(len(b), b.inputs.shape[1])
            rows_in = [row[:n] for row, n in zip(b.inputs, lens)]
            if exp.model.task == "classify":
                rows_tg = b.targets
            elif exp.model.task == "seq2seq":
                rows_tg = [row[:n] for row, n in zip(b.targets, b.target_lengths)]
            else:
                rows_tg = [row[1:n] for row, n in zip(b.inputs, lens)]
        tasks.write_dataset(out, name, rows_in, rows_tg, manifest)
    return out


def train_from_config(exp: ExperimentConfig, out_dir, progress=None) -> tuple[QRNN, list[EpochMetrics]]:
    """Train per ``exp``; writes metrics.csv, model.ckpt and summary.json under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_datasets(exp)
    model = QRNN(fit_model_config(exp.model, data))
    run = replace(exp.run, checkpoint=str(out / "model.ckpt"))
    opt: AdamState = run.make_optimizer()
    metrics = out / "metrics.csv"
    if metrics.exists():
        metrics.unlink()

    def stop(history):
        if progress is not None:
            progress(history[-1])
        return False

    history = fit(model, data.train, run, data.test, opt, metrics, copy_k=data.copy_k, stop=stop)
    save_checkpoint(out / "model.ckpt", model, opt)
    final = evaluate(model, data.test, copy_k=data.copy_k, epoch=exp.run.epochs)
    summary = {"test_loss": final.loss, "test_metric": final.metric, "epochs": exp.run.epochs,
               "parameters": model.parameter_report()}
    if data.kind == "copy":
        summary["test_recall_accuracy"] = final.recall_accuracy
        summary["random_baseline_loss"] = tasks.random_baseline_loss(
            tasks.CopyTaskSpec(T=exp.data.copy_T, k=exp.data.copy_k, n_digits=exp.data.n_digits))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return model, history
