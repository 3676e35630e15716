"""Dataset generators and loaders: copying memory, parity, whitespace corpora.

Datasets on disk are plain text, one sample per line, space-separated
integers, next to a ``manifest.json`` holding the generating spec and seed.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

BLANK, DELIMITER = 0, 9
PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")

_SPLIT_STREAM = {"train": 0, "test": 1, "valid": 2}


@dataclass
class CopyTaskSpec:
    T: int = 200
    k: int = 10
    n_digits: int = 8
    n_train: int = 5000
    n_test: int = 1000
    seed: int = 0

    def validate(self):
        if self.T < 1 or self.k < 0 or self.n_train < 0 or self.n_test < 0:
            raise ValueError(f"invalid copy-task spec {self}")
        if not 2 <= self.n_digits <= 8:
            raise ValueError("n_digits must be in [2, 8] (symbols 0 and 9 are reserved)")

    @property
    def length(self) -> int:
        return self.T + 2 * self.k

    @property
    def n_symbols(self) -> int:
        return 10


def gen_copy_dataset(spec: CopyTaskSpec, split: str = "train", count: int | None = None):
    """Copy-memory samples: ``inputs``, ``targets`` of shape (count, T + 2k).

    Inputs: k payload digits from 1..n_digits, T - 1 blanks, then k + 1
    copies of the delimiter symbol (the first one marks the recall onset).
    Targets: blanks, except the final k positions which repeat the payload.
    """
    spec.validate()
    if count is None:
        count = spec.n_train if split == "train" else spec.n_test
    rng = np.random.default_rng([spec.seed, _SPLIT_STREAM[split]])
    L, k = spec.length, spec.k
    payload = rng.integers(1, spec.n_digits + 1, size=(count, k))
    inputs = np.full((count, L), BLANK, dtype=np.int64)
    inputs[:, :k] = payload
    inputs[:, spec.T + k - 1:] = DELIMITER
    targets = np.full((count, L), BLANK, dtype=np.int64)
    if k:
        targets[:, -k:] = payload
    check_copy_sample(spec, inputs, targets)
    return inputs, targets


def check_copy_sample(spec: CopyTaskSpec, inputs: np.ndarray, targets: np.ndarray) -> None:
    """Raise ``ValueError`` unless every row satisfies the copy-task layout."""
    k, T = spec.k, spec.T
    if inputs.shape[-1] != spec.length or targets.shape != inputs.shape:
        raise ValueError("copy-task arrays have the wrong length")
    pay = inputs[:, :k]
    ok = (
        ((pay >= 1) & (pay <= spec.n_digits)).all()
        and (inputs[:, k:T + k - 1] == BLANK).all()
        and (inputs[:, T + k - 1:] == DELIMITER).all()
        and (targets[:, :T + k] == BLANK).all()
        and (targets[:, T + k:] == pay).all()
    )
    if not ok:
        raise ValueError("malformed copy-task sample")


def random_baseline_loss(spec: CopyTaskSpec) -> float:
    """Mean cross-entropy over all T + 2k positions of a guesser that is exact
    on blank positions and uniform over n_digits - 1 candidates at recall."""
    spec.validate()
    return spec.k * math.log(spec.n_digits - 1) / (spec.T + 2 * spec.k)


def gen_parity_dataset(length: int, vocab: int = 2, count: int = 1000, seed: int = 0):
    """Random symbol strings over ``0..vocab-1``; label = parity of the number of ones."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if vocab < 2:
        raise ValueError("vocab must be >= 2")
    rng = np.random.default_rng(seed)
    seqs = rng.integers(0, vocab, size=(count, length))
    return seqs, parity_labels(seqs)


def parity_labels(seqs) -> np.ndarray:
    return (np.sum(np.asarray(seqs) == 1, axis=-1) % 2).astype(np.int64)


# ---------------------------------------------------------------- corpora

@dataclass
class TokenCorpus:
    vocab: dict[str, int]
    splits: dict[str, list[list[int]]] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.vocab)

    @property
    def itos(self) -> list[str]:
        out = [""] * len(self.vocab)
        for w, i in self.vocab.items():
            out[i] = w
        return out

    def encode(self, words: list[str]) -> list[int]:
        return [self.vocab.get(w, UNK) for w in words]

    def decode(self, ids) -> list[str]:
        itos = self.itos
        return [itos[i] for i in ids]


def _read_lines(path: Path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh if line.strip()]


def load_token_corpus(path, vocab_limit: int = 10000) -> TokenCorpus:
    """Whitespace-tokenized corpus, one sequence per line.

    ``path`` is a training file, or a directory with ``train.txt`` and
    optional ``valid.txt`` / ``test.txt``.  The vocabulary (size
    ``vocab_limit`` including the four specials) comes from the training split
    only, by descending count then lexicographic order; the rest map to UNK.
    """
    path = Path(path)
    if path.is_dir():
        files = {s: path / f"{s}.txt" for s in ("train", "valid", "test") if (path / f"{s}.txt").exists()}
        if "train" not in files:
            raise FileNotFoundError(f"no train.txt in {path}")
    elif path.exists():
        files = {"train": path}
    else:
        raise FileNotFoundError(path)
    if vocab_limit < len(SPECIALS):
        raise ValueError(f"vocab_limit must be at least {len(SPECIALS)}")
    raw = {s: _read_lines(f) for s, f in files.items()}
    if not raw["train"]:
        raise ValueError(f"empty training corpus: {files['train']}")
    counts = Counter(w for line in raw["train"] for w in line if w not in SPECIALS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    vocab = {w: i for i, w in enumerate(SPECIALS)}
    for w, _ in ranked[: vocab_limit - len(SPECIALS)]:
        vocab[w] = len(vocab)
    corpus = TokenCorpus(vocab)
    corpus.splits = {s: [corpus.encode(line) for line in lines] for s, lines in raw.items()}
    return corpus


def pad_sequences(seqs, pad: int = PAD, bos: int | None = None, eos: int | None = None):
    """Left-aligned padding; returns ``(array (N, Lmax), lengths)``."""
    seqs = [([bos] if bos is not None else []) + list(s) + ([eos] if eos is not None else []) for s in seqs]
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if len(seqs) == 0 or lengths.min() == 0:
        raise ValueError("cannot pad empty sequences")
    out = np.full((len(seqs), lengths.max()), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


def lm_windows(stream, seq_len: int) -> np.ndarray:
    """Cut a token stream into rows of ``seq_len + 1`` tokens (inputs + next tokens)."""
    stream = np.asarray(stream, dtype=np.int64)
    n = (len(stream) - 1) // seq_len
    if n < 1:
        raise ValueError("token stream shorter than one window")
    return np.stack([stream[i * seq_len: i * seq_len + seq_len + 1] for i in range(n)])


# ---------------------------------------------------------------- files

def write_int_rows(path, rows) -> None:
    with open(path, "w") as fh:
        for row in np.atleast_1d(rows):
            fh.write(" ".join(str(int(v)) for v in np.atleast_1d(row)) + "\n")


def read_int_rows(path) -> list[list[int]]:
    with open(path) as fh:
        return [[int(v) for v in line.split()] for line in fh if line.strip()]


def write_dataset(out_dir, name: str, inputs, targets, manifest: dict) -> Path:
    """``<name>.inputs.txt``, ``<name>.targets.txt`` plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_int_rows(out / f"{name}.inputs.txt", inputs)
    write_int_rows(out / f"{name}.targets.txt", targets)
    mpath = out / "manifest.json"
    existing = json.loads(mpath.read_text()) if mpath.exists() else {}
    existing.update(manifest)
    existing.setdefault("files", [])
    for f in (f"{name}.inputs.txt", f"{name}.targets.txt"):
        if f not in existing["files"]:
            existing["files"].append(f)
    mpath.write_text(json.dumps(existing, indent=2, sort_keys=True) + "\n")
    return out


def read_dataset(out_dir, name: str):
    out = Path(out_dir)
    inputs = read_int_rows(out / f"{name}.inputs.txt")
    targets = read_int_rows(out / f"{name}.targets.txt")
    if len(inputs) != len(targets):
        raise ValueError(f"{name}: {len(inputs)} input rows vs {len(targets)} target rows")
    return inputs, targets


def copy_spec_manifest(spec: CopyTaskSpec) -> dict:
    return {"task": "copy", "spec": asdict(spec)}


def gen_toy_copy_pairs(vocab: int, min_len: int, max_len: int, count: int, seed: int = 0):
    """Source/target pairs for an identity "translation" over word ids
    ``4 .. 4 + vocab - 1`` (ids below 4 are the specials)."""
    if vocab < 1 or min_len < 1 or max_len < min_len:
        raise ValueError("invalid toy-copy settings")
    rng = np.random.default_rng(seed)
    lens = rng.integers(min_len, max_len + 1, size=count)
    src = [list(rng.integers(len(SPECIALS), len(SPECIALS) + vocab, size=n)) for n in lens]
    return src, [list(s) for s in src]
