"""Flat ``key = value`` experiment configuration.

One file configures the model, the training run and the data source.  Keys
are the field names of :class:`QrnnConfig`, :class:`TrainRunConfig` and
:class:`DataConfig`; values are parsed to the field's declared type.
Unknown keys are errors.
"""

from __future__ import annotations

import typing
from dataclasses import asdict, dataclass, fields

from .model import QrnnConfig
from .training import TrainRunConfig

DATASETS = ("auto", "copy", "parity", "ints", "corpus", "toy_copy")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    dataset: str = "auto"  # auto picks copy / parity / corpus / toy_copy from the task
    data_dir: str = ""  # pre-generated integer-token files (gen-data output)
    data_seed: int = 1234
    copy_T: int = 50
    copy_k: int = 10
    n_digits: int = 8
    n_train: int = 5000
    n_test: int = 1000
    parity_length: int = 20
    parity_count: int = 10000
    test_fraction: float = 0.2
    corpus: str = ""
    vocab_limit: int = 10000
    lm_seq_len: int = 35
    toy_vocab: int = 8
    toy_min_len: int = 3
    toy_max_len: int = 6

    def validate(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in (0, 1)")
        if self.toy_min_len < 1 or self.toy_max_len < self.toy_min_len:
            raise ValueError("need 1 <= toy_min_len <= toy_max_len")

    def resolved_dataset(self, task: str) -> str:
        if self.dataset != "auto":
            return self.dataset
        return {"copy": "copy", "classify": "parity", "lm": "corpus", "seq2seq": "toy_copy"}[task]


SECTIONS = (("model", QrnnConfig), ("run", TrainRunConfig), ("data", DataConfig))


def _key_types() -> dict[str, tuple[str, type]]:
    out: dict[str, tuple[str, type]] = {}
    for section, cls in SECTIONS:
        hints = typing.get_type_hints(cls)
        for f in fields(cls):
            if f.name in out:
                raise RuntimeError(f"config key {f.name!r} is defined twice")
            out[f.name] = (section, hints[f.name])
    return out


KEYS = _key_types()


def _coerce(key: str, typ: type, raw: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r} is not a valid {typ.__name__}") from None


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; later keys win."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r} ({origin}:{lineno})")
        out[key] = value
    return out


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = value
    return out


@dataclass
class ExperimentConfig:
    model: QrnnConfig
    run: TrainRunConfig
    data: DataConfig

    def to_text(self) -> str:
        """Every key with its resolved value; parses back to an equal config."""
        lines = []
        for section, _ in SECTIONS:
            lines.append(f"# {section}")
            for k, v in asdict(getattr(self, section)).items():
                lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


def build(values: dict[str, str]) -> ExperimentConfig:
    """Typed config from raw strings; defaults fill anything not given."""
    kwargs: dict[str, dict] = {s: {} for s, _ in SECTIONS}
    for key, raw in values.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        section, typ = KEYS[key]
        kwargs[section][key] = _coerce(key, typ, raw)
    try:
        exp = ExperimentConfig(QrnnConfig(**kwargs["model"]), TrainRunConfig(**kwargs["run"]),
                               DataConfig(**kwargs["data"]))
        exp.run.validate()
        exp.data.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return exp


def load(path=None, overrides=None) -> ExperimentConfig:
    """Config file (optional) plus ``key=value`` overrides, which win."""
    values: dict[str, str] = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_text(fh.read(), str(path)))
    values.update(parse_overrides(overrides))
    return build(values)


def describe_keys() -> str:
    """One line per key: name, section, type and default."""
    rows = []
    for section, cls in SECTIONS:
        hints = typing.get_type_hints(cls)
        for f in fields(cls):
            rows.append(f"  {f.name:<20} {section:<6} {hints[f.name].__name__:<6} default={f.default!r}")
    return "\n".join(rows)
