"""Command-line entry point: ``python -m qrnn <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
Errors go to stderr as ``ERROR <code>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfg
from . import diagnostics as diag
from . import tasks
from .ansatz import build_ansatz14, build_ry_layer
from .model import QRNN, QrnnConfig, TaskBatch
from .training import CheckpointError, NonFiniteError, evaluate, load_checkpoint

log = logging.getLogger("qrnn")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
GRADCHECK_TOL = 1e-5
NORM_TOL = 1e-9


class UsageError(ValueError):
    pass


class CheckFailed(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _experiment(args) -> cfg.ExperimentConfig:
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values.update(cfg.parse_text(fh.read(), args.config))
    values.update(cfg.parse_overrides(args.set))
    if args.seed is not None:
        values["seed"] = str(args.seed)
        values["init_seed"] = str(args.seed)
    return cfg.build(values)


def _snapshot(out: Path, exp: cfg.ExperimentConfig) -> None:
    (out / "resolved.cfg").write_text(exp.to_text())


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------- subcommands

def cmd_gen_data(args) -> int:
    from .experiment import write_generated

    exp = _experiment(args)
    out = _out_dir(args)
    _snapshot(out, exp)
    write_generated(exp, out)
    print(out)
    return EXIT_OK


def cmd_train(args) -> int:
    from .experiment import train_from_config

    exp = _experiment(args)
    out = _out_dir(args)
    _snapshot(out, exp)

    def progress(m):
        extra = "" if np.isnan(m.recall_accuracy) else f" recall {m.recall_accuracy:.4f}"
        print(f"epoch {m.epoch} {m.split} loss {m.loss:.5f} metric {m.metric:.4f}{extra} ({m.seconds:.1f}s)",
              file=sys.stderr)

    train_from_config(exp, out, progress)
    print((out / "summary.json").read_text(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .experiment import fit_model_config, load_datasets

    exp = _experiment(args)
    model, _ = load_checkpoint(args.checkpoint)
    exp = replace(exp, model=replace(model.config, dropout=exp.model.dropout))
    data = load_datasets(exp)
    if fit_model_config(model.config, data) != model.config:
        raise cfg.ConfigError("dataset vocabulary does not match the checkpoint's model")
    m = evaluate(model, data.test, copy_k=data.copy_k)
    result = {"test_loss": m.loss, "test_metric": m.metric}
    if data.kind == "copy":
        result["test_recall_accuracy"] = m.recall_accuracy
    out = _out_dir(args)
    _snapshot(out, exp)
    (out / "eval.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    _print_json(result)
    return EXIT_OK


def cmd_expressibility(args) -> int:
    spec = diag.ExpressibilitySpec(args.n_qubits, args.pairs, args.bins, args.seed, args.mode)
    spec.validate()
    layout = {"ansatz14": lambda: build_ansatz14(args.n_qubits, args.layers),
              "ry": lambda: build_ry_layer(args.n_qubits),
              "haar": lambda: None}[args.circuit]()
    res = diag.expressibility(spec, layout)
    out = _out_dir(args)
    res.to_csv(out / "expressibility.csv")
    (out / "resolved.json").write_text(json.dumps(vars(args) | {"func": None}, indent=2, sort_keys=True) + "\n")
    print(f"{res.kl:.6f}")
    return EXIT_OK


def _profile_batch(model: QRNN, T: int, batch: int, seed: int) -> TaskBatch:
    c = model.config
    if c.task == "copy":
        spec = tasks.CopyTaskSpec(T=T, k=10, n_test=batch, seed=seed)
        return TaskBatch(*tasks.gen_copy_dataset(spec, "test"))
    rng = np.random.default_rng(seed)
    ids = rng.integers(1, c.vocab_size, size=(batch, T))
    if c.task == "classify":
        return TaskBatch(ids, rng.integers(0, c.n_classes, size=batch))
    return TaskBatch(ids)


def cmd_gradprofile(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    batch = _profile_batch(model, args.T, args.batch_size, args.seed)
    prof = diag.grad_profile(model, batch)
    out = _out_dir(args)
    prof.to_csv(out / "gradprofile.csv")
    (out / "resolved.json").write_text(json.dumps(vars(args) | {"func": None}, indent=2, sort_keys=True) + "\n")
    _print_json({"T": len(prof.norms), "batch_size": prof.batch_size,
                 "normalized_first": float(prof.normalized[0]), "normalized_last": float(prof.normalized[-1])})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    extra = {"copy": dict(vocab_size=10, n_classes=10), "lm": dict(vocab_size=12),
             "seq2seq": dict(vocab_size=9, tgt_vocab_size=11), "classify": dict(vocab_size=5)}[args.task]
    config = QrnnConfig(task=args.task, n_qubits=args.n_qubits, hidden=args.hidden, embed_dim=args.embed_dim,
                        activation=args.activation, init_seed=args.seed, **extra)
    model = QRNN(config)
    res = diag.gradient_check(model, diag.random_check_batch(config, args.T, 2, args.seed), seed=args.seed)
    print(f"max_rel_error {res.max_rel_error:.3e} over {res.n_checked} entries")
    if res.max_rel_error >= GRADCHECK_TOL:
        raise CheckFailed(f"gradient check failed: {res.max_rel_error:.3e} >= {GRADCHECK_TOL}")
    return EXIT_OK


def cmd_norm_audit(args) -> int:
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
    else:
        model = QRNN(QrnnConfig(task="classify", n_qubits=args.n_qubits, vocab_size=16, init_seed=args.seed))
    rng = np.random.default_rng(args.seed)
    tokens = rng.integers(1, model.config.vocab_size, size=(1, args.T))
    dev = diag.norm_audit(model, tokens)
    print(f"max_norm_deviation {dev:.3e}")
    if dev >= NORM_TOL:
        raise CheckFailed(f"norm deviation {dev:.3e} >= {NORM_TOL}")
    return EXIT_OK


def cmd_info(args) -> int:
    from .experiment import fit_model_config, load_datasets

    exp = _experiment(args)
    config = exp.model
    if args.with_data:
        config = fit_model_config(config, load_datasets(exp))
    model = QRNN(config)
    report = model.parameter_report()
    report["readout_width"] = config.readout_dim
    report["circuit_parameters"] = model.layout.param_count
    _print_json(report)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _config_args(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, help="sets both seed and init_seed")


def build_parser() -> argparse.ArgumentParser:
    keys = "recognized config keys (name, section, type, default):\n" + cfg.describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="qrnn", description="Quantum-recurrent sequence models: simulate, train, diagnose.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a dataset plus manifest", epilog=keys, formatter_class=fmt)
    _config_args(p)
    p.add_argument("--out", default="data")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model", epilog=keys, formatter_class=fmt)
    _config_args(p)
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the configured test split", epilog=keys,
                       formatter_class=fmt)
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="runs/eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("expressibility", help="KL divergence of circuit fidelities from Haar")
    p.add_argument("--n-qubits", type=int, default=4)
    p.add_argument("--circuit", choices=("ansatz14", "ry", "haar"), default="ansatz14")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--pairs", type=int, default=5000)
    p.add_argument("--bins", type=int, default=75)
    p.add_argument("--mode", choices=("pairs", "pool"), default="pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/expressibility")
    p.set_defaults(func=cmd_expressibility)

    p = sub.add_parser("gradprofile", help="per-timestep readout gradient norms of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/gradprofile")
    p.set_defaults(func=cmd_gradprofile)

    p = sub.add_parser("gradcheck", help="finite differences vs. tape gradients on a random model")
    p.add_argument("--n-qubits", type=int, default=4)
    p.add_argument("--task", choices=("classify", "lm", "copy", "seq2seq"), default="classify")
    p.add_argument("--activation", default="leaky_relu")
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--embed-dim", type=int, default=4)
    p.add_argument("--T", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("norm-audit", help="max | ||h_t||^2 - 1 | along a long unroll")
    p.add_argument("--checkpoint")
    p.add_argument("--n-qubits", type=int, default=8)
    p.add_argument("--T", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_norm_audit)

    p = sub.add_parser("info", help="parameter-count accounting for a config", epilog=keys, formatter_class=fmt)
    _config_args(p)
    p.add_argument("--with-data", action="store_true", help="size vocabularies from the configured dataset")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"ERROR {EXIT_INVALID}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        return args.func(args)
    except (NonFiniteError, CheckFailed, FloatingPointError, OSError) as exc:
        print(f"ERROR {EXIT_RUNTIME}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (cfg.ConfigError, CheckpointError, ValueError, KeyError) as exc:
        print(f"ERROR {EXIT_INVALID}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
