"""Command line entry point: train, sweep, eval, landscape, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import nn
from .attacks import accuracy, evaluate_robust_accuracy, named_attack
from .data import IdxError, load_idx
from .harness import ExperimentSuite, SchemaError, report, run_name, run_suite
from .landscape import GridSpec, compute_landscape, flatness_summary, write_landscape
from .nn import CheckpointError
from .training import TrainRunConfig, load_datasets, materialize, run_experiment

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_SCHEMA = 5

log = logging.getLogger("adagat")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc


def _load_config(path, seed: int | None) -> TrainRunConfig:
    try:
        cfg = TrainRunConfig.from_dict(_read_json(path))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _eval_data(args, cfg: TrainRunConfig | None):
    if args.images or args.labels:
        if not (args.images and args.labels):
            raise ConfigError("--images and --labels must be given together")
        return load_idx(args.images, args.labels, split="test")
    if cfg is None:
        raise ConfigError("eval needs --config (dataset source) or --images/--labels")
    train, test = load_datasets(cfg.dataset, cfg.seed)
    return test if args.split == "test" else train


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.seed)
    out = Path(args.out) if args.out else Path("runs") / run_name(cfg)
    result = run_experiment(cfg, out)
    last = result.records[-1]
    print(f"{out}: epoch {last.epoch} target clean {last.target_clean_acc:.4f} "
          f"robust {last.target_robust_acc:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.suite:
        try:
            suite = ExperimentSuite.from_dict(_read_json(args.suite))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{args.suite}: {exc}") from exc
    elif args.config:
        suite = ExperimentSuite(base=_load_config(args.config, None))
    else:
        suite = ExperimentSuite(base=TrainRunConfig())
    if args.methods:
        suite.methods = args.methods
    if args.lambdas:
        suite.lambdas = args.lambdas
    if args.seeds:
        suite.seeds = args.seeds
    if args.epochs is not None:
        suite.base = replace(suite.base, epochs=args.epochs)
    if args.out:
        suite.output_root = args.out
    paths = run_suite(suite, jobs=args.jobs)
    print(f"{len(paths)} runs written under {suite.output_root}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = materialize(_load_config(args.config, None)) if args.config else None
    model = nn.load(args.checkpoint)
    data = _eval_data(args, cfg)
    if args.epsilon is not None:
        eps = args.epsilon
    elif cfg is not None:
        eps = cfg.eval_attack.epsilon
    else:
        eps = 8 / 255
    if args.images or cfg is None:
        clamp = None if args.no_clamp else (0.0, 1.0)
    else:
        clamp = cfg.eval_attack.clamp_range
    attack = named_attack(args.attack, eps, clamp)
    seed = args.seed if args.seed is not None else 0
    robust = evaluate_robust_accuracy(model, data, attack, seed=seed)
    clean = accuracy(model, data.inputs, data.labels)
    print(f"{args.attack} eps={eps:g}: accuracy {robust:.4f} (clean {clean:.4f}, n={len(data)})")
    return EXIT_OK


def cmd_landscape(args) -> int:
    cfg = materialize(_load_config(args.config, None))
    model = nn.load(args.checkpoint)
    _, test = load_datasets(cfg.dataset, cfg.seed)
    n = min(args.samples, len(test))
    attack = replace(cfg.eval_attack, steps=20)
    grid = compute_landscape(model, test.inputs[:n], test.labels[:n], attack,
                             GridSpec((-args.span, args.span), (-args.span, args.span), args.points),
                             seed=cfg.seed if args.seed is None else args.seed, anchor=f"test[:{n}]")
    csv_path, _ = write_landscape(grid, args.out, {"checkpoint": str(args.checkpoint)})
    s = flatness_summary(grid)
    print(f"{csv_path}: loss range {s.loss_range:.6f}, mean gradient {s.mean_gradient:.6f}")
    return EXIT_OK


def cmd_report(args) -> int:
    rep = report(args.runs)
    print(rep.text())
    if args.out:
        table, series = rep.write(args.out)
        print(f"wrote {table} and {series}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adagat", description="Guided adversarial co-training experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run one training configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="run a method x lambda x seed suite")
    s.add_argument("--suite", help="suite JSON (base config plus sweep axes)")
    s.add_argument("--config", help="base run config when no suite file is given")
    s.add_argument("--methods", nargs="+", choices=["plain_at", "lbgat", "adagat_mse", "adagat_rmse"])
    s.add_argument("--lambdas", nargs="+", type=float)
    s.add_argument("--seeds", nargs="+", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eval", help="robust accuracy of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="run config providing the dataset and default epsilon")
    e.add_argument("--images")
    e.add_argument("--labels")
    e.add_argument("--split", choices=["train", "test"], default="test")
    e.add_argument("--attack", default="pgd20")
    e.add_argument("--epsilon", type=float)
    e.add_argument("--no-clamp", action="store_true", help="leave IDX inputs unclamped")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    ls = sub.add_parser("landscape", help="export an adversarial loss-landscape grid")
    ls.add_argument("--checkpoint", required=True)
    ls.add_argument("--config", required=True)
    ls.add_argument("--out", required=True)
    ls.add_argument("--points", type=int, default=21)
    ls.add_argument("--span", type=float, default=1.0)
    ls.add_argument("--samples", type=int, default=128)
    ls.add_argument("--seed", type=int)
    ls.set_defaults(func=cmd_landscape)

    r = sub.add_parser("report", help="aggregate run directories into a comparison table")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    np.seterr(over="ignore", invalid="ignore")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        msg, code = str(exc), EXIT_MISSING
    except (ConfigError, IdxError, CheckpointError) as exc:
        msg, code = str(exc), EXIT_CONFIG
    except SchemaError as exc:
        msg, code = str(exc), EXIT_SCHEMA
    except (ValueError, OSError) as exc:
        msg, code = str(exc) or type(exc).__name__, EXIT_FAILURE
    print(f"adagat {args.command}: {msg.splitlines()[0] if msg else 'error'}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
