"""Experiment suites (method x lambda x seed sweeps) and run aggregation."""

from __future__ import annotations

import csv
import json
import statistics
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .training import DatasetConfig, MetricsRecord, TrainRunConfig, read_metrics, run_experiment

ADAGAT_METHODS = ("adagat_mse", "adagat_rmse")


class SchemaError(ValueError):
    """A run directory is missing files or its metrics disagree with the others."""


def run_name(cfg: TrainRunConfig) -> str:
    name = f"{cfg.dataset.kind}-{cfg.method}"
    if cfg.method in ADAGAT_METHODS:
        name += f"-lam{cfg.lam:g}"
    return f"{name}-seed{cfg.seed}"


@dataclass
class ExperimentSuite:
    """Cross product of methods x lambdas x seeds x datasets over a base config.

    Lambda only varies for AdaGAT methods; the others run once per seed.
    """

    base: TrainRunConfig
    methods: list[str] = field(default_factory=lambda: ["plain_at", "lbgat", "adagat_mse", "adagat_rmse"])
    lambdas: list[float] = field(default_factory=lambda: [2.5])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    datasets: list[DatasetConfig] | None = None
    output_root: str = "runs"

    def expand(self) -> list[TrainRunConfig]:
        out = []
        for ds in self.datasets or [self.base.dataset]:
            for method in self.methods:
                lams = self.lambdas if method in ADAGAT_METHODS else [self.base.lam]
                for lam in lams:
                    for seed in self.seeds:
                        out.append(replace(self.base, method=method, lam=float(lam), seed=int(seed), dataset=ds))
        names = [run_name(c) for c in out]
        if len(set(names)) != len(names):
            raise ValueError("suite produces duplicate run directories")
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSuite":
        unknown = set(d) - {"base", "methods", "lambdas", "seeds", "datasets", "output_root"}
        if unknown:
            raise ValueError(f"unknown suite keys: {sorted(unknown)}")
        kw = {"base": TrainRunConfig.from_dict(d.get("base", {}))}
        for key in ("methods", "lambdas", "seeds", "output_root"):
            if key in d:
                kw[key] = d[key]
        if d.get("datasets") is not None:
            kw["datasets"] = [DatasetConfig(**x) for x in d["datasets"]]
        return cls(**kw)


def _run_one(args):
    cfg, root = args
    path = Path(root) / run_name(cfg)
    run_experiment(cfg, path)
    return path


def run_suite(suite: ExperimentSuite, jobs: int = 1) -> list[Path]:
    work = [(cfg, suite.output_root) for cfg in suite.expand()]
    if jobs <= 1:
        return [_run_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, work))


# -- reporting ----------------------------------------------------------------


@dataclass
class RunSummary:
    path: Path
    dataset: str
    method: str
    lam: float | None
    seed: int
    records: list[MetricsRecord]

    @property
    def group(self) -> tuple[str, str, float | None]:
        return self.dataset, self.method, self.lam


def discover_runs(roots) -> list[Path]:
    """Directories holding a config.json, searched recursively under each root."""
    found = []
    for root in map(Path, roots):
        if not root.exists():
            raise FileNotFoundError(f"run root {root} does not exist")
        if (root / "config.json").is_file():
            found.append(root)
        else:
            found.extend(sorted(p.parent for p in root.rglob("config.json")))
    return sorted(set(found))


def load_run(path) -> RunSummary:
    path = Path(path)
    cfg_path, metrics_path = path / "config.json", path / "metrics.csv"
    if not cfg_path.is_file():
        raise SchemaError(f"{path}: missing config.json")
    if not metrics_path.is_file():
        raise SchemaError(f"{path}: missing metrics.csv")
    try:
        cfg = TrainRunConfig.from_dict(json.loads(cfg_path.read_text()))
        records = read_metrics(metrics_path)
    except (ValueError, KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    if not records:
        raise SchemaError(f"{path}: metrics.csv has no records")
    lam = cfg.lam if cfg.method in ADAGAT_METHODS else None
    return RunSummary(path, cfg.dataset.kind, cfg.method, lam, cfg.seed, records)


def _mean_std(values: list[float]) -> tuple[float, float | None]:
    mean = statistics.fmean(values)
    return mean, (statistics.stdev(values) if len(values) > 1 else None)


REPORT_COLUMNS = [
    "dataset", "method", "lambda", "n_runs", "final_epoch",
    "guide_clean_mean", "guide_clean_sample_std",
    "target_clean_mean", "target_clean_sample_std",
    "target_robust_mean", "target_robust_sample_std",
]


@dataclass
class Report:
    rows: list[dict]
    series: list[dict]

    def text(self) -> str:
        lines = ["std = sample standard deviation (n-1); '-' when a group has a single run"]
        head = f"{'dataset':<16} {'method':<12} {'lambda':>6} {'n':>3} {'guide clean':>16} " \
               f"{'target clean':>16} {'target robust':>16}"
        lines += [head, "-" * len(head)]

        def cell(mean, std):
            if mean is None:
                return f"{'-':>16}"
            s = "-" if std is None else f"{std:.4f}"
            return f"{mean:>8.4f} ± {s:<6}"

        for r in self.rows:
            lam = "-" if r["lambda"] is None else f"{r['lambda']:g}"
            lines.append(
                f"{r['dataset']:<16} {r['method']:<12} {lam:>6} {r['n_runs']:>3} "
                f"{cell(r['guide_clean_mean'], r['guide_clean_sample_std'])} "
                f"{cell(r['target_clean_mean'], r['target_clean_sample_std'])} "
                f"{cell(r['target_robust_mean'], r['target_robust_sample_std'])}"
            )
        return "\n".join(lines)

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table, series = out / "report.csv", out / "series.csv"
        _write_dicts(table, REPORT_COLUMNS, self.rows)
        _write_dicts(series, ["dataset", "method", "lambda", "epoch", "n_runs", "guide_clean_mean",
                              "target_clean_mean", "target_robust_mean"], self.series)
        return table, series


def _write_dicts(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in columns])


def report(run_roots) -> Report:
    """Aggregate final records per (dataset, method, lambda) and merge per-epoch series."""
    runs = [load_run(p) for p in discover_runs(run_roots)]
    if not runs:
        raise SchemaError(f"no completed runs under {', '.join(map(str, run_roots))}")
    groups: dict[tuple, list[RunSummary]] = defaultdict(list)
    for run in runs:
        groups[run.group].append(run)

    rows, series = [], []
    for key in sorted(groups, key=lambda k: (k[0], k[1], -1.0 if k[2] is None else k[2])):
        members = groups[key]
        epochs = {tuple(r.epoch for r in m.records) for m in members}
        if len(epochs) != 1:
            raise SchemaError(f"runs for {key} disagree on recorded epochs: "
                              + ", ".join(str(m.path) for m in members))
        finals = [m.records[-1] for m in members]
        row = {"dataset": key[0], "method": key[1], "lambda": key[2], "n_runs": len(members),
               "final_epoch": finals[0].epoch}
        for col, attr in (("guide_clean", "guide_clean_acc"), ("target_clean", "target_clean_acc"),
                          ("target_robust", "target_robust_acc")):
            vals = [getattr(f, attr) for f in finals]
            if any(v is None for v in vals):
                if not all(v is None for v in vals):
                    raise SchemaError(f"runs for {key} mix present and missing {attr}")
                row[f"{col}_mean"] = row[f"{col}_sample_std"] = None
            else:
                row[f"{col}_mean"], row[f"{col}_sample_std"] = _mean_std(vals)
        rows.append(row)
        for i, epoch in enumerate(next(iter(epochs))):
            point = {"dataset": key[0], "method": key[1], "lambda": key[2], "epoch": epoch, "n_runs": len(members)}
            for col, attr in (("guide_clean_mean", "guide_clean_acc"), ("target_clean_mean", "target_clean_acc"),
                              ("target_robust_mean", "target_robust_acc")):
                vals = [getattr(m.records[i], attr) for m in members]
                point[col] = None if any(v is None for v in vals) else statistics.fmean(vals)
            series.append(point)
    return Report(rows, series)
