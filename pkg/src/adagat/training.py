"""Guided adversarial co-training (AdaGAT / LBGAT) and the plain PGD-AT baseline."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import nn
from .attacks import AttackConfig, accuracy, evaluate_robust_accuracy, pgd_attack
from .data import (
    SYNTHETIC_KINDS,
    Dataset,
    batches,
    coordinate_range,
    load_idx,
    make_synthetic,
    standardize,
    train_test_split,
)
from .losses import (
    GUIDED_METHODS,
    METHODS,
    LossBreakdown,
    ada_mse,
    ada_rmse,
    cross_entropy,
    guide_objective,
    shared_loss,
    target_objective,
)
from .nn import SGD, ModelParams, forward

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "guide_clean_acc", "target_clean_acc", "target_robust_acc", "ce", "shared", "ada"]

# stable stream tags for seed derivation; never reorder
_STREAMS = {"data": 1, "split": 2, "guide_init": 3, "target_init": 4, "shuffle": 5, "attack": 6, "eval": 7}


def derive_seed(seed: int, stream: str, *extra: int) -> int:
    ss = np.random.SeedSequence([int(seed), _STREAMS[stream], *map(int, extra)])
    return int(ss.generate_state(1)[0])


# -- configuration ------------------------------------------------------------


@dataclass
class ModelConfig:
    """Architecture and optimizer settings for one model.

    The learning rate default is small because the logit-space MSE terms have
    curvature that scales with hidden width; larger steps diverge.
    """

    arch: str = "mlp"
    width: int = 64
    lr: float = 5e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4


@dataclass
class DatasetConfig:
    """Synthetic kinds take n_train/n_test/noise; ``idx`` reads the four file paths.

    ``standardize`` rescales synthetic inputs to zero mean / unit variance per
    feature using training-split statistics (ignored for idx images).
    """

    kind: str = "two_moons"
    n_train: int = 400
    n_test: int = 400
    num_classes: int = 2
    noise: float = 0.1
    standardize: bool = True
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


@dataclass
class TrainRunConfig:
    method: str = "adagat_mse"
    lam: float = 2.5
    epochs: int = 30
    batch_size: int = 64
    guide: ModelConfig | None = field(default_factory=ModelConfig)
    target: ModelConfig = field(default_factory=lambda: ModelConfig(width=256))
    attack: AttackConfig | None = None
    eval_attack: AttackConfig | None = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    seed: int = 0
    eval_every: int = 10
    target_sees_updated_guide: bool = True
    lr_milestones: tuple[float, ...] = (0.5, 0.75)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and eval_every >= 1 are required")
        if self.method == "plain_at":
            self.guide = None
        elif self.guide is None:
            self.guide = ModelConfig()
        self.lr_milestones = tuple(float(m) for m in self.lr_milestones)

    @property
    def guided(self) -> bool:
        return self.method in GUIDED_METHODS

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "lambda": self.lam,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "guide": asdict(self.guide) if self.guide is not None else None,
            "target": asdict(self.target),
            "attack": self.attack.to_dict() if self.attack is not None else None,
            "eval_attack": self.eval_attack.to_dict() if self.eval_attack is not None else None,
            "dataset": asdict(self.dataset),
            "seed": self.seed,
            "eval_every": self.eval_every,
            "target_sees_updated_guide": self.target_sees_updated_guide,
            "lr_milestones": list(self.lr_milestones),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRunConfig":
        known = {"method", "lambda", "epochs", "batch_size", "guide", "target", "attack", "eval_attack",
                 "dataset", "seed", "eval_every", "target_sees_updated_guide", "lr_milestones"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        if "lambda" in d:
            kw["lam"] = float(d["lambda"])
        for key in ("method", "epochs", "batch_size", "seed", "eval_every", "target_sees_updated_guide",
                    "lr_milestones"):
            if key in d:
                kw[key] = d[key]
        if "guide" in d:
            kw["guide"] = ModelConfig(**d["guide"]) if d["guide"] is not None else None
        if "target" in d:
            kw["target"] = ModelConfig(**d["target"])
        for key in ("attack", "eval_attack"):
            if d.get(key) is not None:
                kw[key] = AttackConfig.from_dict(d[key])
        if "dataset" in d:
            kw["dataset"] = DatasetConfig(**d["dataset"])
        return cls(**kw)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_datasets(cfg: DatasetConfig, seed: int) -> tuple[Dataset, Dataset]:
    if cfg.kind in SYNTHETIC_KINDS:
        full = make_synthetic(cfg.kind, cfg.n_train + cfg.n_test, cfg.num_classes, cfg.noise,
                              seed=derive_seed(seed, "data"))
        train, test = train_test_split(full, cfg.n_test / (cfg.n_train + cfg.n_test), derive_seed(seed, "split"))
        if cfg.standardize:
            train, test = standardize(train, test)
        return train, test
    if cfg.kind == "idx":
        paths = [cfg.train_images, cfg.train_labels, cfg.test_images, cfg.test_labels]
        if any(p is None for p in paths):
            raise ValueError("idx dataset needs train_images, train_labels, test_images and test_labels")
        train = load_idx(cfg.train_images, cfg.train_labels, cfg.num_classes, "train")
        test = load_idx(cfg.test_images, cfg.test_labels, cfg.num_classes, "test")
        return train, test
    raise ValueError(f"unsupported dataset kind {cfg.kind!r}")


def default_attack(train: Dataset, steps: int, kind: str) -> AttackConfig:
    """Image data: eps 8/255, alpha 2/255 in [0, 1].  Synthetic data: eps = 0.1 x coordinate range, alpha = eps/4, no clamp."""
    if kind == "idx":
        return AttackConfig(8 / 255, 2 / 255, steps, True, (0.0, 1.0))
    eps = 0.1 * coordinate_range(train)
    return AttackConfig(eps, eps / 4, steps, True, None)


def materialize(cfg: TrainRunConfig) -> TrainRunConfig:
    """Fill data-dependent defaults so the stored config reproduces the run on its own."""
    if cfg.attack is not None and cfg.eval_attack is not None:
        return cfg
    train, _ = load_datasets(cfg.dataset, cfg.seed)
    return replace(
        cfg,
        attack=cfg.attack or default_attack(train, 10, cfg.dataset.kind),
        eval_attack=cfg.eval_attack or default_attack(train, 20, cfg.dataset.kind),
    )


# -- metrics ------------------------------------------------------------------


@dataclass
class MetricsRecord:
    epoch: int
    guide_clean_acc: float | None
    target_clean_acc: float
    target_robust_acc: float
    ce: float | None = None
    shared: float | None = None
    ada: float | None = None

    def row(self) -> list[str]:
        return ["" if v is None else (str(v) if isinstance(v, int) else repr(float(v)))
                for v in (self.epoch, self.guide_clean_acc, self.target_clean_acc, self.target_robust_acc,
                          self.ce, self.shared, self.ada)]

    @classmethod
    def from_row(cls, row: dict) -> "MetricsRecord":
        def f(key):
            v = row.get(key, "")
            return None if v in ("", None) else float(v)

        return cls(int(row["epoch"]), f("guide_clean_acc"), f("target_clean_acc"), f("target_robust_acc"),
                   f("ce"), f("shared"), f("ada"))


def write_metrics(path, records: list[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in records:
            w.writerow(r.row())


def read_metrics(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        return [MetricsRecord.from_row(r) for r in reader]


# -- single steps -------------------------------------------------------------

Probe = Callable[[str, "ModelParams | None", ModelParams], None]


def train_step_adagat(
    x: np.ndarray,
    y: np.ndarray,
    guide: ModelParams,
    target: ModelParams,
    guide_opt: SGD,
    target_opt: SGD,
    cfg: TrainRunConfig,
    attack_seed: int,
    probe: Probe | None = None,
    x_adv: np.ndarray | None = None,
) -> LossBreakdown:
    """One mini-batch of guided co-training.

    Guide phase: the guide objective is backpropagated with the target's
    adversarial logits held constant, so only guide gradients exist when the
    guide optimizer steps.  Target phase: the shared loss is backpropagated
    with the guide's clean logits held constant.  ``probe(phase, guide,
    target)`` is called after each backward, before the optimizer step.
    """
    if len(y) == 0:
        raise ValueError("empty batch")
    if not cfg.guided:
        raise ValueError(f"method {cfg.method!r} does not use a guide")
    if x_adv is None:
        x_adv = pgd_attack(target, x, y, cfg.attack, seed=attack_seed)

    guide_logits = forward(guide, x)
    target_adv_const = forward(target.frozen(), x_adv)
    parts = guide_objective(cfg.method, guide_logits, target_adv_const, y, cfg.lam)
    ad.backward(parts.loss)
    if probe is not None:
        probe("guide", guide, target)
    guide_opt.step(guide)

    if cfg.target_sees_updated_guide:
        guide_clean = forward(guide.frozen(), x)
    else:
        guide_clean = ad.stop_gradient(guide_logits)
    target_adv = forward(target, x_adv)
    ad.backward(target_objective(target_adv, guide_clean))
    if probe is not None:
        probe("target", guide, target)
    target_opt.step(target)
    guide.zero_grad()
    parts.loss = None
    return parts


def train_step_plain_at(x, y, target: ModelParams, target_opt: SGD, cfg: TrainRunConfig, attack_seed: int) -> float:
    if len(y) == 0:
        raise ValueError("empty batch")
    x_adv = pgd_attack(target, x, y, cfg.attack, seed=attack_seed)
    loss = cross_entropy(forward(target, x_adv), y)
    ad.backward(loss)
    target_opt.step(target)
    return loss.item()


def gradient_attribution(guide: ModelParams, target: ModelParams, x, x_adv, y, method: str,
                         lam: float) -> dict[str, dict[str, dict[str, np.ndarray]]]:
    """Per-term parameter gradients of the guide objective on a live two-model graph.

    Returns ``{term: {"guide": {name: grad}, "target": {name: grad}}}`` for the
    terms ``ce``, ``shared`` and ``ada`` (the latter already scaled by lam).
    Parameters with no gradient path report an all-zero array.  Models are
    copied, so the callers' gradients are untouched.
    """
    out = {}
    lam = 0.0 if method == "lbgat" else float(lam)
    ada_fn = ada_rmse if method == "adagat_rmse" else ada_mse
    for term in ("ce", "shared", "ada"):
        g, t = guide.snapshot(), target.snapshot()
        gl, tl = forward(g, x), forward(t, x_adv)
        if term == "ce":
            loss = cross_entropy(gl, y)
        elif term == "shared":
            loss = shared_loss(tl, gl)
        else:
            loss = ad.scale(ada_fn(tl, gl), lam)
        ad.backward(loss)
        out[term] = {
            "guide": {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in g.entries.items()},
            "target": {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in t.entries.items()},
        }
    return out


# -- full runs ----------------------------------------------------------------


@dataclass
class RunResult:
    path: Path | None
    records: list[MetricsRecord]
    guide: ModelParams | None
    target: ModelParams
    config: TrainRunConfig


def _record(epoch, guide, target, test, cfg, sums, nb) -> MetricsRecord:
    mean = (lambda k: sums[k] / nb if nb and k in sums else None)
    return MetricsRecord(
        epoch=epoch,
        guide_clean_acc=accuracy(guide, test.inputs, test.labels) if guide is not None else None,
        target_clean_acc=accuracy(target, test.inputs, test.labels),
        target_robust_acc=evaluate_robust_accuracy(target, test, cfg.eval_attack, seed=derive_seed(cfg.seed, "eval")),
        ce=mean("ce"),
        shared=mean("shared"),
        ada=mean("ada"),
    )


def _lr_at(base: float, epoch: int, cfg: TrainRunConfig) -> float:
    drops = sum(1 for m in cfg.lr_milestones if epoch >= int(m * cfg.epochs))
    return base * (0.1 ** drops)


def train(cfg: TrainRunConfig, datasets: tuple[Dataset, Dataset] | None = None) -> RunResult:
    """Run the full training loop in memory and return records plus final models."""
    cfg = materialize(cfg)
    train_ds, test_ds = datasets if datasets is not None else load_datasets(cfg.dataset, cfg.seed)
    k = train_ds.num_classes
    target = nn.build_model(cfg.target.arch, train_ds.input_dims, k, derive_seed(cfg.seed, "target_init"),
                            width=cfg.target.width)
    target_opt = SGD(cfg.target.lr, cfg.target.momentum, cfg.target.weight_decay)
    guide = guide_opt = None
    if cfg.guided:
        guide = nn.build_model(cfg.guide.arch, train_ds.input_dims, k, derive_seed(cfg.seed, "guide_init"),
                               width=cfg.guide.width)
        guide_opt = SGD(cfg.guide.lr, cfg.guide.momentum, cfg.guide.weight_decay)

    records = [_record(0, guide, target, test_ds, cfg, {}, 0)]
    for epoch in range(cfg.epochs):
        target_opt.lr = _lr_at(cfg.target.lr, epoch, cfg)
        if guide_opt is not None:
            guide_opt.lr = _lr_at(cfg.guide.lr, epoch, cfg)
        sums: dict[str, float] = {}
        nb = 0
        for step, (xb, yb) in enumerate(batches(train_ds, cfg.batch_size, derive_seed(cfg.seed, "shuffle", epoch))):
            seed = derive_seed(cfg.seed, "attack", epoch, step)
            if cfg.guided:
                parts = train_step_adagat(xb, yb, guide, target, guide_opt, target_opt, cfg, seed)
                for key in ("ce", "shared", "ada"):
                    sums[key] = sums.get(key, 0.0) + getattr(parts, key)
            else:
                sums["ce"] = sums.get("ce", 0.0) + train_step_plain_at(xb, yb, target, target_opt, cfg, seed)
            nb += 1
        done = epoch + 1
        if done % cfg.eval_every == 0 or done == cfg.epochs:
            rec = _record(done, guide, target, test_ds, cfg, sums, nb)
            records.append(rec)
            log.info("epoch %d: %s", done, rec)
    return RunResult(None, records, guide, target, cfg)


def run_experiment(cfg: TrainRunConfig, out_dir) -> RunResult:
    """Train and persist config.json, metrics.csv and the checkpoints under ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create run directory {out}: {exc}") from exc
    result = train(cfg)
    try:
        (out / "config.json").write_text(result.config.canonical_json())
        write_metrics(out / "metrics.csv", result.records)
        nn.save(result.target, out / "target.ckpt")
        if result.guide is not None:
            nn.save(result.guide, out / "guide.ckpt")
    except OSError as exc:
        raise OSError(f"failed writing run artifacts to {out}: {exc}") from exc
    result.path = out
    return result
