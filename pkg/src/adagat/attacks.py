"""L-infinity FGSM / PGD attacks and robust-accuracy evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset
from .losses import cross_entropy
from .nn import ModelParams, forward

ATTACK_LOSSES = ("ce",)


@dataclass(frozen=True)
class AttackConfig:
    """``clamp_range=None`` leaves the input space unbounded."""

    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    steps: int = 10
    random_start: bool = True
    clamp_range: tuple[float, float] | None = (0.0, 1.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        # step 0 is only meaningful for the empty ball (FGSM at epsilon 0)
        if not (self.step_size > 0 or (self.step_size == 0 and self.epsilon == 0)):
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.clamp_range is not None:
            lo, hi = self.clamp_range
            object.__setattr__(self, "clamp_range", (float(lo), float(hi)))
            if not lo < hi:
                raise ValueError(f"clamp_range needs lo < hi, got {self.clamp_range}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clamp_range"] = list(self.clamp_range) if self.clamp_range is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        if d.get("clamp_range") is not None:
            d["clamp_range"] = tuple(d["clamp_range"])
        return cls(**d)


def named_attack(name: str, epsilon: float, clamp_range=(0.0, 1.0), step_size: float | None = None) -> AttackConfig:
    """``fgsm`` or ``pgdK`` (e.g. pgd20).  PGD step defaults to epsilon/4."""
    name = name.lower()
    if name == "fgsm":
        return AttackConfig(epsilon, epsilon, 1, False, clamp_range)
    if name.startswith("pgd") and name[3:].isdigit():
        alpha = epsilon / 4 if step_size is None else step_size
        return AttackConfig(epsilon, alpha, int(name[3:]), True, clamp_range)
    raise ValueError(f"unknown attack {name!r}; expected fgsm or pgd<k>")


def _input_gradient(model: ModelParams, x: np.ndarray, y: np.ndarray, loss: str) -> np.ndarray:
    xt = Tensor(x, requires_grad=True)
    out = cross_entropy(forward(model, xt), y)
    ad.backward(out)
    return xt.grad


def pgd_attack(model: ModelParams, x, y, cfg: AttackConfig, loss: str = "ce", seed: int | None = 0) -> np.ndarray:
    """Projected sign-gradient ascent on the attack loss inside the epsilon ball.

    Each step adds ``step_size * sign(grad)``, clips the perturbation to the
    ball and then clamps the point to ``clamp_range``.  Parameters are read
    through a constant view, so no gradient ever lands on them.
    """
    if loss not in ATTACK_LOSSES:
        raise ValueError(f"unknown attack loss {loss!r}; expected one of {ATTACK_LOSSES}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] != y.shape[0]:
        raise ad.ShapeError("pgd_attack", x.shape, y.shape)
    eps = cfg.epsilon
    if eps == 0:
        return x.copy()
    lo, hi = cfg.clamp_range if cfg.clamp_range is not None else (None, None)
    frozen = model.frozen()

    if cfg.random_start:
        delta = np.random.default_rng(seed).uniform(-eps, eps, size=x.shape)
    else:
        delta = np.zeros_like(x)
    x_adv = np.clip(x + delta, lo, hi) if cfg.clamp_range is not None else x + delta

    for _ in range(cfg.steps):
        g = _input_gradient(frozen, x_adv, y, loss)
        delta = np.clip(x_adv - x + cfg.step_size * np.sign(g), -eps, eps)
        x_adv = x + delta
        if cfg.clamp_range is not None:
            x_adv = np.clip(x_adv, lo, hi)
    return x_adv


def fgsm_attack(model: ModelParams, x, y, epsilon: float, clamp_range=(0.0, 1.0)) -> np.ndarray:
    cfg = AttackConfig(epsilon=epsilon, step_size=epsilon, steps=1, random_start=False, clamp_range=clamp_range)
    return pgd_attack(model, x, y, cfg, seed=None)


def accuracy(model: ModelParams, x, y, batch_size: int = 512) -> float:
    x = np.asarray(x)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    frozen = model.frozen()
    hits = 0
    for s in range(0, len(y), batch_size):
        hits += int((forward(frozen, x[s:s + batch_size]).data.argmax(axis=1) == y[s:s + batch_size]).sum())
    return hits / len(y)


def evaluate_robust_accuracy(model: ModelParams, dataset: Dataset, cfg: AttackConfig, seed: int = 0,
                             batch_size: int = 512) -> float:
    """Accuracy on attacked inputs; each batch's random start uses ``seed`` + batch index."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    frozen = model.frozen()
    hits = 0
    for b, s in enumerate(range(0, len(dataset), batch_size)):
        xb = dataset.inputs[s:s + batch_size]
        yb = dataset.labels[s:s + batch_size]
        x_adv = pgd_attack(frozen, xb, yb, cfg, seed=seed + b)
        hits += int((forward(frozen, x_adv).data.argmax(axis=1) == yb).sum())
    return hits / len(dataset)
