"""Adversarial loss-landscape slices around a batch.

The surface is spanned by an adversarial direction ``u = x_adv - x`` (from a
PGD attack) and a Rademacher direction ``v`` with entries +-epsilon.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, pgd_attack
from .losses import cross_entropy
from .nn import ModelParams, forward


@dataclass(frozen=True)
class GridSpec:
    alpha_range: tuple[float, float] = (-1.0, 1.0)
    beta_range: tuple[float, float] = (-1.0, 1.0)
    points: int = 21


@dataclass
class LandscapeGrid:
    alphas: np.ndarray
    betas: np.ndarray
    losses: np.ndarray
    u_norm: float
    v_norm: float
    anchor: str = "batch"
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FlatnessSummary:
    loss_range: float
    mean_gradient: float


def _axis(lo: float, hi: float, g: int) -> np.ndarray:
    vals = np.linspace(lo, hi, g)
    if lo == -hi:
        # exact antisymmetry, so the centre is exactly 0 and -v mirrors the grid
        vals = (vals - vals[::-1]) / 2
    return vals


def rademacher_direction(shape, epsilon: float, seed: int) -> np.ndarray:
    signs = np.random.default_rng(seed).integers(0, 2, size=shape) * 2 - 1
    return signs.astype(np.float64) * epsilon


def batch_loss(model: ModelParams, x, y) -> float:
    return cross_entropy(forward(model.frozen(), x), y).item()


def compute_landscape(
    model: ModelParams,
    x,
    y,
    attack_cfg: AttackConfig,
    grid: GridSpec = GridSpec(),
    seed: int = 0,
    v: np.ndarray | None = None,
    anchor: str = "batch",
) -> LandscapeGrid:
    """CE loss of ``model`` at ``clamp(x + alpha*u + beta*v)`` over the grid.

    ``v`` overrides the seeded Rademacher direction (used to probe sign symmetry).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("landscape needs a non-empty batch")
    if grid.points < 2:
        raise ValueError(f"grid needs at least 2 points per axis, got {grid.points}")
    frozen = model.frozen()
    u = pgd_attack(frozen, x, y, attack_cfg, seed=seed) - x
    if v is None:
        v = rademacher_direction(x.shape, attack_cfg.epsilon, seed + 1)
    alphas = _axis(*grid.alpha_range, grid.points)
    betas = _axis(*grid.beta_range, grid.points)
    clamp = attack_cfg.clamp_range
    losses = np.empty((len(alphas), len(betas)))
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            pt = x + a * u + b * v
            if clamp is not None:
                pt = np.clip(pt, *clamp)
            losses[i, j] = cross_entropy(forward(frozen, pt), y).item()
    meta = {
        "seed": seed,
        "attack": attack_cfg.to_dict(),
        "clamped": clamp is not None,
        "points": grid.points,
        "alpha_range": list(grid.alpha_range),
        "beta_range": list(grid.beta_range),
    }
    return LandscapeGrid(alphas, betas, losses, float(np.linalg.norm(u)), float(np.linalg.norm(v)), anchor, meta)


def flatness_summary(grid: LandscapeGrid) -> FlatnessSummary:
    """Loss range over the grid and the mean central-difference gradient norm at interior points.

    Axes with zero spacing contribute a zero partial derivative.
    """
    L = grid.losses
    a, b = grid.alphas, grid.betas
    if L.shape[0] < 3 or L.shape[1] < 3:
        return FlatnessSummary(float(L.max() - L.min()), 0.0)
    da = a[2:] - a[:-2]
    db = b[2:] - b[:-2]
    with np.errstate(divide="ignore", invalid="ignore"):
        ga = np.where(da[:, None] != 0, (L[2:, 1:-1] - L[:-2, 1:-1]) / da[:, None], 0.0)
        gb = np.where(db[None, :] != 0, (L[1:-1, 2:] - L[1:-1, :-2]) / db[None, :], 0.0)
    return FlatnessSummary(float(L.max() - L.min()), float(np.mean(np.hypot(ga, gb))))


def write_landscape(grid: LandscapeGrid, out_dir, extra: dict | None = None) -> tuple[Path, Path]:
    """Write landscape.csv (beta header row, alpha first column) and landscape.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "landscape.csv", out / "landscape.json"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha\\beta"] + [repr(float(b)) for b in grid.betas])
        for a, row in zip(grid.alphas, grid.losses):
            w.writerow([repr(float(a))] + [repr(float(v)) for v in row])
    side = {"u_norm": grid.u_norm, "v_norm": grid.v_norm, "anchor": grid.anchor, **grid.meta}
    summary = flatness_summary(grid)
    side["flatness"] = {"loss_range": summary.loss_range, "mean_gradient": summary.mean_gradient}
    if extra:
        side.update(extra)
    json_path.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def read_landscape_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    betas = np.array([float(v) for v in rows[0][1:]])
    alphas = np.array([float(r[0]) for r in rows[1:]])
    losses = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return alphas, betas, losses
