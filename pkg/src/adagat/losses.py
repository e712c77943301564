"""Classification, alignment and composite objectives for guided adversarial training.

Naming: ``target_adv`` are the target model's logits on adversarial inputs,
``guide_clean`` the guide model's logits on the clean batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

METHODS = ("plain_at", "lbgat", "adagat_mse", "adagat_rmse")
GUIDED_METHODS = ("lbgat", "adagat_mse", "adagat_rmse")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch-mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise ad.ShapeError("cross_entropy", logits.shape, labels.shape)
    k = logits.shape[1]
    if labels.shape != (logits.shape[0],):
        raise ad.ShapeError("cross_entropy", logits.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"cross_entropy: labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    picked = ad.take_labels(logits, labels)
    return ad.mean(ad.sub(ad.logsumexp(logits, axis=1), picked))


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of (a - b)^2 over every element (batch and class dims)."""
    if a.shape != b.shape:
        raise ad.ShapeError("mse", a.shape, b.shape)
    return ad.mean(ad.square(ad.sub(a, b)))


def shared_loss(target_adv: Tensor, guide_clean: Tensor) -> Tensor:
    """Alignment term that backpropagates into both models."""
    return mse(target_adv, guide_clean)


def ada_mse(target_adv: Tensor, guide_clean: Tensor) -> Tensor:
    """Alignment term with the target side detached: only the guide is pulled."""
    if target_adv.shape != guide_clean.shape:
        raise ad.ShapeError("ada_mse", target_adv.shape, guide_clean.shape)
    return mse(ad.stop_gradient(target_adv), guide_clean)


def ada_rmse(target_adv: Tensor, guide_clean: Tensor) -> Tensor:
    if target_adv.shape != guide_clean.shape:
        raise ad.ShapeError("ada_rmse", target_adv.shape, guide_clean.shape)
    return ad.sqrt(ada_mse(target_adv, guide_clean))


def target_objective(target_adv: Tensor, guide_clean: Tensor) -> Tensor:
    return shared_loss(target_adv, guide_clean)


@dataclass
class LossBreakdown:
    """Raw (unweighted) component values plus the guide loss tensor for backward.

    ``ada`` is reported as 0 for LBGAT, which has no adaptive term.
    """

    ce: float
    shared: float
    ada: float
    lam: float
    total_guide: float
    total_target: float
    loss: Tensor | None = None

    def as_dict(self) -> dict[str, float]:
        return {
            "ce": self.ce,
            "shared": self.shared,
            "ada": self.ada,
            "lambda": self.lam,
            "total_guide": self.total_guide,
            "total_target": self.total_target,
        }


def guide_objective(method: str, guide_clean: Tensor, target_adv: Tensor, labels, lam: float) -> LossBreakdown:
    """Assemble CE + shared (+ lam * adaptive term) for the guide update."""
    if method not in GUIDED_METHODS:
        raise ValueError(f"unknown guided method {method!r}; expected one of {GUIDED_METHODS}")
    lam = float(lam)
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    ce = cross_entropy(guide_clean, labels)
    shared = shared_loss(target_adv, guide_clean)
    total = ad.add(ce, shared)
    if method == "lbgat":
        ada_val = 0.0
        lam = 0.0
    else:
        ada_fn = ada_mse if method == "adagat_mse" else ada_rmse
        ada = ada_fn(target_adv, guide_clean)
        total = ad.add(total, ad.scale(ada, lam))
        ada_val = ada.item()
    return LossBreakdown(
        ce=ce.item(),
        shared=shared.item(),
        ada=ada_val,
        lam=lam,
        total_guide=total.item(),
        total_target=shared.item(),
        loss=total,
    )
