"""Hybrid segmentation loss: focal + Laplace-smoothed dice + per-pixel hinge,
plus the binary cross-entropy used by the presence classifiers.

The hinge consumes raw logits (a hinge on values confined to (0,1) could
never satisfy its margin); focal and dice consume sigmoid probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import ops
from .errors import ShapeError
from .tensor import Tensor

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    w_focal: float = 0.5
    w_dice: float = 1.0
    w_lovasz: float = 0.5
    alpha: float = 0.25
    beta: float = 2.0
    focal_positive_only: bool = False

    def __post_init__(self):
        for name in ("w_focal", "w_dice", "w_lovasz", "alpha", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


@dataclass
class LossReport:
    """Weighted total and its components; `branches` carries the per-branch
    breakdown when several supervision branches were averaged."""

    total: Tensor
    focal: Tensor
    dice: Tensor
    lovasz: Tensor
    branches: dict[str, "LossReport"] = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        return {
            "total": self.total.item(),
            "focal": self.focal.item(),
            "dice": self.dice.item(),
            "lovasz": self.lovasz.item(),
        }


def _check_pair(pred: Tensor, target: Tensor, name: str) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"{name}: prediction shape {pred.shape} != target shape {target.shape}")


def focal_loss(prob: Tensor, target: Tensor, alpha: float = 0.25, beta: float = 2.0,
               positive_only: bool = False) -> Tensor:
    """Label-conditioned binary focal loss, averaged over all pixels.

    Positive pixels contribute -alpha * (1-p)^beta * log p, negative pixels
    -(1-alpha) * p^beta * log(1-p). `positive_only` drops the label term and
    applies the positive-class expression to every pixel.
    """
    _check_pair(prob, target, "focal_loss")
    p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS)
    pos = -alpha * ((1.0 - p) ** beta) * p.log()
    if positive_only:
        return pos.mean()
    y = target
    neg = -(1.0 - alpha) * (p ** beta) * (1.0 - p).log()
    return (y * pos + (1.0 - y) * neg).mean()


def laplace_dice_loss(prob: Tensor, target: Tensor) -> Tensor:
    """1 - (2*intersection + 1) / (sum(Y) + sum(Yhat) + 1) per batch item,
    averaged over the batch; the +1 smoothing keeps empty masks at loss 0."""
    _check_pair(prob, target, "laplace_dice_loss")
    axes = tuple(range(1, prob.ndim))
    inter = (prob * target).sum(axis=axes)
    denom = prob.sum(axis=axes) + target.sum(axis=axes) + 1.0
    return (1.0 - (inter * 2.0 + 1.0) / denom).mean()


def lovasz_hinge_loss(score: Tensor, target: Tensor) -> Tensor:
    """Per-pixel hinge on logits against {-1,+1} labels: mean of (1 - y*s)+."""
    _check_pair(score, target, "lovasz_hinge_loss")
    y_pm = target * 2.0 - 1.0
    return ops.relu(1.0 - y_pm * score).mean()


def mixed_seg_loss(logit: Tensor, target: Tensor, weights: LossWeights | None = None) -> LossReport:
    """Weighted sum of the three components over a batch of logit maps.

    The total decomposes exactly: total = w_focal*focal + w_dice*dice +
    w_lovasz*lovasz; all components are batch means.
    """
    if weights is None:
        weights = LossWeights()
    _check_pair(logit, target, "mixed_seg_loss")
    prob = ops.sigmoid(logit)
    f = focal_loss(prob, target, weights.alpha, weights.beta, weights.focal_positive_only)
    d = laplace_dice_loss(prob, target)
    h = lovasz_hinge_loss(logit, target)
    total = weights.w_focal * f + weights.w_dice * d + weights.w_lovasz * h
    return LossReport(total=total, focal=f, dice=d, lovasz=h)


def bce_loss(prob2: Tensor, label: Tensor) -> Tensor:
    """Mean negative log-probability of the true class over [N, 2] softmax rows."""
    if prob2.ndim != 2 or prob2.shape[1] != 2:
        raise ShapeError(f"bce_loss expects [N, 2] probabilities, got shape {prob2.shape}")
    if label.shape != (prob2.shape[0],):
        raise ShapeError(f"bce_loss labels must have shape ({prob2.shape[0]},), got {label.shape}")
    lab = label.data
    if not set(map(float, lab.reshape(-1).tolist())) <= {0.0, 1.0}:
        raise ValueError("bce_loss labels must be 0 or 1")
    p0 = ops.slice_channels(prob2, 0, 1).reshape(prob2.shape[0])
    p1 = ops.slice_channels(prob2, 1, 2).reshape(prob2.shape[0])
    p_true = label * p1 + (1.0 - label) * p0
    return -(p_true.clamp(PROB_EPS, 1.0).log()).mean()
