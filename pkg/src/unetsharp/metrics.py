"""Overlap metrics on binarized masks."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def _binarize(pred, mask, threshold: float):
    pred = np.asarray(pred)
    mask = np.asarray(mask)
    if pred.shape != mask.shape:
        raise ShapeError(f"prediction shape {pred.shape} != mask shape {mask.shape}")
    return pred >= threshold, mask >= 0.5


def iou(pred_prob, mask, threshold: float = 0.5) -> float:
    """Intersection over union; both-empty pairs score 1.0."""
    p, m = _binarize(pred_prob, mask, threshold)
    union = np.logical_or(p, m).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, m).sum() / union)


def dice(pred_prob, mask, threshold: float = 0.5) -> float:
    """2|A∩B| / (|A|+|B|); both-empty pairs score 1.0."""
    p, m = _binarize(pred_prob, mask, threshold)
    total = int(p.sum()) + int(m.sum())
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(p, m).sum() / total)
