"""Input validation helpers for array-facing entry points."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def ensure_image_batch(X) -> np.ndarray:
    """Coerce to float32 [N, C, H, W]; [N, H, W] gains a channel axis."""
    arr = np.asarray(X)
    if arr.ndim == 3:
        arr = arr[:, None]
    if arr.ndim != 4:
        raise ShapeError(f"images must be [N, H, W] or [N, C, H, W], got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ShapeError("image batch is empty")
    arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError("images contain non-finite values")
    return arr


def ensure_mask_batch(y, images: np.ndarray) -> np.ndarray:
    """Coerce to binary float32 [N, 1, H, W] matching the image extents."""
    arr = np.asarray(y)
    if arr.ndim == 3:
        arr = arr[:, None]
    if arr.ndim != 4 or arr.shape[1] != 1:
        raise ShapeError(f"masks must be [N, H, W] or [N, 1, H, W], got shape {arr.shape}")
    if arr.shape[0] != images.shape[0] or arr.shape[2:] != images.shape[2:]:
        raise ShapeError(f"mask extents {arr.shape} do not match images {images.shape}")
    arr = arr.astype(np.float32, copy=False)
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        if np.all((vals >= 0.0) & (vals <= 1.0)):
            arr = (arr >= 0.5).astype(np.float32)
        else:
            raise ValueError("masks must be binary (or probabilities in [0, 1])")
    return arr


def check_grid_input(h: int, w: int, depth: int) -> None:
    divisor = 2 ** (depth - 1)
    if h != w:
        raise ShapeError(f"inputs must be square, got {h}x{w}")
    if h % divisor:
        raise ShapeError(f"input extent {h} must be a multiple of {divisor} for depth {depth}")
