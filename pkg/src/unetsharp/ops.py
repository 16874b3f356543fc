"""Neural-network primitives on the autodiff core.

All operations are differentiable (where meaningful), deterministic for a
fixed thread count, and validate their shape contracts up front. Spatial
layout is NCHW throughout.
"""

from __future__ import annotations

import functools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, _from_op

UPSAMPLE_FACTORS = (2, 4, 8, 16)
UPSAMPLE_MODES = ("bilinear", "nearest")


def _sum64(arr: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
    """Reduction with 64-bit partial sums, result cast back to the input dtype."""
    out = np.sum(arr, axis=axis, keepdims=keepdims, dtype=np.float64)
    return np.asarray(out, dtype=arr.dtype)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int | None = None) -> Tensor:
    """2-D cross-correlation of an NCHW input with OIkk weights plus bias.

    `pad` defaults to (k-1)//2, which preserves the spatial extents at
    stride 1 (the grid relies on that to keep skip connections aligned).
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d expects OIkk weights, got shape {w.shape}")
    n, cin, h, wdt = x.shape
    cout, cin_w, kh, kw = w.shape
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {kh}x{kw}")
    k = kh
    if cin_w != cin:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, weight expects {cin_w}")
    if b.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {b.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    if pad is None:
        pad = (k - 1) // 2
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (wdt + 2 * pad - k) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ShapeError(
            f"conv2d produces non-positive output extent {h_out}x{w_out} "
            f"for input {h}x{wdt}, kernel {k}, pad {pad}, stride {stride}"
        )

    if k == 1 and stride == 1 and pad == 0:
        return _conv1x1(x, w, b)
    return _conv_im2col(x, w, b, k, stride, pad, h_out, w_out)


def _conv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Pointwise convolution as a plain channel matmul."""
    n, cin, h, wdt = x.shape
    cout = w.shape[0]
    x_mat = x.data.reshape(n, cin, h * wdt)
    w2 = w.data.reshape(cout, cin)
    out = np.matmul(w2, x_mat).reshape(n, cout, h, wdt)
    out += b.data[:, None, None]

    def backward(g, acc):
        g_mat = g.reshape(n, cout, h * wdt)
        if w.requires_grad:
            gw = np.zeros((cout, cin), dtype=g.dtype)
            for nn in range(n):  # fixed order; dot reads the transposed view in place
                gw += g_mat[nn] @ x_mat[nn].T
            acc(w, gw.reshape(w.shape))
        if b.requires_grad:
            acc(b, _sum64(g, axis=(0, 2, 3)))
        if x.requires_grad:
            acc(x, np.matmul(w2.T, g_mat).reshape(x.shape))

    return _from_op(out, (x, w, b), backward)


def _conv_im2col(x: Tensor, w: Tensor, b: Tensor, k: int, stride: int, pad: int,
                 h_out: int, w_out: int) -> Tensor:
    """General-stride path via materialized patches."""
    n, cin, h, wdt = x.shape
    cout = w.shape[0]
    xd = x.data
    if pad:
        xd = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xd, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, cin * k * k, h_out * w_out)
    w2 = w.data.reshape(cout, -1)
    out = np.matmul(w2, cols).reshape(n, cout, h_out, w_out)
    out += b.data[:, None, None]

    def backward(g, acc):
        g_mat = g.reshape(n, cout, h_out * w_out)
        if w.requires_grad:
            gw = np.zeros((cout, cin * k * k), dtype=g.dtype)
            for nn in range(n):
                gw += g_mat[nn] @ cols[nn].T
            acc(w, gw.reshape(w.shape))
        if b.requires_grad:
            acc(b, _sum64(g, axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g_mat).reshape(n, cin, k, k, h_out, w_out)
            hp, wp = h + 2 * pad, wdt + 2 * pad
            dxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
            for ki in range(k):
                for kj in range(k):
                    dxp[:, :, ki : ki + stride * h_out : stride, kj : kj + stride * w_out : stride] += dcols[:, :, ki, kj]
            acc(x, dxp[:, :, pad : pad + h, pad : pad + wdt] if pad else dxp)

    return _from_op(out, (x, w, b), backward)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    mode: str = "train",
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Batch normalization over NCHW (per channel) or NF (per feature) input.

    Train mode normalizes with population statistics of the current batch
    and updates the running buffers in place; eval mode normalizes with the
    running statistics and is differentiable as a per-channel affine map.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    if x.ndim == 4:
        axes, c = (0, 2, 3), x.shape[1]
        bshape = (1, c, 1, 1)
    elif x.ndim == 2:
        axes, c = (0,), x.shape[1]
        bshape = (1, c)
    else:
        raise ShapeError(f"batch_norm expects 2-D or 4-D input, got shape {x.shape}")
    for t, nm in ((gamma, "gamma"), (beta, "beta"), (running_mean, "running_mean"), (running_var, "running_var")):
        if t.shape != (c,):
            raise ShapeError(f"batch_norm {nm} must have shape ({c},), got {t.shape}")

    xd = x.data
    if mode == "train":
        m = int(np.prod([xd.shape[a] for a in axes]))
        if m <= 1:
            raise ValueError(
                f"batch_norm train mode needs more than one element per channel, got population {m}"
            )
        mean = np.mean(xd, axis=axes, dtype=np.float64)
        var = np.var(xd, axis=axes, dtype=np.float64)
        running_mean.data[...] = (1.0 - momentum) * running_mean.data + momentum * mean.astype(running_mean.dtype)
        running_var.data[...] = (1.0 - momentum) * running_var.data + momentum * var.astype(running_var.dtype)
        mean = mean.astype(xd.dtype)
        var = var.astype(xd.dtype)
    else:
        mean = running_mean.data
        var = running_var.data

    inv = 1.0 / np.sqrt(var + eps)
    xc = xd - mean.reshape(bshape)
    xhat = xc * inv.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    if mode == "train":

        def backward(g, acc):
            if gamma.requires_grad:
                acc(gamma, _sum64(g * xhat, axis=axes))
            if beta.requires_grad:
                acc(beta, _sum64(g, axis=axes))
            if x.requires_grad:
                gxhat = g * gamma.data.reshape(bshape)
                s1 = _sum64(gxhat, axis=axes, keepdims=True)
                s2 = _sum64(gxhat * xhat, axis=axes, keepdims=True)
                mloc = int(np.prod([xd.shape[a] for a in axes]))
                dx = (inv.reshape(bshape) / mloc) * (mloc * gxhat - s1 - xhat * s2)
                acc(x, dx)

    else:

        def backward(g, acc):
            if gamma.requires_grad:
                acc(gamma, _sum64(g * xhat, axis=axes))
            if beta.requires_grad:
                acc(beta, _sum64(g, axis=axes))
            if x.requires_grad:
                acc(x, g * (gamma.data * inv).reshape(bshape))

    return _from_op(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    mask = x.data > 0
    return _from_op(out, (x,), lambda g, acc: acc(x, g * mask))


def sigmoid(x: Tensor) -> Tensor:
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return _from_op(out, (x,), lambda g, acc: acc(x, g * out * (1.0 - out)))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Normalized exponentials along `axis`, computed with max-subtraction."""
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / _sum64(e, axis=axis, keepdims=True)

    def backward(g, acc):
        acc(x, out * (g - np.sum(g * out, axis=axis, keepdims=True, dtype=np.float64).astype(g.dtype)))

    return _from_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# pooling and resampling
# ---------------------------------------------------------------------------

def max_pool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Per-window spatial maximum; gradient routes to the first maximal
    element of each window in row-major scan order."""
    if window != stride:
        raise ShapeError(f"max_pool2d supports window == stride, got {window} != {stride}")
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects NCHW input, got shape {x.shape}")
    n, c, h, wdt = x.shape
    if h % window or wdt % window:
        raise ShapeError(f"max_pool2d needs extents divisible by {window}, got {h}x{wdt}")
    ho, wo = h // window, wdt // window
    tiles = np.ascontiguousarray(
        x.data.reshape(n, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5)
    ).reshape(n, c, ho, wo, window * window)
    idx = np.argmax(tiles, axis=-1)
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def backward(g, acc):
        gt = np.zeros_like(tiles)
        np.put_along_axis(gt, idx[..., None], g[..., None], axis=-1)
        gx = gt.reshape(n, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, wdt)
        acc(x, np.ascontiguousarray(gx))

    return _from_op(out, (x,), backward)


@functools.lru_cache(maxsize=None)
def _resample_matrix(n_in: int, n_out: int, mode: str, dtype_name: str) -> np.ndarray:
    """1-D interpolation matrix A with out = A @ in (align-corners false)."""
    a = np.zeros((n_out, n_in), dtype=np.dtype(dtype_name))
    scale = n_in / n_out
    for i in range(n_out):
        if mode == "nearest":
            a[i, min(int(i * scale), n_in - 1)] = 1.0
        else:
            src = max((i + 0.5) * scale - 0.5, 0.0)
            i0 = min(int(src), n_in - 1)
            i1 = min(i0 + 1, n_in - 1)
            frac = src - i0
            a[i, i0] += 1.0 - frac
            a[i, i1] += frac
    return a


def upsample(x: Tensor, factor: int, mode: str = "bilinear") -> Tensor:
    """Spatial upsampling by a power-of-two factor (bilinear or nearest)."""
    if factor not in UPSAMPLE_FACTORS:
        raise ValueError(f"upsample factor must be one of {UPSAMPLE_FACTORS}, got {factor}")
    if mode not in UPSAMPLE_MODES:
        raise ValueError(f"upsample mode must be one of {UPSAMPLE_MODES}, got {mode!r}")
    if x.ndim != 4:
        raise ShapeError(f"upsample expects NCHW input, got shape {x.shape}")
    _, _, h, wdt = x.shape
    ah = _resample_matrix(h, h * factor, mode, x.dtype.name)
    aw = _resample_matrix(wdt, wdt * factor, mode, x.dtype.name)
    out = np.einsum("nchw,ph,qw->ncpq", x.data, ah, aw, optimize=True)

    def backward(g, acc):
        acc(x, np.einsum("ncpq,ph,qw->nchw", g, ah, aw, optimize=True))

    return _from_op(np.ascontiguousarray(out), (x,), backward)


def adaptive_avg_pool_1x1(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"adaptive_avg_pool_1x1 expects NCHW input, got shape {x.shape}")
    n, c, h, wdt = x.shape
    out = _sum64(x.data, axis=(2, 3), keepdims=True) / (h * wdt)

    def backward(g, acc):
        acc(x, np.broadcast_to(g / (h * wdt), x.shape))

    return _from_op(out, (x,), backward)


def adaptive_max_pool_1x1(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"adaptive_max_pool_1x1 expects NCHW input, got shape {x.shape}")
    n, c, h, wdt = x.shape
    flat = x.data.reshape(n, c, h * wdt)
    idx = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1).reshape(n, c, 1, 1)

    def backward(g, acc):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx[..., None], g.reshape(n, c, 1), axis=-1)
        acc(x, gx.reshape(x.shape))

    return _from_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# channel plumbing
# ---------------------------------------------------------------------------

def concat_channels(xs: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis; order preserved, gradient splits back."""
    if not xs:
        raise ValueError("concat_channels needs at least one input")
    if len(xs) == 1:
        return xs[0]
    first = xs[0]
    for t in xs[1:]:
        if t.ndim != first.ndim:
            raise ShapeError(f"concat_channels rank mismatch: {t.shape} vs {first.shape}")
        if t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise ShapeError(
                f"concat_channels spatial/batch mismatch: {t.shape} vs {first.shape}"
            )
    out = np.concatenate([t.data for t in xs], axis=1)
    offsets = np.cumsum([0] + [t.shape[1] for t in xs])

    def backward(g, acc):
        for t, o0, o1 in zip(xs, offsets[:-1], offsets[1:]):
            acc(t, np.ascontiguousarray(g[:, o0:o1]))

    return _from_op(out, tuple(xs), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if x.ndim < 2:
        raise ShapeError(f"slice_channels expects a channel axis, got shape {x.shape}")
    if not (0 <= start < stop <= x.shape[1]):
        raise ShapeError(f"slice_channels [{start}:{stop}] out of range for {x.shape[1]} channels")
    out = np.ascontiguousarray(x.data[:, start:stop])

    def backward(g, acc):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        acc(x, gx)

    return _from_op(out, (x,), backward)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each batch item by a per-item scalar (used for gating)."""
    if s.ndim != 1 or s.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_rows needs one scalar per batch item: {s.shape} vs {x.shape}")
    bshape = (x.shape[0],) + (1,) * (x.ndim - 1)
    sb = s.data.reshape(bshape)
    out = x.data * sb

    def backward(g, acc):
        if x.requires_grad:
            acc(x, g * sb)
        if s.requires_grad:
            axes = tuple(range(1, x.ndim))
            acc(s, _sum64(g * x.data, axis=axes))

    return _from_op(out, (x, s), backward)


# ---------------------------------------------------------------------------
# dense heads
# ---------------------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"linear expects [N,F] input, got shape {x.shape}")
    if w.ndim != 2 or w.shape[0] != x.shape[1]:
        raise ShapeError(f"linear weight {w.shape} does not match input features {x.shape[1]}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear bias must have shape ({w.shape[1]},), got {b.shape}")
    out = x.data @ w.data + b.data

    def backward(g, acc):
        if x.requires_grad:
            acc(x, g @ w.data.T)
        if w.requires_grad:
            acc(w, x.data.T @ g)
        if b.requires_grad:
            acc(b, _sum64(g, axis=0))

    return _from_op(out, (x, w, b), backward)


def flatten(x: Tensor) -> Tensor:
    """Row-major flatten of all non-batch dimensions."""
    if x.ndim < 2:
        raise ShapeError(f"flatten expects a batch dimension, got shape {x.shape}")
    return x.reshape(x.shape[0], -1)


def dropout(x: Tensor, p: float, mode: str = "train", rng: np.random.Generator | None = None) -> Tensor:
    """Zero elements with probability `p` in train mode, rescaling survivors
    by 1/(1-p); identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng for reproducibility")
    scale = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _from_op(x.data * scale, (x,), lambda g, acc: acc(x, g * scale))
