"""Weight initialization, Adam with decoupled weight decay, cosine schedule."""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError
from .params import ParamStore
from .tensor import Tensor


def _fan_in(shape: tuple[int, ...]) -> int:
    if len(shape) == 4:  # conv OIkk
        return shape[1] * shape[2] * shape[3]
    if len(shape) == 2:  # linear FG, applied as x @ w
        return shape[0]
    return shape[0]


def init_weights(store: ParamStore, rng: np.random.Generator) -> ParamStore:
    """He-style init: weights ~ N(0, sqrt(2/fan_in)); biases 0; BN at identity
    with fresh running statistics. Deterministic in store insertion order."""
    for name, t in store.items():
        kind = store.kind(name)
        if kind == "weight":
            std = math.sqrt(2.0 / _fan_in(t.shape))
            t.data[...] = rng.normal(0.0, std, size=t.shape).astype(t.dtype)
        elif kind in ("bias", "bn_beta", "bn_mean"):
            t.data[...] = 0.0
        else:  # bn_gamma, bn_var
            t.data[...] = 1.0
    return store


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One Adam update with bias correction, in place.

    Decoupled weight decay shrinks the parameter before the moment update:
    p <- p - lr*wd*p, then the standard Adam step.
    """
    if grad.shape != param.shape:
        raise ShapeError(f"gradient shape {grad.shape} != parameter shape {param.shape}")
    if weight_decay:
        param -= lr * weight_decay * param
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over a ParamStore's learnable tensors; skips tensors whose grad
    is unpopulated (branches outside the active loss receive no update)."""

    def __init__(self, store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, lr: float | None = None) -> None:
        self.t += 1
        lr = self.lr if lr is None else lr
        for name, p in self.store.learnable_items():
            if p.grad is None:
                continue
            if name not in self._m:
                self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            adam_step(
                p.data, p.grad, self._m[name], self._v[name], self.t,
                lr, self.beta1, self.beta2, self.eps, self.weight_decay,
            )

    def zero_grad(self) -> None:
        self.store.zero_grad()


def cosine_lr(t: int, total: int, lr0: float, lr_min: float = 0.0) -> float:
    """Cosine annealing: lr_min + 0.5*(lr0 - lr_min)*(1 + cos(pi*t/total))."""
    if total <= 0:
        raise ValueError(f"total steps must be positive, got {total}")
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / total))
