"""Named store of learnable tensors and normalization buffers."""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

# parameter kinds: weights and biases get He/zero init, bn_affine is the
# (gamma, beta) pair, bn_stat the non-learnable running statistics
KINDS = ("weight", "bias", "bn_gamma", "bn_beta", "bn_mean", "bn_var")
LEARNABLE_KINDS = ("weight", "bias", "bn_gamma", "bn_beta")


class ParamStore:
    """Insertion-ordered map name -> Tensor, keyed by node/head identity.

    Learnable entries carry requires_grad; running statistics do not.
    Subsetting produces a view over the same tensors (no duplication),
    which is what pruned models alias.
    """

    def __init__(self):
        self._items: dict[str, Tensor] = {}
        self._kinds: dict[str, str] = {}

    def add(self, name: str, tensor: Tensor, kind: str) -> Tensor:
        if name in self._items:
            raise ValueError(f"duplicate parameter name {name!r}")
        if kind not in KINDS:
            raise ValueError(f"unknown parameter kind {kind!r}")
        tensor.requires_grad = kind in LEARNABLE_KINDS
        self._items[name] = tensor
        self._kinds[name] = kind
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def kind(self, name: str) -> str:
        return self._kinds[name]

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._items.items())

    def learnable_items(self) -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self._items.items() if t.requires_grad)

    def learnable_count(self) -> int:
        return sum(t.size for _, t in self.learnable_items())

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.grad = None

    def subset(self, names: Iterable[str]) -> "ParamStore":
        """View over a subset of entries; tensors are shared, not copied."""
        sub = ParamStore()
        for n in names:
            if n not in self._items:
                raise KeyError(f"parameter {n!r} not in store")
            sub._items[n] = self._items[n]
            sub._kinds[n] = self._kinds[n]
        return sub

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self._items.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy values into existing tensors; shapes must match exactly."""
        missing = [n for n in self._items if n not in arrays]
        if missing:
            raise KeyError(f"checkpoint is missing parameters: {missing[:5]}")
        for n, t in self._items.items():
            arr = arrays[n]
            if tuple(arr.shape) != tuple(t.shape):
                raise ShapeError(f"parameter {n!r}: stored shape {arr.shape} != expected {t.shape}")
            t.data[...] = arr.astype(t.dtype, copy=False)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._items.items()}
