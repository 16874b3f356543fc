"""Tensor storage and reverse-mode automatic differentiation.

Every differentiable operation produces a new `Tensor` that remembers its
parents and a backward closure. Operations are stamped with a global,
monotonically increasing id at creation, so `backward` can replay adjoints
in exact reverse execution order. Gradients of a tensor used several times
are the sum over all uses.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_op_counter = itertools.count()

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Suspend tape recording; ops executed inside produce detached tensors."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional float array with optional gradient participation.

    `data` is a row-major contiguous numpy array (float32 by default,
    float64 for verification work). `grad`, when populated, always has the
    same shape as `data`. Tensors are treated as immutable once produced
    by an operation.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op_id = next(_op_counter)

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{rg})"

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "add")
            return _from_op(
                self.data + other.data,
                (self, other),
                lambda g, acc: (acc(self, g), acc(other, g)),
            )
        return _from_op(self.data + other, (self,), lambda g, acc: acc(self, g))

    __radd__ = __add__

    def __neg__(self):
        return _from_op(-self.data, (self,), lambda g, acc: acc(self, -g))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "sub")
            return _from_op(
                self.data - other.data,
                (self, other),
                lambda g, acc: (acc(self, g), acc(other, -g)),
            )
        return _from_op(self.data - other, (self,), lambda g, acc: acc(self, g))

    def __rsub__(self, other):
        return _from_op(other - self.data, (self,), lambda g, acc: acc(self, -g))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "mul")
            a, b = self.data, other.data
            return _from_op(
                a * b,
                (self, other),
                lambda g, acc: (acc(self, g * b), acc(other, g * a)),
            )
        return _from_op(self.data * other, (self,), lambda g, acc: acc(self, g * other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            _check_same_shape(self, other, "div")
            a, b = self.data, other.data
            out = a / b
            return _from_op(
                out,
                (self, other),
                lambda g, acc: (acc(self, g / b), acc(other, -g * out / b)),
            )
        return _from_op(self.data / other, (self,), lambda g, acc: acc(self, g / other))

    def __rtruediv__(self, other):
        a = self.data
        out = other / a
        return _from_op(out, (self,), lambda g, acc: acc(self, -g * out / a))

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        out = a ** exponent
        return _from_op(
            out,
            (self,),
            lambda g, acc: acc(self, g * exponent * a ** (exponent - 1)),
        )

    # -- shape and reductions -------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.data.shape
        out = self.data.reshape(shape)
        return _from_op(out, (self,), lambda g, acc: acc(self, g.reshape(orig)))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        """Sum with 64-bit accumulation, cast back to the input dtype."""
        out = np.sum(self.data, axis=axis, keepdims=keepdims, dtype=np.float64)
        out = np.asarray(out, dtype=self.data.dtype)
        shape = self.data.shape

        def backward(g, acc):
            gx = g
            if axis is not None and not keepdims:
                gx = np.expand_dims(gx, axis)
            acc(self, np.broadcast_to(gx, shape))

        return _from_op(out, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            n = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def log(self) -> "Tensor":
        a = self.data
        return _from_op(np.log(a), (self,), lambda g, acc: acc(self, g / a))

    def clamp(self, lo: float, hi: float) -> "Tensor":
        a = self.data
        out = np.clip(a, lo, hi)
        mask = (a >= lo) & (a <= hi)
        return _from_op(out, (self,), lambda g, acc: acc(self, g * mask))

    def backward(self) -> None:
        backward(self)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.data.shape} vs {b.data.shape}")


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result, recording parents and the adjoint closure on the tape."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss: Tensor, retain_all: bool = False) -> None:
    """Populate `.grad` of every requires_grad leaf reachable from `loss`
    (every visited tensor with `retain_all`).

    Adjoints run in exact reverse execution order; a tensor used several
    times receives the sum over its uses. Repeated calls without clearing
    gradients accumulate into `.grad`. Interior gradients are transient by
    default since only leaves (parameters, inputs) are ever read.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not participate in differentiation")

    visited: dict[int, Tensor] = {id(loss): loss}
    stack = [loss]
    while stack:
        t = stack.pop()
        for p in t._parents:
            if p.requires_grad and id(p) not in visited:
                visited[id(p)] = p
                stack.append(p)
    order = sorted(visited.values(), key=lambda t: t._op_id, reverse=True)

    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def acc(t: Tensor, g) -> None:
        if not t.requires_grad:
            return
        g = np.asarray(g)
        if g.shape != t.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
        if g.dtype != t.data.dtype:
            g = g.astype(t.data.dtype)
        cur = flow.get(id(t))
        flow[id(t)] = g if cur is None else cur + g

    for t in order:
        g = flow.get(id(t))
        if g is None or t._backward is None:
            continue
        t._backward(g, acc)
        if not retain_all:
            del flow[id(t)]

    for t in visited.values():
        g = flow.get(id(t))
        if g is None:
            continue
        if g.base is not None or not g.flags.writeable:
            g = np.array(g)
        t.grad = g if t.grad is None else t.grad + g


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor | np.ndarray], eps: float = 1e-5) -> float:
    """Compare analytic gradients of a scalar-valued graph against central differences.

    Inputs are promoted to float64 leaves; `fn` is re-executed around each
    perturbed coordinate, so it must be deterministic and side-effect free
    with respect to its output. Returns the max over input coordinates of
    |analytic - numeric| / max(1, |numeric|).
    """
    xs = []
    for t in inputs:
        data = t.data if isinstance(t, Tensor) else np.asarray(t)
        xs.append(Tensor(data.astype(np.float64), requires_grad=True))

    out = fn(*xs)
    if out.size != 1:
        raise ShapeError("grad_check expects a scalar-valued function")
    backward(out)

    worst = 0.0
    with no_grad():
        for x in xs:
            analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
            flat = x.data.reshape(-1)
            numeric = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = fn(*xs).item()
                flat[i] = orig - eps
                f_minus = fn(*xs).item()
                flat[i] = orig
                numeric[i] = (f_plus - f_minus) / (2.0 * eps)
            numeric = numeric.reshape(x.data.shape)
            rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
            worst = max(worst, float(rel.max()))
    return worst


def stack_mean(tensors: Iterable[Tensor]) -> Tensor:
    """Arithmetic mean of same-shape tensors (used for branch-set averaging)."""
    ts = list(tensors)
    if not ts:
        raise ValueError("stack_mean needs at least one tensor")
    total = ts[0]
    for t in ts[1:]:
        total = total + t
    return total * (1.0 / len(ts))
