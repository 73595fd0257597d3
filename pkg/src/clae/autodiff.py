"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A `Tensor` wraps a numpy array plus an optional gradient slot.  Composing
the primitives below records a tape (parent links + backward closures);
`backward()` on a scalar output walks the tape once in reverse topological
order and accumulates gradients additively into every tensor that requires
them.  `finite_diff_grad` is the independent central-difference oracle used
to verify every analytic gradient.

Everything is float64 and single-threaded per tape; tensors are treated as
immutable once created (gradient accumulation during one backward pass is
the only sanctioned mutation).
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, NumericError


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values at boundary of op '{op}'")


class Tensor:
    """Dense float64 value with an optional grad slot and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)  # copy: leaves own their storage
        _check_finite(arr, "leaf")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = "leaf"

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str,
                 backward: Callable[[np.ndarray], None]) -> "Tensor":
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out._op = op
        return out

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a scalar tensor")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.shape}, grad={'set' if self.grad is not None else 'none'})"

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    @property
    def T(self):
        return transpose(self)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient `g` back down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise primitives ----------------------------------------------


def _binary(a, b, op: str, fwd, bwd_a, bwd_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = fwd(a.data, b.data)
    except ValueError as e:
        raise ContractError(f"{op}: incompatible shapes {a.shape} vs {b.shape}") from e

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(bwd_a(g, a.data, b.data), a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(bwd_b(g, a.data, b.data), b.shape))

    return Tensor._from_op(data, (a, b), op, backward)


def add(a, b) -> Tensor:
    return _binary(a, b, "add", lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, "sub", lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, "mul", lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(a, b, "div", lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(-g)

    return Tensor._from_op(-a.data, (a,), "neg", backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), "relu", backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):  # overflow surfaces as NumericError below
        data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * data)

    return Tensor._from_op(data, (a,), "exp", backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g / a.data)

    return Tensor._from_op(np.log(a.data), (a,), "log", backward)


def power(a, exponent: float) -> Tensor:
    """Elementwise a**p for a python-scalar exponent."""
    a = as_tensor(a)
    p = float(exponent)
    data = a.data ** p

    def backward(g):
        a._accumulate(g * p * a.data ** (p - 1.0))

    return Tensor._from_op(data, (a,), "pow", backward)


# -- structural primitives -------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(g @ b.data.T)
        if b.requires_grad or b._parents:
            b._accumulate(a.data.T @ g)

    return Tensor._from_op(a.data @ b.data, (a, b), "matmul", backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ContractError("transpose supports 2-D tensors only")

    def backward(g):
        a._accumulate(g.T)

    return Tensor._from_op(a.data.T.copy(), (a,), "transpose", backward)


def concat_rows(a, b) -> Tensor:
    """Stack two matrices along axis 0."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractError(f"concat_rows: incompatible shapes {a.shape}, {b.shape}")
    na = a.shape[0]

    def backward(g):
        a._accumulate(g[:na])
        b._accumulate(g[na:])

    return Tensor._from_op(np.concatenate([a.data, b.data], axis=0),
                           (a, b), "concat_rows", backward)


# -- reductions -------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        a._accumulate(np.broadcast_to(gg, a.shape).copy())

    return Tensor._from_op(np.asarray(data), (a,), "sum", backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.shape[axis]

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        a._accumulate(np.broadcast_to(gg, a.shape).copy() / count)

    return Tensor._from_op(np.asarray(data), (a,), "mean", backward)


def tmax(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max-reduction; gradient is split equally among tied maxima."""
    a = as_tensor(a)
    data = a.data.max(axis=axis, keepdims=keepdims)
    expanded = data if keepdims or axis is None else np.expand_dims(data, axis)
    mask = (a.data == expanded).astype(np.float64)
    mask /= mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        a._accumulate(mask * gg)

    return Tensor._from_op(np.asarray(data), (a,), "max", backward)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Stable log-sum-exp; backward distributes via the softmax."""
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    data = m + np.log(total)
    soft = shifted / total
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        a._accumulate(soft * gg)

    return Tensor._from_op(np.asarray(data), (a,), "logsumexp", backward)


def softmax(a, axis: int = -1) -> Tensor:
    """exp(a - logsumexp(a)); stable by construction."""
    return exp(sub(a, logsumexp(a, axis=axis, keepdims=True)))


def l2_normalize(a, eps: float = 1e-12) -> Tensor:
    """Scale each row of a 2-D tensor to unit L2 norm.

    `eps` only guards the all-zero row; for any row of non-negligible norm
    the output norm is 1 to within ~1e-12.
    """
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ContractError("l2_normalize expects a 2-D tensor")
    sq = tsum(mul(a, a), axis=1, keepdims=True)
    return mul(a, power(add(sq, eps), -0.5))


# -- backward driver ---------------------------------------------------------


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into .grad of every reachable tensor."""
    if output.data.size != 1:
        raise ContractError("backward requires a scalar output")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    output.grad = np.ones_like(output.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def finite_diff_grad(fn: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar-valued function.

    Independent verification oracle: evaluates fn at x ± h·e_i for every
    coordinate; never touches the tape machinery above.
    """
    if h <= 0:
        raise ContractError("finite_diff_grad requires h > 0")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        if np.ndim(fp) != 0:
            raise ContractError("finite_diff_grad requires a scalar-valued function")
        gflat[i] = (float(fp) - float(fm)) / (2.0 * h)
    return grad
