"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation appends a node to a dynamic tape.  Nodes carry a monotonically
increasing creation index, so sorting the ancestors of a loss by that index
gives a valid topological order; :func:`backward` walks it in reverse.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "tensor",
    "stop_gradient",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "conv2d",
    "avg_pool2d",
    "relu",
    "reshape",
    "sum",
    "mean",
    "square",
    "sqrt",
    "log",
    "exp",
    "logsumexp",
    "sign",
    "clamp",
    "take_labels",
]

_counter = itertools.count()


class ShapeError(ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        joined = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class Tensor:
    """A float64 array that can take part in a differentiable computation.

    ``grad`` is ``None`` until a backward pass deposits something into it.
    ``parents``/``_backward`` make up the tape record; leaves have neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "_backward", "op", "_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
        self._id = next(_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.parents = tuple(parents) if out.requires_grad else ()
    out._backward = backward_fn if out.requires_grad else None
    out.op = op
    out._id = next(_counter)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise binary -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make("mul", a.data * b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product ``a @ b``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make("matmul", a.data @ b.data, (a, b), bw)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # x: (N, C, H, W) already padded -> (N, Ho, Wo, C*kh*kw)
    n, c, h, w = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    s = x.strides
    cols = np.lib.stride_tricks.as_strided(
        x, shape=(n, ho, wo, c, kh, kw), strides=(s[0], s[2], s[3], s[1], s[2], s[3])
    )
    return cols.reshape(n, ho, wo, c * kh * kw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int = 0) -> Tensor:
    """Stride-1 2-D cross-correlation.

    x: (N, C, H, W); weight: (F, C, kh, kw); bias: (F,).  Zero padding of
    ``padding`` pixels on every side.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError("conv2d", weight.shape, bias.shape)
    p = int(padding)
    f, c, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError("conv2d", x.shape, weight.shape)
    cols = _im2col(np.ascontiguousarray(xp), kh, kw)
    n, ho, wo, _ = cols.shape
    wmat = weight.data.reshape(f, -1)
    out = cols @ wmat.T  # (N, Ho, Wo, F)
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bw(g):
        gt = g.transpose(0, 2, 3, 1)  # (N, Ho, Wo, F)
        gw = np.tensordot(gt, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(weight.shape)
        gcols = (gt @ wmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + ho, j:j + wo] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p:p + x.shape[2], p:p + x.shape[3]] if p else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(gt.sum(axis=(0, 1, 2)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make("conv2d", out, parents, bw)


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k mean pooling; trailing rows/cols that do not fill a window are dropped."""
    if x.data.ndim != 4:
        raise ShapeError("avg_pool2d", x.shape)
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    if ho == 0 or wo == 0:
        raise ShapeError("avg_pool2d", x.shape)
    crop = x.data[:, :, : ho * k, : wo * k]
    out = crop.reshape(n, c, ho, k, wo, k).mean(axis=(3, 5))

    def bw(g):
        gx = np.zeros(x.shape)
        up = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        gx[:, :, : ho * k, : wo * k] = up
        return (gx,)

    return _make("avg_pool2d", out, (x,), bw)


# -- shape / reductions -------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(np.atleast_1d(shape))) from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(ax % ndim for ax in axes)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", np.asarray(out, dtype=np.float64), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make("mean", np.asarray(out, dtype=np.float64), (a,), bw)


# -- elementwise unary --------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def square(a: Tensor) -> Tensor:
    return _make("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a: Tensor) -> Tensor:
    """Square root; the derivative at exactly 0 is taken to be 0."""
    out = np.sqrt(a.data)

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        return (g * d,)

    return _make("sqrt", out, (a,), bw)


def log(a: Tensor) -> Tensor:
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max-shifted log-sum-exp along one axis."""
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.log(total) + m
    soft = shifted / total
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _make("logsumexp", out, (a,), bw)


def sign(a: Tensor) -> Tensor:
    """Elementwise sign with sign(0) = 0; its gradient is zero everywhere."""
    return _make("sign", np.sign(a.data), (a,), lambda g: (np.zeros_like(a.data),))


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    """Clip into [lo, hi]; gradient passes only where the value was not clipped."""
    out = np.clip(a.data, lo, hi)
    mask = np.ones(a.shape, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    return _make("clamp", out, (a,), lambda g: (g * mask,))


def take_labels(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Pick ``logits[i, labels[i]]`` for every row i."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("take_labels", logits.shape, labels.shape)
    rows = np.arange(labels.shape[0])
    out = logits.data[rows, labels]

    def bw(g):
        gl = np.zeros(logits.shape)
        np.add.at(gl, (rows, labels), g)
        return (gl,)

    return _make("take_labels", out, (logits,), bw)


# -- graph control ------------------------------------------------------------


def stop_gradient(t: Tensor) -> Tensor:
    """Same values as ``t`` but a fresh graph leaf that never receives gradient."""
    out = Tensor.__new__(Tensor)
    out.data = t.data.copy()
    out.grad = None
    out.requires_grad = False
    out.parents = ()
    out._backward = None
    out.op = "stop_gradient"
    out._id = next(_counter)
    return out


def _ancestors(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        order.append(node)
        stack.extend(node.parents)
    order.sort(key=lambda t: t._id, reverse=True)
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad.

    Intermediate tensors do not retain gradients.  Calling this again on a new
    loss adds to existing leaf gradients.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = _ancestors(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in nodes:
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pg if key not in pending else pending[key] + pg


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
