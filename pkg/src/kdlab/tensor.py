"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every operation returns a new :class:`Tensor` node. Nodes remember their op
tag, their parents, and a closure that maps the output gradient to parent
gradients, which together form an implicit append-only tape: node ids are
assigned from a monotone counter, so parents always precede children and
:func:`backward` can sweep the reachable subgraph once, in reverse creation
order. The tape is rebuilt from scratch on every training step; nothing is
retained between steps.

Design constraints honored here:

* float64 only; inputs are coerced on construction.
* Operations whose inputs carry no gradient requirement produce constant
  nodes with no parent links, so frozen-model forward passes build no tape.
* Softmax subtracts the row max before exponentiating, so finite logits can
  never overflow.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "parameter",
    "constant",
    "backward",
    "gradients",
    "matmul",
    "exp",
    "log",
    "clip",
    "relu",
    "gelu",
    "softmax",
    "layer_norm",
    "embedding",
    "dropout",
    "first_token",
    "take_per_row",
    "index_rows",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

_node_ids = itertools.count()


class Tensor:
    """One node of the computation tape: a float64 array plus gradient links."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_nid")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), backward_fn: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward_fn
        self._nid = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A constant view of this value, cut off from the tape."""
        return Tensor(self.data, op="detach")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return _broadcast_binary("add", self, _wrap(other),
                                 lambda a, b: a + b,
                                 lambda g, a, b: (g, g))

    def __radd__(self, other):
        return _wrap(other).__add__(self)

    def __sub__(self, other):
        return _broadcast_binary("sub", self, _wrap(other),
                                 lambda a, b: a - b,
                                 lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _wrap(other).__sub__(self)

    def __mul__(self, other):
        return _broadcast_binary("mul", self, _wrap(other),
                                 lambda a, b: a * b,
                                 lambda g, a, b: (g * b, g * a))

    def __rmul__(self, other):
        return _wrap(other).__mul__(self)

    def __truediv__(self, other):
        return _broadcast_binary("div", self, _wrap(other),
                                 lambda a, b: a / b,
                                 lambda g, a, b: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return _wrap(other).__truediv__(self)

    def __neg__(self):
        return _unary("neg", self, -self.data, lambda g, x: -g)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    # -- reductions and reshaping -------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        x = self
        out = x.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            return (_expand_reduced(g, x.data.shape, axis, keepdims),)

        return _node("sum", out, (x,), bw)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        x = self
        out = x.data.mean(axis=axis, keepdims=keepdims)
        count = x.data.size if axis is None else np.prod(
            [x.data.shape[a] for a in _normalize_axes(axis, x.data.ndim)])

        def bw(g):
            return (_expand_reduced(g, x.data.shape, axis, keepdims) / count,)

        return _node("mean", out, (x,), bw)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        x = self
        out = x.data.reshape(shape)

        def bw(g):
            return (g.reshape(x.data.shape),)

        return _node("reshape", out, (x,), bw)

    def transpose(self, axes: tuple[int, ...]) -> "Tensor":
        x = self
        out = x.data.transpose(axes)
        inverse = tuple(np.argsort(axes))

        def bw(g):
            return (g.transpose(inverse),)

        return _node("transpose", out, (x,), bw)


# ---------------------------------------------------------------------------
# node construction helpers
# ---------------------------------------------------------------------------

def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(op: str, data: np.ndarray, parents: tuple[Tensor, ...],
          backward_fn: Callable) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, op=op, parents=parents,
                      backward_fn=backward_fn)
    return Tensor(data, op=op)


def _unary(op: str, x: Tensor, data: np.ndarray, grad_fn: Callable) -> Tensor:
    return _node(op, data, (x,), lambda g: (grad_fn(g, x.data),))


def _broadcast_binary(op: str, a: Tensor, b: Tensor, fwd, bwd) -> Tensor:
    try:
        data = fwd(a.data, b.data)
    except ValueError as exc:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        ga, gb = bwd(g, a.data, b.data)
        return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))

    return _node(op, data, (a, b), bw)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduced gradient back to the pre-reduction shape."""
    g = np.asarray(g)
    if not keepdims:
        for a in sorted(_normalize_axes(axis, len(shape))):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape).copy()


# ---------------------------------------------------------------------------
# public constructors
# ---------------------------------------------------------------------------

def parameter(data) -> Tensor:
    """A trainable leaf node."""
    return Tensor(data, requires_grad=True, op="parameter")


def constant(data) -> Tensor:
    """A non-trainable leaf node."""
    return Tensor(data)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; stacked (batched) operands follow numpy semantics."""
    a, b = _wrap(a), _wrap(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))

    return _node("matmul", data, (a, b), bw)


def exp(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = np.exp(x.data)
    return _node("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    """Natural log; the caller is responsible for keeping inputs positive."""
    x = _wrap(x)
    return _unary("log", x, np.log(x.data), lambda g, xd: g / xd)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient is zero where clamping bites."""
    x = _wrap(x)
    inside = (x.data > lo) & (x.data < hi)
    return _unary("clip", x, np.clip(x.data, lo, hi), lambda g, xd: g * inside)


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    return _unary("relu", x, np.maximum(x.data, 0.0), lambda g, xd: g * (xd > 0))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = _wrap(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def bw(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return _node("gelu", out, (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Row-stochastic softmax with max-subtraction for overflow safety."""
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _node("softmax", out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift.

    Zero-variance rows are safe: the epsilon keeps the inverse deviation
    finite and the centered values are exactly zero.
    """
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ValueError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} do not match "
            f"feature width {x.shape[-1]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv
    out = normed * gain.data + bias.data

    def bw(g):
        batch_axes = tuple(range(g.ndim - 1))
        d_gain = (g * normed).sum(axis=batch_axes)
        d_bias = g.sum(axis=batch_axes)
        gg = g * gain.data
        dx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                    - normed * (gg * normed).mean(axis=-1, keepdims=True))
        return (dx, d_gain, d_bias)

    return _node("layer_norm", out, (x, gain, bias), bw)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]."""
    table = _wrap(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(
            f"embedding: id out of range [0, {table.shape[0]}) in lookup")
    out = table.data[ids]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return _node("embedding", out, (table,), bw)


def dropout(x: Tensor, rate: float, rng) -> Tensor:
    """Inverted dropout: zero each element with probability `rate`, rescale rest."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * constant(mask)


def first_token(x: Tensor) -> Tensor:
    """Select position 0 along axis 1: (B, L, D) -> (B, D)."""
    x = _wrap(x)
    out = x.data[:, 0, :].copy()

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[:, 0, :] = g
        return (gx,)

    return _node("first_token", out, (x,), bw)


def take_per_row(x: Tensor, indices: np.ndarray) -> Tensor:
    """out[i] = x[i, indices[i]] for a 2-D tensor."""
    x = _wrap(x)
    indices = np.asarray(indices)
    if x.ndim != 2 or indices.shape != (x.shape[0],):
        raise ValueError(
            f"take_per_row: need (N, K) tensor and (N,) indices, got {x.shape} and {indices.shape}")
    rows = np.arange(x.shape[0])
    out = x.data[rows, indices]

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[rows, indices] = g
        return (gx,)

    return _node("take_per_row", out, (x,), bw)


def index_rows(x: Tensor, order: np.ndarray) -> Tensor:
    """Reorder rows: out[i] = x[order[i]]; duplicate indices accumulate gradient."""
    x = _wrap(x)
    order = np.asarray(order)
    out = x.data[order]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, order, g)
        return (gx,)

    return _node("index_rows", out, (x,), bw)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _reachable(loss: Tensor) -> list[Tensor]:
    """Gradient-requiring nodes reachable from `loss`, newest first."""
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(node._parents)
    nodes.sort(key=lambda n: n._nid, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every gradient-requiring node reachable from `loss`.

    The loss must be scalar. Nodes are visited exactly once, in reverse
    creation order, which is a valid reverse topological order because ids
    are append-only.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    nodes = _reachable(loss)
    for node in nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in nodes:
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if not parent.requires_grad or g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def gradients(loss: Tensor, params: dict[str, Tensor] | Iterable[tuple[str, Tensor]]) -> dict[str, np.ndarray]:
    """Run backward and collect per-parameter gradients.

    Parameters the loss does not reach get an all-zero gradient of the
    matching shape.
    """
    params = dict(params)
    backward(loss)
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
