"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is a dynamic tape: every operation records its parents and a
vector-Jacobian closure on the output tensor, and :func:`backward` replays the
tape in reverse topological order from a scalar loss. Gradients accumulate
additively into ``.grad`` of every reachable tensor with ``requires_grad``;
calling backward twice without clearing doubles them.

Only the broadcast rules the model needs are supported: equal shapes, a row
vector ``[D]`` against a matrix ``[R, D]``, and Python scalars.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from ..errors import ContractError, DomainError, ShapeError

__all__ = [
    "Tensor",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "ln",
    "relu",
    "gelu",
    "softmax",
    "log_softmax",
    "mean",
    "tsum",
    "broadcast_rows",
    "layer_norm",
    "take",
    "take_rows",
    "gather_2d",
    "slice_cols",
    "concat_cols",
    "transpose",
    "reshape",
    "backward",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A dense n-d array of float64 participating in reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A view of the same data cut off from the graph."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce an upstream gradient back to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    # scalar operand
    if shape == ():
        return np.array(g.sum())
    # row vector [D] broadcast over rows of [R, D]
    if len(shape) == 1 and g.ndim == 2 and g.shape[1] == shape[0]:
        return g.sum(axis=0)
    raise ShapeError(f"cannot reduce gradient of shape {g.shape} to {shape}")


def _check_broadcastable(a: Tensor, b: Tensor, opname: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == 2 and sb == (sa[1],):
        return
    if len(sb) == 2 and sa == (sb[1],):
        return
    raise ShapeError(f"{opname}: shapes {list(sa)} and {list(sb)} do not broadcast "
                     "(only [R,D] with [D] or scalars)")


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b, "add")

    def vjp(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _node(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b, "sub")

    def vjp(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _node(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b, "mul")

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _node(a.data * b.data, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcastable(a, b, "div")
    if np.any(b.data == 0.0):
        raise DomainError("div: divisor contains zero")

    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
                if b.requires_grad else None)

    return _node(a.data / b.data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {list(a.shape)} and {list(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {list(a.shape)} vs {list(b.shape)}")

    def vjp(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _node(a.data @ b.data, (a, b), vjp)


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------

def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _node(out_data, (a,), lambda g: (g * out_data,))


def ln(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("ln: argument must be strictly positive")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    # exact erf form: x * Phi(x)
    phi_cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out_data = a.data * phi_cdf

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        return (g * (phi_cdf + a.data * pdf),)

    return _node(out_data, (a,), vjp)


def _rows_view(x: np.ndarray, opname: str) -> np.ndarray:
    if x.ndim == 1:
        view = x.reshape(1, -1)
    elif x.ndim == 2:
        view = x
    else:
        raise ShapeError(f"{opname} expects rank 1 or 2, got shape {list(x.shape)}")
    if view.shape[1] == 0:
        raise ShapeError(f"{opname} on empty rows")
    return view


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax; a rank-1 input is treated as a single row."""
    x = _rows_view(a.data, "softmax")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out_data = p.reshape(a.shape)

    def vjp(g):
        g2 = g.reshape(p.shape)
        inner = (g2 * p).sum(axis=1, keepdims=True)
        return ((p * (g2 - inner)).reshape(a.shape),)

    return _node(out_data, (a,), vjp)


def log_softmax(a: Tensor) -> Tensor:
    x = _rows_view(a.data, "log_softmax")
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = (shifted - lse).reshape(a.shape)
    p = np.exp(shifted - lse)

    def vjp(g):
        g2 = g.reshape(p.shape)
        return ((g2 - p * g2.sum(axis=1, keepdims=True)).reshape(a.shape),)

    return _node(out_data, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions and broadcasts
# ---------------------------------------------------------------------------

def tsum(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    return _node(np.array(a.data.sum()), (a,),
                 lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _node(np.array(a.data.mean()), (a,),
                 lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def broadcast_rows(v: Tensor, n_rows: int) -> Tensor:
    """Tile a row vector [D] into [n_rows, D]."""
    if v.data.ndim != 1:
        raise ShapeError(f"broadcast_rows expects a rank-1 vector, got {list(v.shape)}")
    out_data = np.broadcast_to(v.data, (n_rows, v.shape[0])).copy()
    return _node(out_data, (v,), lambda g: (g.sum(axis=0),))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise DomainError(f"layer_norm eps must be positive, got {eps}")
    xd = _rows_view(x.data, "layer_norm")
    d = xd.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape [{d}], got "
                         f"{list(gain.shape)} and {list(bias.shape)}")
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out_data = (xhat * gain.data + bias.data).reshape(x.shape)

    def vjp(g):
        g2 = g.reshape(xhat.shape)
        g_gain = (g2 * xhat).sum(axis=0) if gain.requires_grad else None
        g_bias = g2.sum(axis=0) if bias.requires_grad else None
        g_x = None
        if x.requires_grad:
            gxh = g2 * gain.data
            g_x = (inv_std * (gxh
                              - gxh.mean(axis=1, keepdims=True)
                              - xhat * (gxh * xhat).mean(axis=1, keepdims=True)))
            g_x = g_x.reshape(x.shape)
        return (g_x, g_gain, g_bias)

    return _node(out_data, (x, gain, bias), vjp)


# ---------------------------------------------------------------------------
# indexing and layout
# ---------------------------------------------------------------------------

def take(a: Tensor, indices) -> Tensor:
    """Gather entries of a rank-1 tensor; backward scatter-adds."""
    if a.data.ndim != 1:
        raise ShapeError(f"take expects a rank-1 tensor, got {list(a.shape)}")
    idx = np.asarray(indices, dtype=np.int64)

    def vjp(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        return (acc,)

    return _node(a.data[idx], (a,), vjp)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows of a rank-2 tensor (embedding lookup)."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_rows expects a rank-2 tensor, got {list(a.shape)}")
    idx = np.asarray(indices, dtype=np.int64)

    def vjp(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        return (acc,)

    return _node(a.data[idx], (a,), vjp)


def gather_2d(p: Tensor, row_idx, col_idx) -> Tensor:
    """Build ``out[i, j] = p[row_idx[i], col_idx[j]]``; backward scatter-adds."""
    if p.data.ndim != 2:
        raise ShapeError(f"gather_2d expects a rank-2 tensor, got {list(p.shape)}")
    ri = np.asarray(row_idx, dtype=np.int64)
    ci = np.asarray(col_idx, dtype=np.int64)

    def vjp(g):
        acc = np.zeros_like(p.data)
        np.add.at(acc, (ri[:, None], ci[None, :]), g)
        return (acc,)

    return _node(p.data[ri[:, None], ci[None, :]], (p,), vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols expects a rank-2 tensor, got {list(a.shape)}")

    def vjp(g):
        acc = np.zeros_like(a.data)
        acc[:, start:stop] = g
        return (acc,)

    return _node(a.data[:, start:stop].copy(), (a,), vjp)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols of zero tensors")
    widths = [p.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def vjp(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] if p.requires_grad else None
                     for i, p in enumerate(parts))

    return _node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a rank-2 tensor, got {list(a.shape)}")
    return _node(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor
    with ``requires_grad``. The loss must be a scalar."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    # per-pass accounting keeps repeated backward calls purely additive
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = flowing.get(id(node))
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
        node.grad += g
        if node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = flowing.get(id(parent))
            flowing[id(parent)] = pg if prev is None else prev + pg
