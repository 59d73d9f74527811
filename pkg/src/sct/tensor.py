"""Dense tensor with reverse-mode automatic differentiation.

Every tensor wraps a numpy array. Ops build a DAG of parent links and
backward closures; ``backward()`` on a scalar walks the DAG in reverse
topological order and accumulates gradients into ``.grad`` buffers.

Conventions:
  * float64 is the default dtype; gradient checks and the oracle tests
    assume it. float32 is accepted for cheaper training runs.
  * Gradients accumulate across ``backward()`` calls until ``zero_grad()``
    is called explicitly.
  * Data buffers are treated as immutable once wrapped; only ``grad``
    mutates. Forward passes under ``no_grad()`` record nothing and are
    safe to run concurrently over distinct inputs.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy import special as _special

from .errors import ContractError, ShapeError

DEFAULT_DTYPE = np.float64

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A numpy-backed array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents: tuple = ()

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
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

    def __repr__(self):
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{req})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- gradient bookkeeping ------------------------------------------
    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode sweep from a scalar output.

        Gradients are accumulated (summed) into every reachable tensor
        with ``requires_grad``; call ``zero_grad()`` between steps to
        reset. Raises ``ContractError`` if this tensor is not a scalar.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other))

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take_slice(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


TensorLike = Union[Tensor, np.ndarray, float, int, list]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ts) in enumerate(zip(g.shape, shape)):
        if ts == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- arithmetic primitives ----------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise sum with numpy broadcasting (covers bias/embedding adds)."""
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), bw)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bw)


def power(a: TensorLike, p: float) -> Tensor:
    a = _as_tensor(a)
    data = a.data ** p

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0))

    return _make(data, (a,), bw)


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product; leading batch dims broadcast as in ``np.matmul``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(data, (a, b), bw)


# -- shape primitives -----------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def bw(g):
        x._accumulate(g.reshape(x.shape))

    return _make(data, (x,), bw)


def transpose(x: Tensor, axes=None) -> Tensor:
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = np.argsort(axes)
    data = np.transpose(x.data, axes)

    def bw(g):
        x._accumulate(np.transpose(g, inv))

    return _make(data, (x,), bw)


def swap_last(x: Tensor) -> Tensor:
    """Transpose the last two axes (keys for attention scores)."""
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(parts: Iterable[Tensor], axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for p, gp in zip(parts, np.split(g, splits, axis=axis)):
            if p.requires_grad:
                p._accumulate(gp)

    return _make(data, parts, bw)


def take_slice(x: Tensor, key) -> Tensor:
    """Basic (int/slice/ellipsis) indexing; backward scatters into zeros."""
    x = _as_tensor(x)
    data = x.data[key]

    def bw(g):
        full = np.zeros_like(x.data)
        full[key] = g
        x._accumulate(full)

    return _make(data, (x,), bw)


def pad(x: Tensor, pad_width) -> Tensor:
    """Zero padding; ``pad_width`` is a per-axis (before, after) list."""
    x = _as_tensor(x)
    data = np.pad(x.data, pad_width)
    sl = tuple(slice(b, b + s) for (b, _), s in zip(pad_width, x.shape))

    def bw(g):
        x._accumulate(g[sl])

    return _make(data, (x,), bw)


def roll(x: Tensor, shift: int, axis: int) -> Tensor:
    """Cyclic shift along one axis (temporal key shift uses this)."""
    x = _as_tensor(x)
    data = np.roll(x.data, shift, axis=axis)

    def bw(g):
        x._accumulate(np.roll(g, -shift, axis=axis))

    return _make(data, (x,), bw)


def take_along_axis(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis`` with ``np.take_along_axis`` semantics.

    ``indices`` is a plain integer array (never differentiated). Backward
    scatter-adds, so duplicate indices are handled correctly.
    """
    x = _as_tensor(x)
    data = np.take_along_axis(x.data, indices, axis=axis)

    def bw(g):
        idx = np.broadcast_to(indices, g.shape)
        full = np.zeros_like(x.data)
        grids = []
        for d in range(g.ndim):
            if d == axis % g.ndim:
                grids.append(idx)
            else:
                shape = [1] * g.ndim
                shape[d] = g.shape[d]
                grids.append(np.arange(g.shape[d]).reshape(shape))
        np.add.at(full, tuple(grids), g)
        x._accumulate(full)

    return _make(data, (x,), bw)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape).copy() if np.ndim(g) else np.full(x.shape, g, dtype=x.dtype))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(ge, x.shape))

    return _make(data, (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / float(n))


# -- nonlinear primitives --------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; rows sum to 1 with no overflow on huge logits."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        x._accumulate(data * (g - dot))

    return _make(data, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bw(g):
        x._accumulate(g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return _make(data, (x,), bw)


def logsumexp(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Stabilized log-sum-exp; gradient is the softmax of ``x``."""
    x = _as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    data = np.log(s) + m
    soft = e / s
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def bw(g):
        ge = g if keepdims else np.expand_dims(g, axis)
        x._accumulate(ge * soft)

    return _make(data, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError(
            f"layer_norm affine params {gamma.shape}/{beta.shape} do not match last axis of {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=tuple(range(g.ndim - 1))))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=tuple(range(g.ndim - 1))))
        if x.requires_grad:
            gh = g * gamma.data
            n = x.shape[-1]
            dx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / n)
            x._accumulate(dx)

    return _make(data, (x, gamma, beta), bw)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact-erf GELU: x * Phi(x)."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + _special.erf(x.data * _INV_SQRT2))
    data = x.data * cdf

    def bw(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        x._accumulate(g * (cdf + x.data * pdf))

    return _make(data, (x,), bw)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator] = None,
            train: bool = True) -> Tensor:
    """Inverted-scaling dropout: eval mode is the identity, train mode
    zeroes units with probability ``rate`` and rescales by 1/(1-rate)."""
    x = _as_tensor(x)
    if not train or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ContractError("dropout in train mode needs an explicit rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep))


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit L2 norm (shared-QK keys)."""
    sq = sum_(mul(x, x), axis=axis, keepdims=True)
    return mul(x, power(add(sq, eps), -0.5))


def label_smoothed_cross_entropy(logits: Tensor, target, alpha: float = 0.0) -> Tensor:
    """Cross entropy against (1-alpha)*onehot + alpha/C targets.

    ``target`` may be a single class index or a 1-D batch of indices; a
    batch is averaged. Raises IndexError for out-of-range targets.
    """
    logits = _as_tensor(logits)
    if not 0.0 <= alpha < 1.0:
        raise ContractError(f"label smoothing alpha must be in [0, 1), got {alpha}")
    squeeze = logits.ndim == 1
    if squeeze:
        logits = reshape(logits, (1, logits.shape[0]))
    n, c = logits.shape
    idx = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if idx.shape != (n,):
        raise ShapeError(f"target shape {idx.shape} does not match batch {n}")
    if idx.min() < 0 or idx.max() >= c:
        raise IndexError(f"target index out of range [0, {c})")
    q = np.full((n, c), alpha / c, dtype=logits.dtype)
    q[np.arange(n), idx] += 1.0 - alpha
    logp = log_softmax(logits, axis=-1)
    return mul(sum_(mul(logp, Tensor(q))), -1.0 / n)


# -- parameters -------------------------------------------------------------

@dataclass
class Parameter:
    """A named, shape-checked trainable tensor."""

    name: str
    tensor: Tensor
    shape_spec: tuple = field(default=None)

    def __post_init__(self):
        if self.shape_spec is None:
            self.shape_spec = tuple(self.tensor.shape)
        if tuple(self.tensor.shape) != tuple(self.shape_spec):
            raise ShapeError(
                f"parameter {self.name}: shape {self.tensor.shape} != spec {self.shape_spec}"
            )
        self.tensor.requires_grad = True

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad
