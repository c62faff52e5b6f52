"""Dense tensors with reverse-mode automatic differentiation.

The substrate of the whole package: a :class:`Tensor` wraps a contiguous
row-major numpy array (binary32 or binary64) plus an optional gradient buffer.
Forward ops record closures on the output node; ``backward()`` walks the
recorded graph once in reverse topological order and accumulates gradients
into every ``requires_grad`` leaf.

Only the operations actually needed by the model live here — this is not a
general array library.  numpy supplies storage and the raw kernels (BLAS
matmul, vectorized elementwise); every derivative rule is written out
explicitly below.

Conventions
-----------
* binary32 (``np.float32``) is the training dtype; binary64 exists for
  gradient-check oracles.  Mixing the two in one op is an error, not a cast.
* ``no_grad()`` disables graph recording; forward values are identical with
  recording on or off.
* ``backward()`` accumulates: call ``zero_grad`` (or clear ``.grad``) between
  steps.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import erf as _erf

DTYPES = (np.float32, np.float64)

_grad_enabled = True
_debug_finite = False


@contextmanager
def no_grad():
    """Context manager: do not record the autodiff graph inside."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def set_debug_finite(flag: bool) -> None:
    """When on, every op output is checked for NaN/Inf and raises eagerly."""
    global _debug_finite
    _debug_finite = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        if np.dtype(dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise TypeError(f"unsupported dtype {dtype}; use binary32 or binary64")
        self.data: np.ndarray = np.ascontiguousarray(arr, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents: tuple = ()

    # ------------------------------------------------------------------
    # bookkeeping
    # ------------------------------------------------------------------
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
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{rg})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def astype(self, dtype) -> "Tensor":
        """Cast (not differentiable; use on leaves/constants only)."""
        return Tensor(self.data.astype(dtype), dtype=dtype, requires_grad=False)

    # ------------------------------------------------------------------
    # autodiff core
    # ------------------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar loss")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ValueError("seed gradient shape mismatch")

        # Iterative post-order topological sort (graphs can be deeper than
        # the Python recursion limit for many-block models).
        topo: list[Tensor] = []
        visited = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        self.accumulate_grad(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------
    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            if other.data.dtype != self.data.dtype:
                raise TypeError(
                    f"dtype mismatch: {self.data.dtype} vs {other.data.dtype}"
                )
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype), dtype=self.data.dtype)

    # arithmetic dunders ------------------------------------------------
    def __add__(self, other):
        return add(self, self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, self._coerce(other))

    def __rsub__(self, other):
        return sub(self._coerce(other), self)

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, self._coerce(other))

    def __rtruediv__(self, other):
        return div(self._coerce(other), self)

    def __neg__(self):
        return mul(self, self._coerce(-1.0))

    def __pow__(self, p):
        return powi(self, p)

    def __matmul__(self, other):
        return matmul(self, self._coerce(other))

    def __getitem__(self, key):
        return slice_(self, key)

    # method aliases ----------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _as_tensor(x, dtype=np.float32) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


def _make(out_data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording the graph edge if recording is on."""
    if _debug_finite and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite values produced by a forward op")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._backward = None
    out._parents = ()
    out.requires_grad = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------
def add(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), bw)


def powi(a: Tensor, p) -> Tensor:
    p = float(p)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * p * a.data ** (p - 1.0))

    return _make(a.data**p, (a,), bw)


def square(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * out_data)

    return _make(out_data, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return _make(np.log(a.data), (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * 0.5 / out_data)

    return _make(out_data, (a,), bw)


def rsqrt(a: Tensor) -> Tensor:
    out_data = 1.0 / np.sqrt(a.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * (-0.5) * out_data / a.data)

    return _make(out_data, (a,), bw)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    x = a.data
    phi = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    out_data = (x * phi).astype(x.dtype)

    def bw(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
            a.accumulate_grad(g * (phi + x * pdf).astype(x.dtype))

    return _make(out_data, (a,), bw)


# ----------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------
def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axes)
            a.accumulate_grad(np.broadcast_to(g, a.data.shape))

    return _make(out_data, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axes)
            a.accumulate_grad(np.broadcast_to(g / count, a.data.shape))

    return _make(out_data, (a,), bw)


def variance(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance, composed from primitives."""
    m = mean(a, axis, keepdims=True)
    v = mean(square(sub(a, m)), axis, keepdims=keepdims)
    return v


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.dtype != b.data.dtype:
        raise TypeError(f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate_grad(_unbroadcast(gb, b.data.shape))

    return _make(out_data, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Affine map with weight stored (out, in): y = x @ w.T (+ b).

    A dedicated op (rather than matmul∘transpose) so the weight is never
    materialized transposed on the forward path.
    """
    if x.data.dtype != w.data.dtype:
        raise TypeError(f"dtype mismatch: {x.data.dtype} vs {w.data.dtype}")
    out_data = np.matmul(x.data, w.data.T)
    if b is not None:
        out_data = out_data + b.data

    def bw(g):
        if x.requires_grad:
            x.accumulate_grad(np.matmul(g, w.data))
        if w.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            x2 = x.data.reshape(-1, x.data.shape[-1])
            w.accumulate_grad(np.matmul(g2.T, x2))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.reshape(-1, g.shape[-1]).sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out_data, parents, bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.data.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a.accumulate_grad(out_data * (g - dot))

    return _make(out_data, (a,), bw)


# ----------------------------------------------------------------------
# shape surgery (pure index remapping; backward is the inverse remap)
# ----------------------------------------------------------------------
def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    return _make(out_data, (a,), bw)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    # materializes a contiguous copy: storage stays row-major by construction
    out_data = np.ascontiguousarray(a.data.transpose(axes))

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(np.ascontiguousarray(g.transpose(inv)))

    return _make(out_data, (a,), bw)


def slice_(a: Tensor, key) -> Tensor:
    out_data = np.ascontiguousarray(a.data[key])

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] = g
            a.accumulate_grad(full)

    return _make(out_data, (a,), bw)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    axis = axis % ts[0].data.ndim
    sizes = [t.data.shape[axis] for t in ts]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(np.ascontiguousarray(g[tuple(idx)]))

    return _make(out_data, ts, bw)


def split(a: Tensor, sections: int, axis: int = 0) -> list:
    """Split into equal parts along ``axis`` (inverse of concat)."""
    n = a.data.shape[axis]
    if n % sections:
        raise ValueError(f"cannot split extent {n} into {sections} equal parts")
    step = n // sections
    outs = []
    for i in range(sections):
        idx = [slice(None)] * a.data.ndim
        idx[axis] = slice(i * step, (i + 1) * step)
        outs.append(slice_(a, tuple(idx)))
    return outs


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup (embedding): out[i] = table[ids[i]].

    Backward scatter-adds into the table rows, so repeated ids accumulate.
    """
    ids = np.asarray(ids, dtype=np.int64)
    out_data = np.ascontiguousarray(table.data[ids])

    def bw(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            table.accumulate_grad(full)

    return _make(out_data, (table,), bw)


# ----------------------------------------------------------------------
# random tensors
# ----------------------------------------------------------------------
def rng_fill(shape, distribution: str, stream, dtype=np.float32) -> Tensor:
    """Deterministic random tensor from an addressed stream.

    distribution: 'uniform01' or 'standard_normal'.
    """
    if distribution == "uniform01":
        data = stream.uniform(shape, dtype=dtype)
    elif distribution == "standard_normal":
        data = stream.normal(shape, dtype=dtype)
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    return Tensor(data, dtype=dtype)


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), dtype=dtype, requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), dtype=dtype, requires_grad=requires_grad)


def full(shape, value, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype), dtype=dtype, requires_grad=requires_grad)
