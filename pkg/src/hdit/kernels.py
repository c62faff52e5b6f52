"""Dispatch layer over the compiled kernels.

`hdit._native` (Cython) is used when importable; otherwise the numpy fallback
applies.  HDIT_NATIVE=0 forces the fallback, HDIT_NATIVE=1 insists on the
extension (ImportError if it is missing).  Both paths implement the same
contract and are compared in tests and in benchmarks/bench_kernels.py.
"""
from __future__ import annotations

import os

import numpy as np

from .tensor import Tensor, _make

_env = os.environ.get("HDIT_NATIVE")
if _env == "0":
    _native = None
elif _env == "1":
    from . import _native  # hard requirement, let ImportError surface
else:
    try:
        from . import _native
    except ImportError:
        _native = None

HAVE_NATIVE = _native is not None


def gather_rows(src: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """out[b, m, :] = src[b, idx[m], :] for src of shape (B, N, D)."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if _native is not None:
        return _native.gather_rows(np.ascontiguousarray(src), idx)
    return np.ascontiguousarray(src[:, idx, :])


def scatter_add_rows(dst: np.ndarray, idx: np.ndarray, src: np.ndarray) -> None:
    """dst[b, idx[m], :] += src[b, m, :], duplicates accumulating."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if _native is not None:
        _native.scatter_add_rows(dst, idx, np.ascontiguousarray(src))
    else:
        np.add.at(dst, (slice(None), idx), src)


def gather_tokens(x: Tensor, idx: np.ndarray) -> Tensor:
    """Differentiable token gather: (B, N, D) -> (B, len(idx), D).

    Backward scatter-adds through the index map (the adjoint of a gather),
    so windows that share tokens accumulate their gradients.
    """
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    out_data = gather_rows(x.data, idx)

    def bw(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            scatter_add_rows(full, idx, np.ascontiguousarray(g))
            x.accumulate_grad(full)

    return _make(out_data, (x,), bw)
