# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled gather / scatter-add kernels for windowed attention.

The gather (token windows from a feature map) and its adjoint scatter-add are
the only parts of windowed attention that are not a BLAS call; the scatter-add
in particular is pathologically slow through numpy's buffered ufunc.at.  The
numpy fallback in hdit.kernels implements the identical contract.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


def gather_rows(floating[:, :, ::1] src, long long[::1] idx):
    """out[b, m, :] = src[b, idx[m], :]"""
    cdef Py_ssize_t B = src.shape[0]
    cdef Py_ssize_t N = src.shape[1]
    cdef Py_ssize_t D = src.shape[2]
    cdef Py_ssize_t M = idx.shape[0]
    cdef Py_ssize_t b, m, d, j
    if floating is float:
        out_arr = np.empty((B, M, D), dtype=np.float32)
    else:
        out_arr = np.empty((B, M, D), dtype=np.float64)
    cdef floating[:, :, ::1] out = out_arr
    with nogil:
        for b in range(B):
            for m in range(M):
                j = idx[m]
                for d in range(D):
                    out[b, m, d] = src[b, j, d]
    return out_arr


def scatter_add_rows(floating[:, :, ::1] dst, long long[::1] idx, floating[:, :, ::1] src):
    """dst[b, idx[m], :] += src[b, m, :]  (duplicates accumulate)"""
    cdef Py_ssize_t B = src.shape[0]
    cdef Py_ssize_t M = src.shape[1]
    cdef Py_ssize_t D = src.shape[2]
    cdef Py_ssize_t b, m, d, j
    with nogil:
        for b in range(B):
            for m in range(M):
                j = idx[m]
                for d in range(D):
                    dst[b, j, d] += src[b, m, d]
