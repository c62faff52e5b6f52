"""Hourglass diffusion transformer, from scratch.

HDIT_THREADS caps the BLAS thread pool; it must take effect before numpy is
first imported anywhere in the process, which is why this block sits at the
very top of the package root.
"""
import os as _os

_threads = _os.environ.get("HDIT_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from . import tensor  # noqa: E402  (env vars must be set first)
from .tensor import Tensor, no_grad  # noqa: E402

__all__ = ["Tensor", "no_grad", "tensor", "__version__"]
