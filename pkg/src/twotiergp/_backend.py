"""Pick the compiled propagation kernels when available, numpy otherwise.

Set ``TWOTIERGP_BACKEND=python`` to force the numpy implementation.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("TWOTIERGP_BACKEND", "").lower() not in ("python", "py", "numpy"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

ctilde_vector = _impl.ctilde_vector
ctilde_batch = _impl.ctilde_batch
ctilde_matrix = _impl.ctilde_matrix
weighted_pair_sum = _impl.weighted_pair_sum
