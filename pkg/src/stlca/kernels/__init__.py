"""Hot numeric kernels with two interchangeable implementations.

Everything here works on contiguous float64 arrays in channel-first layout.
The numba implementation jit-compiles the gather/scatter loops (patch
extraction, column folding, bilinear sampling); the numpy implementation
reaches the same results through stride tricks and fancy indexing.  Dense
matrix products go through BLAS in both cases.

The backend is picked once at import time from the ``STLCA_KERNELS``
environment variable: ``numba`` (default when numba imports cleanly) or
``numpy``.  ``benchmarks/kernel_benchmark.py`` compares the two.
"""

import os

from ..errors import ConfigError
from . import numpy_backend

_requested = os.environ.get("STLCA_KERNELS", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ConfigError(
        f"STLCA_KERNELS must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested in ("", "numba"):
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise ConfigError("STLCA_KERNELS=numba but numba is not importable")
        _impl = numpy_backend
        BACKEND = "numpy"
else:
    _impl = numpy_backend
    BACKEND = "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
resize_bilinear_fwd = _impl.resize_bilinear_fwd
resize_bilinear_bwd = _impl.resize_bilinear_bwd
warp_bilinear_fwd = _impl.warp_bilinear_fwd
warp_bilinear_bwd = _impl.warp_bilinear_bwd


def backend_name() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return BACKEND
