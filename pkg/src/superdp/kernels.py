"""Backend selection for the image kernels.

The compiled module is used when it imports; ``SUPERDP_KERNELS=python`` forces
the NumPy fallback. ``BACKEND`` names whichever one is active.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("SUPERDP_KERNELS", "").lower() == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def im2col(x, kh, kw, stride=1, pad=0):
    return _impl.im2col(_c(x), kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride=1, pad=0):
    return _impl.col2im(_c(cols), tuple(x_shape), kh, kw, stride, pad)


def maxpool2x2_forward(x):
    return _impl.maxpool2x2_forward(_c(x))


def maxpool2x2_backward(grad_out, idx, x_shape):
    return _impl.maxpool2x2_backward(_c(grad_out), np.ascontiguousarray(idx, dtype=np.uint8), tuple(x_shape))


def backend_module(name):
    """Return a specific backend by name, for comparisons and benchmarks."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
