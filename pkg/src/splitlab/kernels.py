"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``SPLITLAB_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from splitlab import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SPLITLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from splitlab import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

conv_out_size = _kernels_py.conv_out_size


def _c4(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def im2col(x, k, stride=1):
    return _impl.im2col(_c4(x), k, stride)


def col2im(cols, x_shape, k, stride=1):
    return _impl.col2im(_c4(cols), tuple(int(s) for s in x_shape), k, stride)


def maxpool_forward(x, k):
    return _impl.maxpool_forward(_c4(x), k)


def maxpool_backward(g, arg, x_shape, k):
    return _impl.maxpool_backward(
        _c4(g), np.ascontiguousarray(arg, dtype=np.int64), tuple(int(s) for s in x_shape), k
    )


def total_variation(x):
    return _impl.total_variation(_c4(x))
