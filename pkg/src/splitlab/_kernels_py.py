"""Pure numpy implementations of the hot kernels.

These are the fallback when the compiled extension is unavailable and the
reference the extension is tested against.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(size, k, stride):
    return (size - k) // stride + 1


def im2col(x, k, stride):
    """Unfold ``(n, c, h, w)`` into patch rows ``(n*oh*ow, c*k*k)``.

    Row order is (sample, out_row, out_col); column order is (channel, ki, kj).
    """
    n, c, h, w = x.shape
    oh, ow = conv_out_size(h, k, stride), conv_out_size(w, k, stride)
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :oh, :ow]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * k * k)


def col2im(cols, x_shape, k, stride):
    """Adjoint of :func:`im2col`: scatter-add patch rows back onto the image."""
    n, c, h, w = x_shape
    oh, ow = conv_out_size(h, k, stride), conv_out_size(w, k, stride)
    patches = cols.reshape(n, oh, ow, c, k, k)
    dx = np.zeros(x_shape, dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            dx[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += (
                patches[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    return dx


def maxpool_forward(x, k):
    """Non-overlapping ``k x k`` max pooling; trailing rows/cols are cropped.

    Returns the pooled tensor and the flat in-window argmax (first max wins).
    """
    n, c, h, w = x.shape
    oh, ow = h // k, w // k
    xc = x[:, :, :oh * k, :ow * k].reshape(n, c, oh, k, ow, k)
    win = xc.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
    arg = np.argmax(win, axis=-1).astype(np.int64)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool_backward(g, arg, x_shape, k):
    n, c, h, w = x_shape
    oh, ow = g.shape[2], g.shape[3]
    win = np.zeros((n, c, oh, ow, k * k), dtype=np.float64)
    np.put_along_axis(win, arg[..., None], g[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=np.float64)
    dx[:, :, :oh * k, :ow * k] = (
        win.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh * k, ow * k)
    )
    return dx


def total_variation(x):
    """Anisotropic TV summed over pixels, averaged over the batch.

    The subgradient of ``|t|`` at ``t == 0`` is taken as 0.
    """
    n = x.shape[0]
    dh = x[:, :, :, 1:] - x[:, :, :, :-1]
    dv = x[:, :, 1:, :] - x[:, :, :-1, :]
    value = (np.abs(dh).sum() + np.abs(dv).sum()) / n
    sh = np.sign(dh) / n
    sv = np.sign(dv) / n
    grad = np.zeros_like(x)
    grad[:, :, :, 1:] += sh
    grad[:, :, :, :-1] -= sh
    grad[:, :, 1:, :] += sv
    grad[:, :, :-1, :] -= sv
    return float(value), grad
