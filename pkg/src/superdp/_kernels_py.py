"""NumPy implementations of the image kernels.

Same contract as the compiled ``_kernels`` module, and the same per-element
accumulation order in ``col2im``, so both backends agree bit for bit.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride, pad):
    """(B, C, H, W) -> (B, C*kh*kw, OH*OW)."""
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :oh, :ow]
    # (B, C, OH, OW, kh, kw) -> (B, C, kh, kw, OH, OW)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * kh * kw, oh * ow)


def col2im(cols, x_shape, kh, kw, stride, pad):
    b, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(b, c, kh, kw, oh, ow)
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def maxpool2x2_forward(x):
    """Returns pooled output and the winning offset (0..3, row-major, first max wins)."""
    b, c, h, w = x.shape
    oh, ow = h // 2, w // 2
    v = x[:, :, :2 * oh, :2 * ow].reshape(b, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5)
    v = v.reshape(b, c, oh, ow, 4)
    idx = np.argmax(v, axis=-1).astype(np.uint8)
    out = np.take_along_axis(v, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2x2_backward(grad_out, idx, x_shape):
    b, c, h, w = x_shape
    oh, ow = grad_out.shape[2], grad_out.shape[3]
    g = np.zeros((b, c, oh, ow, 4))
    np.put_along_axis(g, idx[..., None].astype(np.intp), grad_out[..., None], axis=-1)
    g = g.reshape(b, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * oh, 2 * ow)
    out = np.zeros(x_shape)
    out[:, :, :2 * oh, :2 * ow] = g
    return out
