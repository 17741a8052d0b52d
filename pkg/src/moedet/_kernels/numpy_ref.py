"""NumPy reference implementations of the hot kernels.

These are the fallback used when the compiled extension is unavailable.
The compiled module in ``_native.pyx`` implements the same four functions
with identical signatures and semantics; ``tests/test_kernels.py`` checks
the two backends against each other element for element.

Shapes follow the conv2d convention used throughout the package:
``x`` is (B, C, H, W), patch matrices are (B, C*kh*kw, L) with
L = out_h * out_w, rows ordered as (c, i, j) row-major.
"""

import numpy as np


def im2col(x, kh, kw, stride, pad):
    """Unfold (B, C, H, W) into patch columns (B, C*kh*kw, out_h*out_w)."""
    b, c, h, w = x.shape
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sb, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, kh, kw, out_h, out_w),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(windows.reshape(b, c * kh * kw, out_h * out_w))


def col2im(cols, b, c, h, w, kh, kw, stride, pad):
    """Scatter-add patch columns back onto a (B, C, H, W) canvas.

    Exact adjoint of :func:`im2col`: overlapping windows accumulate.
    """
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, out_h, out_w)
    for i in range(kh):
        i_end = i + stride * out_h
        for j in range(kw):
            j_end = j + stride * out_w
            xp[:, :, i:i_end:stride, j:j_end:stride] += cols[:, :, i, j]
    if pad > 0:
        return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])
    return xp


def maxpool2d_forward(x, k, stride):
    """Max pooling over (B, C, H, W); trailing rows/cols that do not fill a
    window are dropped.

    Returns (out, argmax) where argmax holds flat indices into H*W of the
    winning element (first occurrence on ties).
    """
    b, c, h, w = x.shape
    out_h = (h - k) // stride + 1
    out_w = (w - k) // stride + 1
    sb, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, out_h, out_w, k, k),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    flat = windows.reshape(b, c, out_h, out_w, k * k)
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    # translate window-local winner to a flat H*W index
    oi = np.arange(out_h)[:, None] * stride
    oj = np.arange(out_w)[None, :] * stride
    row = oi + local // k
    col = oj + local % k
    argmax = row * w + col
    return np.ascontiguousarray(out), np.ascontiguousarray(argmax)


def maxpool2d_backward(grad, argmax, h, w):
    """Route pooled gradients back to the argmax positions."""
    b, c = grad.shape[:2]
    gx = np.zeros((b, c, h * w), dtype=grad.dtype)
    flat_idx = argmax.reshape(b, c, -1)
    np.add.at(
        gx,
        (np.arange(b)[:, None, None], np.arange(c)[None, :, None], flat_idx),
        grad.reshape(b, c, -1),
    )
    return gx.reshape(b, c, h, w)
