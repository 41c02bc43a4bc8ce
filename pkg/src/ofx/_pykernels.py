"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx``. The two are required to
agree bit-for-bit, so the accumulation order below is part of the contract:
taps are always visited row-major and summed into a zero-initialised buffer.
"""

import numpy as np


def correlate2d(img, kernel, edge):
    """2-D cross-correlation with same-size output.

    ``edge`` selects edge-clamp padding, otherwise zero padding.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    h, w = img.shape
    mode = "edge" if edge else "constant"
    padded = np.pad(img, ((ph, ph), (pw, pw)), mode=mode)
    out = np.zeros((h, w), dtype=np.float64)
    for ky in range(kh):
        for kx in range(kw):
            out += kernel[ky, kx] * padded[ky:ky + h, kx:kx + w]
    return out


def im2col3x3(x):
    """Unfold (N, C, H, W) into (N, C*9, H*W) patches with zero padding."""
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    padded = np.zeros((n, c, h + 2, w + 2), dtype=x.dtype)
    padded[:, :, 1:-1, 1:-1] = x
    cols = np.empty((n, c, 9, h, w), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, ky * 3 + kx] = padded[:, :, ky:ky + h, kx:kx + w]
    return cols.reshape(n, c * 9, h * w)


def col2im3x3(cols, h, w):
    """Adjoint of :func:`im2col3x3`: scatter-add patches back to (N, C, H, W)."""
    cols = np.ascontiguousarray(cols)
    n, c9, _ = cols.shape
    c = c9 // 9
    cols = cols.reshape(n, c, 9, h, w)
    padded = np.zeros((n, c, h + 2, w + 2), dtype=cols.dtype)
    for ky in range(3):
        for kx in range(3):
            padded[:, :, ky:ky + h, kx:kx + w] += cols[:, :, ky * 3 + kx]
    return np.ascontiguousarray(padded[:, :, 1:-1, 1:-1])


def extend_rows(img, valid):
    """Give every invalid pixel the value of the nearest valid pixel in its row.

    Ties go to the lower column index. Returns ``(values, assigned)``; rows
    without any valid pixel stay unassigned.
    """
    img = np.asarray(img, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    h, w = img.shape
    idx = np.broadcast_to(np.arange(w), (h, w))
    prev = np.where(valid, idx, -1)
    prev = np.maximum.accumulate(prev, axis=1)
    nxt = np.where(valid, idx, w)
    nxt = np.minimum.accumulate(nxt[:, ::-1], axis=1)[:, ::-1]
    has_prev = prev >= 0
    has_next = nxt < w
    d_prev = np.where(has_prev, idx - prev, w + 1)
    d_next = np.where(has_next, nxt - idx, w + 1)
    src = np.where(d_prev <= d_next, prev, nxt)
    assigned = has_prev | has_next
    rows = np.broadcast_to(np.arange(h)[:, None], (h, w))
    values = np.where(assigned, img[rows, np.clip(src, 0, w - 1)], 0.0)
    return values, assigned
