# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Summation order mirrors the numpy versions exactly so both backends produce
identical floating point results (built with -ffp-contract=off).
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def correlate2d(img, kernel, bint edge):
    cdef double[:, ::1] src = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[:, ::1] k = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t y, x, ky, kx, sy, sx
    cdef double acc, v
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for ky in range(kh):
                sy = y + ky - ph
                if sy < 0 or sy >= h:
                    if not edge:
                        continue
                    sy = 0 if sy < 0 else h - 1
                for kx in range(kw):
                    sx = x + kx - pw
                    if sx < 0 or sx >= w:
                        if edge:
                            sx = 0 if sx < 0 else w - 1
                            v = src[sy, sx]
                        else:
                            v = 0.0
                    else:
                        v = src[sy, sx]
                    acc = acc + k[ky, kx] * v
            out[y, x] = acc
    return out_arr


cdef void _im2col(real[:, :, :, ::1] x, real[:, :, ::1] cols) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, ch, ky, kx, y, xx, sy, sx, row
    for b in range(n):
        for ch in range(c):
            for ky in range(3):
                for kx in range(3):
                    row = ch * 9 + ky * 3 + kx
                    for y in range(h):
                        sy = y + ky - 1
                        for xx in range(w):
                            sx = xx + kx - 1
                            if sy < 0 or sy >= h or sx < 0 or sx >= w:
                                cols[b, row, y * w + xx] = 0
                            else:
                                cols[b, row, y * w + xx] = x[b, ch, sy, sx]


def im2col3x3(x):
    x = np.ascontiguousarray(x)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cols = np.empty((n, c * 9, h * w), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col[float](x, cols)
    elif x.dtype == np.float64:
        _im2col[double](x, cols)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols


cdef void _col2im(real[:, :, ::1] cols, real[:, :, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1], h = out.shape[2], w = out.shape[3]
    cdef Py_ssize_t b, ch, ky, kx, y, xx, sy, sx, row
    for b in range(n):
        for ch in range(c):
            for ky in range(3):
                for kx in range(3):
                    row = ch * 9 + ky * 3 + kx
                    for y in range(h):
                        sy = y + ky - 1
                        if sy < 0 or sy >= h:
                            continue
                        for xx in range(w):
                            sx = xx + kx - 1
                            if sx < 0 or sx >= w:
                                continue
                            out[b, ch, sy, sx] = out[b, ch, sy, sx] + cols[b, row, y * w + xx]


def col2im3x3(cols, Py_ssize_t h, Py_ssize_t w):
    cols = np.ascontiguousarray(cols)
    cdef Py_ssize_t n = cols.shape[0], c = cols.shape[1] // 9
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, out)
    elif cols.dtype == np.float64:
        _col2im[double](cols, out)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return out


def extend_rows(img, valid):
    cdef double[:, ::1] src = np.ascontiguousarray(img, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] ok = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    values_arr = np.zeros((h, w), dtype=np.float64)
    assigned_arr = np.zeros((h, w), dtype=np.uint8)
    cdef double[:, ::1] values = values_arr
    cdef cnp.uint8_t[:, ::1] assigned = assigned_arr
    cdef Py_ssize_t y, x, prev, nxt, j
    with nogil:
        for y in range(h):
            prev = -1
            x = 0
            while x < w:
                if ok[y, x]:
                    values[y, x] = src[y, x]
                    assigned[y, x] = 1
                    prev = x
                    x += 1
                    continue
                # void run [x, nxt)
                nxt = x
                while nxt < w and not ok[y, nxt]:
                    nxt += 1
                if prev < 0 and nxt >= w:
                    break
                for j in range(x, nxt):
                    assigned[y, j] = 1
                    if nxt >= w or (prev >= 0 and j - prev <= nxt - j):
                        values[y, j] = src[y, prev]
                    else:
                        values[y, j] = src[y, nxt]
                x = nxt
    return values_arr, assigned_arr.astype(bool)
