"""Pixel-grid primitives: resampling, filtering and grayscale file I/O.

Images are 2-D ``float64`` arrays holding intensities in [0, 255]. Masks are
2-D ``uint8`` arrays holding {0, 1}. Quantisation to 8 bits only happens when
writing files.
"""

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import kernels

CANONICAL_SHAPE = (120, 160)
RESIZE_METHODS = ("bilinear", "bicubic", "nearest")
PADDING_MODES = ("zero", "edge")

# Catmull-Rom
_CUBIC_A = -0.5


def as_image(arr):
    img = np.array(arr, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"image must be a non-empty 2-D array, got shape {img.shape}")
    return np.clip(img, 0.0, 255.0)


def binarize_mask(arr, level=0.5):
    return (np.asarray(arr) >= level).astype(np.uint8)


def check_pair(img, mask):
    if np.shape(img) != np.shape(mask):
        raise ValueError(f"image {np.shape(img)} and mask {np.shape(mask)} differ in shape")


def quantize(img):
    """Round to the nearest 8-bit level (halves round up)."""
    return np.floor(np.clip(img, 0.0, 255.0) + 0.5).astype(np.uint8)


def _cubic(t):
    t = np.abs(t)
    a = _CUBIC_A
    near = ((a + 2) * t - (a + 3)) * t * t + 1
    far = ((a * t - 5 * a) * t + 8 * a) * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _source_coords(n_in, n_out):
    scale = n_in / n_out
    return (np.arange(n_out) + 0.5) * scale - 0.5


def axis_weights(n_in, n_out, method):
    """Dense (n_out, n_in) resampling matrix for one axis.

    Source taps falling outside the grid are clamped onto the edge pixel.
    """
    src = _source_coords(n_in, n_out)
    weights = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    if method == "nearest":
        idx = np.clip(np.floor(src + 0.5).astype(np.int64), 0, n_in - 1)
        weights[rows, idx] = 1.0
        return weights
    base = np.floor(src).astype(np.int64)
    frac = src - base
    if method == "bilinear":
        offsets, taps = (0, 1), (1.0 - frac, frac)
    elif method == "bicubic":
        offsets = (-1, 0, 1, 2)
        taps = tuple(_cubic(frac - o) for o in offsets)
    else:
        raise ValueError(f"unknown resize method {method!r}")
    for off, w in zip(offsets, taps):
        idx = np.clip(base + off, 0, n_in - 1)
        np.add.at(weights, (rows, idx), w)
    return weights


def resize(img, out_h, out_w, method="bilinear"):
    """Resample ``img`` to ``(out_h, out_w)``.

    Pixel centres are aligned (source = (dst + 0.5) * scale - 0.5) and the
    result is clamped to [0, 255]. Same-size requests return a copy.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    if method not in RESIZE_METHODS:
        raise ValueError(f"unknown resize method {method!r}")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    if method == "nearest":
        ri = np.clip(np.floor(_source_coords(h, out_h) + 0.5).astype(np.int64), 0, h - 1)
        ci = np.clip(np.floor(_source_coords(w, out_w) + 0.5).astype(np.int64), 0, w - 1)
        return img[np.ix_(ri, ci)].copy()
    out = img
    if out_h != h:
        out = axis_weights(h, out_h, method) @ out
    if out_w != w:
        out = out @ axis_weights(w, out_w, method).T
    return np.clip(out, 0.0, 255.0)


def resize_mask(mask, out_h, out_w):
    """Nearest-neighbour resample followed by re-binarisation."""
    resized = resize(np.asarray(mask, dtype=np.float64), out_h, out_w, "nearest")
    return binarize_mask(resized)


def convolve(img, kernel, padding="zero"):
    """Same-size 2-D filtering (cross-correlation; all kernels used here are
    point-symmetric so this equals convolution)."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ValueError(f"kernel dimensions must be odd, got {kernel.shape}")
    if padding not in PADDING_MODES:
        raise ValueError(f"unknown padding mode {padding!r}")
    return kernels.correlate2d(np.asarray(img, dtype=np.float64), kernel, padding == "edge")


def gaussian_kernel(size=3, sigma=2.0):
    r = size // 2
    d = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()


# --- file I/O -------------------------------------------------------------

def _check_format(path):
    suffix = Path(path).suffix.lower()
    if suffix not in (".png", ".pgm"):
        raise ValueError(f"unsupported image format {suffix!r} (expected .png or .pgm)")


def read_image(path):
    _check_format(path)
    with PILImage.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: expected 8-bit single-channel image, got mode {im.mode}")
        return np.asarray(im, dtype=np.float64)


def write_image(path, img):
    _check_format(path)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(quantize(img), mode="L").save(path)


def read_mask(path):
    """Load an 8-bit mask; intensities >= 128 count as iris."""
    arr = read_image(path)
    return (arr >= 128).astype(np.uint8)


def write_mask(path, mask):
    _check_format(path)
    out = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(out, mode="L").save(path)
