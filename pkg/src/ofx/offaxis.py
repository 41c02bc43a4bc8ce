"""Off-axis geometry: per-line stretching/contracting and projective tilt.

Image and mask always travel the same geometric path; only the interpolation
differs (smooth for images, nearest for masks, which are re-binarised).
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .imaging import binarize_mask, check_pair, convolve, gaussian_kernel, resize, resize_mask

TOWARD_START = "toward_start"
TOWARD_END = "toward_end"
DIRECTIONS = (TOWARD_START, TOWARD_END)
LAMBDA_RANGE = (2.0, 17.0)

UP_LEFT = "up_left"
UP_RIGHT = "up_right"

# normalised-coordinate slack when deciding whether a point is inside the source
_INSIDE_EPS = 1e-9


class DegenerateHomographyError(ValueError):
    """Raised when a target quadrilateral does not define a projective map."""


@dataclass(frozen=True)
class WarpDraws:
    col_lambda: float
    row_lambda: float
    col_direction: str
    row_direction: str

    @classmethod
    def sample(cls, rng):
        col_dir = DIRECTIONS[int(rng.integers(2))]
        row_dir = DIRECTIONS[int(rng.integers(2))]
        col_lam = float(rng.uniform(*LAMBDA_RANGE))
        row_lam = float(rng.uniform(*LAMBDA_RANGE))
        return cls(col_lam, row_lam, col_dir, row_dir)

    @classmethod
    def identity(cls):
        return cls(1.0, 1.0, TOWARD_END, TOWARD_END)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ColumnMap:
    """1-based target positions ``positions[j]`` of each source line."""

    s: int
    positions: np.ndarray

    @property
    def extent(self):
        return int(self.positions[-1])


@dataclass(frozen=True)
class TiltDraws:
    direction: str
    a: float
    b: float
    c: float
    d: float

    @classmethod
    def sample(cls, rng):
        if rng.random() < 0.5:
            a, b = rng.uniform(0.15, 0.45, size=2)
            c = rng.uniform(0.9, 1.0)
            d = rng.uniform(0.0, 0.1)
            direction = UP_LEFT
        else:
            a, b = rng.uniform(0.0, 0.1, size=2)
            c = rng.uniform(0.55, 1.0)
            d = rng.uniform(0.15, 0.45)
            direction = UP_RIGHT
        return cls(direction, float(a), float(b), float(c), float(d))

    @classmethod
    def identity(cls):
        return cls(UP_LEFT, 0.0, 0.0, 1.0, 0.0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# --- stretching / contracting ---------------------------------------------

def build_axis_map(s, lam, direction):
    """Cumulative line positions for a linear increment schedule.

    ``toward_start`` steps shrink from ``lam`` to ``1/lam`` across the axis,
    ``toward_end`` steps grow from 1 to ``lam``. Positions are rounded half up
    and bumped where needed so they stay strictly increasing.
    """
    if s < 2:
        raise ValueError(f"axis length must be >= 2, got {s}")
    if lam < 1:
        raise ValueError(f"stretch factor must be >= 1, got {lam}")
    t = np.arange(s, dtype=np.float64)
    if direction == TOWARD_START:
        k = ((1.0 / lam) - lam) / (s - 1) * t + lam
    elif direction == TOWARD_END:
        k = (lam - 1.0) / (s - 1) * t + 1.0
    else:
        raise ValueError(f"unknown stretch direction {direction!r}")
    a = 1.0 + np.concatenate(([0.0], np.cumsum(k[1:])))
    y = np.floor(a + 0.5).astype(np.int64)
    y[0] = 1
    for j in range(1, s):
        if y[j] <= y[j - 1]:
            y[j] = y[j - 1] + 1
    return ColumnMap(s, y)


def _stretch_columns(img, cmap, nearest):
    y = cmap.positions
    s = cmap.s
    pos = np.arange(1, cmap.extent + 1)
    j = np.searchsorted(y, pos, side="right") - 1
    jn = np.minimum(j + 1, s - 1)
    y0, y1 = y[j], y[jn]
    placed = pos == y0
    f0, f1 = img[:, j], img[:, jn]
    if nearest:
        take_left = (pos - y0) <= (y1 - pos)
        return np.where(placed | take_left, f0, f1)
    span = np.where(placed, 1, y1 - y0)
    blended = (f0 * (y1 - pos) + f1 * (pos - y0)) / span
    return np.where(placed, f0, blended)


def stretch_axis(img, cmap, axis="columns", nearest=False):
    """Re-position every column (or row) per ``cmap``, fill the gaps by
    distance-weighted blending of the two flanking lines, then contract back
    to the original extent.

    With ``nearest`` the gaps take the closer flanking line and the contraction
    is nearest-neighbour; the result is a binary mask.
    """
    arr = np.asarray(img, dtype=np.float64)
    if axis == "rows":
        arr = arr.T
    elif axis != "columns":
        raise ValueError(f"axis must be 'columns' or 'rows', got {axis!r}")
    h, w = arr.shape
    if cmap.s != w:
        raise ValueError(f"map covers {cmap.s} lines but the image has {w} along {axis}")
    canvas = _stretch_columns(arr, cmap, nearest)
    if nearest:
        out = resize_mask(canvas, h, w)
    else:
        out = resize(canvas, h, w, "bicubic")
    return out.T.copy() if axis == "rows" else out


def warp_sample(img, mask, draws):
    """Stretch/contract columns then rows; the mask follows the same maps."""
    check_pair(img, mask)
    h, w = np.shape(img)
    col_map = build_axis_map(w, draws.col_lambda, draws.col_direction)
    row_map = build_axis_map(h, draws.row_lambda, draws.row_direction)
    img = stretch_axis(img, col_map, "columns")
    img = stretch_axis(img, row_map, "rows")
    mask = stretch_axis(mask, col_map, "columns", nearest=True)
    mask = stretch_axis(mask, row_map, "rows", nearest=True)
    return img, binarize_mask(mask)


# --- tilt -----------------------------------------------------------------

def _twice_area(p, q, r):
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def tilt_homography(draws):
    """Projective map taking the unit square's top corners to (a, b), (c, d)
    while the bottom corners stay put. Coordinates: x right, y down."""
    src = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    dst = [(draws.a, draws.b), (draws.c, draws.d), (1.0, 1.0), (0.0, 1.0)]
    for i in range(4):
        p, q, r = dst[i], dst[(i + 1) % 4], dst[(i + 2) % 4]
        if abs(_twice_area(p, q, r)) < 1e-12:
            raise DegenerateHomographyError(f"target quad {dst} has collinear vertices")
    A = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        A[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        A[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        rhs[2 * i], rhs[2 * i + 1] = u, v
    try:
        h = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateHomographyError(str(exc)) from exc
    H = np.append(h, 1.0).reshape(3, 3)
    if abs(np.linalg.det(H)) <= 1e-12:
        raise DegenerateHomographyError("homography is singular")
    return H


def apply_homography(H, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    den = H[2, 0] * x + H[2, 1] * y + H[2, 2]
    return (H[0, 0] * x + H[0, 1] * y + H[0, 2]) / den, (H[1, 0] * x + H[1, 1] * y + H[1, 2]) / den


def tilt_sampling(shape, draws):
    """Inverse-map every destination pixel.

    Returns source row/column indices (nearest) and the void grid of pixels
    whose pre-image falls outside the source.
    """
    h, w = shape
    H = tilt_homography(draws)
    Hinv = np.linalg.inv(H)
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    u = cols / (w - 1) if w > 1 else np.zeros_like(cols)
    v = rows / (h - 1) if h > 1 else np.zeros_like(rows)
    den = Hinv[2, 0] * u + Hinv[2, 1] * v + Hinv[2, 2]
    su, sv = apply_homography(Hinv, u, v)
    inside = (
        (den > 0)
        & (su >= -_INSIDE_EPS) & (su <= 1 + _INSIDE_EPS)
        & (sv >= -_INSIDE_EPS) & (sv <= 1 + _INSIDE_EPS)
    )
    src_c = np.clip(np.floor(np.nan_to_num(su) * (w - 1) + 0.5), 0, w - 1).astype(np.int64)
    src_r = np.clip(np.floor(np.nan_to_num(sv) * (h - 1) + 0.5), 0, h - 1).astype(np.int64)
    return src_r, src_c, ~inside


def extend_voids(img, void):
    """Push the nearest valid value along each column and each row into the
    void pixels; average where both directions reach a pixel.

    Pixels reached by neither (e.g. a corner whose row and column are entirely
    void) are resolved by repeating the passes with the filled pixels counted
    as valid.
    """
    img = np.asarray(img, dtype=np.float64)
    void = np.asarray(void, dtype=bool)
    if void.all():
        raise ValueError("cannot fill an image with no valid pixels")
    out = img.copy()
    valid = ~void
    while not valid.all():
        col_vals, col_hit = kernels.extend_rows(out.T, valid.T)
        col_vals, col_hit = col_vals.T, col_hit.T
        row_vals, row_hit = kernels.extend_rows(out, valid)
        todo = ~valid
        both = todo & col_hit & row_hit
        only_col = todo & col_hit & ~row_hit
        only_row = todo & row_hit & ~col_hit
        out[both] = (col_vals[both] + row_vals[both]) / 2.0
        out[only_col] = col_vals[only_col]
        out[only_row] = row_vals[only_row]
        valid = valid | both | only_col | only_row
    return out


def fill_voids(img, void):
    """Fill void pixels by edge extension, then smooth only the filled area."""
    void = np.asarray(void, dtype=bool)
    if void.all():
        raise ValueError("cannot fill an image with no valid pixels")
    if not void.any():
        return np.asarray(img, dtype=np.float64).copy()
    filled = extend_voids(img, void)
    smooth = convolve(filled, gaussian_kernel(3, 2.0), padding="edge")
    return np.where(void, smooth, filled)


def apply_tilt(img, mask, draws):
    check_pair(img, mask)
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask)
    src_r, src_c, void = tilt_sampling(img.shape, draws)
    out_img = img[src_r, src_c]
    out_mask = mask[src_r, src_c].astype(np.uint8)
    out_mask[void] = 0
    if void.any():
        out_img = fill_voids(out_img, void)
    return np.clip(out_img, 0.0, 255.0), binarize_mask(out_mask)


def tilt_mask(mask, draws):
    """Mask-only tilt; identical to the mask channel of :func:`apply_tilt`."""
    mask = np.asarray(mask)
    src_r, src_c, void = tilt_sampling(mask.shape, draws)
    out = mask[src_r, src_c].astype(np.uint8)
    out[void] = 0
    return binarize_mask(out)


def warp_mask(mask, draws):
    """Mask-only warp; identical to the mask channel of :func:`warp_sample`."""
    h, w = np.shape(mask)
    mask = stretch_axis(mask, build_axis_map(w, draws.col_lambda, draws.col_direction), "columns", nearest=True)
    mask = stretch_axis(mask, build_axis_map(h, draws.row_lambda, draws.row_direction), "rows", nearest=True)
    return binarize_mask(mask)
