"""Capture-quality degradations: regional contrast, motion blur, shadowing.

None of these touch the segmentation mask; the iris does not move.
"""

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .imaging import check_pair, convolve

TANH_RANGE = math.tanh(1.5)
SHADOW_CEILING = 1.1

OUTSIDE = "outside_iris"
INSIDE = "inside_iris"


@dataclass(frozen=True)
class QualityDraws:
    contrast_offset_out: float
    contrast_offset_in: float
    blur_length: float
    blur_angle: float
    apply_shadow: bool = False
    shadow_sign: Optional[int] = None
    shadow_shift: Optional[float] = None
    shadow_lift: Optional[float] = None

    @classmethod
    def sample(cls, rng):
        out = float(rng.uniform(-0.2, 0.3))
        inside = float(rng.uniform(0.0, 0.2))
        length = float(rng.uniform(3.0, 7.0))
        angle = float(rng.uniform(-math.pi, math.pi))
        if rng.random() < 0.5:
            sign = 1 if rng.random() < 0.5 else -1
            shift = float(rng.uniform(-0.3, 0.3))
            lift = float(rng.uniform(0.0, 0.1))
            return cls(out, inside, length, angle, True, sign, shift, lift)
        return cls(out, inside, length, angle)

    def to_dict(self):
        d = asdict(self)
        if not self.apply_shadow:
            for key in ("shadow_sign", "shadow_shift", "shadow_lift"):
                d.pop(key)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ToneCurve:
    region: str
    offset: float = 0.0


def tone_map(x, curve):
    """Apply a tanh histogram-mapping curve to intensities in [0, 255].

    Works elementwise on scalars or arrays. The tanh term is normalised by its
    analytic range (+-tanh(1.5)) rather than per image, so the offset moves the
    overall brightness; the result is clamped.
    """
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 255.0)
    if curve.region == OUTSIDE:
        v = np.tanh(3.0 * (x / 255.0 - 0.5)) + curve.offset
    elif curve.region == INSIDE:
        v = np.tanh(3.0 * (x / 255.0 - 0.45)) - curve.offset
    else:
        raise ValueError(f"unknown tone curve region {curve.region!r}")
    norm = np.clip((v + TANH_RANGE) / (2.0 * TANH_RANGE), 0.0, 1.0)
    out = norm * 255.0
    return float(out) if out.ndim == 0 else out


def apply_contrast(img, mask, draws):
    check_pair(img, mask)
    inside = np.asarray(mask).astype(bool)
    out = tone_map(img, ToneCurve(OUTSIDE, draws.contrast_offset_out))
    if inside.any():
        mapped_in = tone_map(img, ToneCurve(INSIDE, draws.contrast_offset_in))
        out = np.where(inside, mapped_in, out)
    return out


def _round_half_up(v):
    return np.floor(v + 0.5).astype(np.int64)


def motion_blur_kernel(length, angle):
    """Normalised line kernel for linear camera motion.

    The segment covers ``round(length)`` pixels along its dominant axis and is
    centred in a square of side ``2*ceil(L/2) + 1``. Angle 0 is horizontal and
    positive angles rotate towards increasing row index.
    """
    if length < 1:
        raise ValueError(f"blur length must be >= 1, got {length}")
    n = int(_round_half_up(np.float64(length)))
    size = 2 * math.ceil(n / 2) + 1
    c = size // 2
    dx, dy = math.cos(angle), math.sin(angle)
    dominant = max(abs(dx), abs(dy))
    dx, dy = dx / dominant, dy / dominant
    half = (n - 1) / 2.0
    # 0.5 px steps along the dominant axis; duplicate cells collapse
    t = np.linspace(-half, half, 2 * (n - 1) + 1)
    cols = _round_half_up(c + t * dx)
    rows = _round_half_up(c + t * dy)
    k = np.zeros((size, size), dtype=np.float64)
    k[rows, cols] = 1.0
    return k / k.sum()


def apply_motion_blur(img, draws):
    k = motion_blur_kernel(draws.blur_length, draws.blur_angle)
    return np.clip(convolve(img, k, padding="edge"), 0.0, 255.0)


def shadow_profile(width, draws):
    """Per-column intensity coefficients of a directional shadow ramp."""
    if width < 2:
        raise ValueError(f"shadow profile needs width >= 2, got {width}")
    x = np.arange(width, dtype=np.float64) / (width - 1)
    raw = np.tanh(2.0 * draws.shadow_sign * (x - 0.5 + draws.shadow_shift))
    lo, hi = raw.min(), raw.max()
    norm = (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)
    return np.clip(norm + draws.shadow_lift, 0.0, SHADOW_CEILING)


def apply_shadow(img, draws):
    img = np.asarray(img, dtype=np.float64)
    coeff = shadow_profile(img.shape[1], draws)
    return np.clip(img * coeff[None, :], 0.0, 255.0)
