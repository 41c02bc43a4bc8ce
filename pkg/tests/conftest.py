import sys

import numpy as np
import pytest

from ofx import kernels


def disk_pair(h=120, w=160, cy=None, cx=None, r=None, inside=70.0, outside=170.0, noise=0.0, seed=0):
    """Synthetic eye: dark disk on a brighter background, plus its mask."""
    cy = (h - 1) / 2 if cy is None else cy
    cx = (w - 1) / 2 if cx is None else cx
    r = min(h, w) / 4 if r is None else r
    yy, xx = np.mgrid[:h, :w]
    mask = ((yy - cy) ** 2 + (xx - cx) ** 2 < r * r).astype(np.uint8)
    img = np.where(mask, inside, outside).astype(np.float64)
    if noise:
        img = img + np.random.default_rng(seed).normal(0, noise, (h, w))
    return np.clip(img, 0, 255), mask


@pytest.fixture
def disk():
    return disk_pair(noise=8.0, seed=3)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    return kernels.BACKENDS[request.param]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
