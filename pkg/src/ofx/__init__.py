"""Synthesis of off-axis, low-quality iris training samples and a compact
fully convolutional network for iris segmentation."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
