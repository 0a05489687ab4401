"""Numerics for infrared small-target detection.

Threshold focal losses with adaptive exponents, Gaussian Wasserstein box
similarity, a toy dynamic head, target-level evaluation and two desk-scale
training experiments.  Hot loops live in :mod:`tinytarget._kernels`
(numba, or numpy when ``TINYTARGET_DISABLE_JIT=1``).
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .geometry import BBox, Gaussian2D, NwdConfig, iou, nwd, wasserstein2_sq
from .losses import LossConfig, SmoothingState, atfl, bce, focal, tfl

__all__ = [
    "BACKEND",
    "BBox",
    "Gaussian2D",
    "LossConfig",
    "NwdConfig",
    "SmoothingState",
    "atfl",
    "bce",
    "focal",
    "iou",
    "nwd",
    "tfl",
    "wasserstein2_sq",
]
