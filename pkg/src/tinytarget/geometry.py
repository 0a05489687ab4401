"""Box algebra for tiny targets: IoU, Gaussian box modelling and NWD.

Boxes are centre-form ``(cx, cy, w, h)`` in pixels.  A box is modelled as a
2D Gaussian with mean at its centre and diagonal covariance
``diag(w**2 / 4, h**2 / 4)``; for two such Gaussians the squared
2-Wasserstein distance collapses to a plain squared Euclidean distance between
``[cx, cy, w/2, h/2]`` vectors, and the normalised similarity is
``exp(-sqrt(W2^2) / c)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

DEFAULT_NWD_C = 11.0


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in centre form, pixel units."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("cx", "cy", "w", "h"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"box field {name} must be finite, got {value!r}")
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width and height must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "BBox":
        return cls(0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0)

    def corners(self) -> tuple[float, float, float, float]:
        """Return ``(x0, y0, x1, y1)``."""
        return (
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.cx + dx, self.cy + dy, self.w, self.h)


@dataclass(frozen=True)
class Gaussian2D:
    mean: tuple[float, float]
    cov_diag: tuple[float, float]

    def __post_init__(self) -> None:
        if not (self.cov_diag[0] > 0 and self.cov_diag[1] > 0):
            raise ValueError(f"covariance diagonal must be positive, got {self.cov_diag}")

    @property
    def cov(self) -> np.ndarray:
        return np.diag(np.asarray(self.cov_diag, dtype=np.float64))


@dataclass(frozen=True)
class NwdConfig:
    """``c`` is the dataset-dependent normaliser, same unit as pixel distance."""

    c: float = DEFAULT_NWD_C

    def __post_init__(self) -> None:
        if not (math.isfinite(self.c) and self.c > 0):
            raise ValueError(f"NWD constant c must be positive, got {self.c!r}")


def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    """Stack boxes into a contiguous ``(n, 4)`` float64 array."""
    rows = [b.as_array() for b in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.ascontiguousarray(np.stack(rows))


def iou(a: BBox, b: BBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    # areas from the same corners so that iou(a, a) is exactly 1
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def box_to_gaussian(b: BBox) -> Gaussian2D:
    return Gaussian2D(mean=(b.cx, b.cy), cov_diag=(b.w * b.w / 4.0, b.h * b.h / 4.0))


def wasserstein2_sq(a: BBox, b: BBox) -> float:
    """Squared 2-Wasserstein distance between the Gaussians of two boxes."""
    dx = a.cx - b.cx
    dy = a.cy - b.cy
    dw = 0.5 * a.w - 0.5 * b.w
    dh = 0.5 * a.h - 0.5 * b.h
    return dx * dx + dy * dy + dw * dw + dh * dh


def nwd(a: BBox, b: BBox, cfg: NwdConfig = NwdConfig()) -> float:
    return math.exp(-math.sqrt(wasserstein2_sq(a, b)) / cfg.c)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(n, 4)`` and ``(m, 4)`` centre-form arrays."""
    return _kernels.pairwise_iou(_as_rows(a), _as_rows(b))


def nwd_matrix(a: np.ndarray, b: np.ndarray, cfg: NwdConfig = NwdConfig()) -> np.ndarray:
    w2 = _kernels.pairwise_w2(_as_rows(a), _as_rows(b))
    return np.exp(-np.sqrt(w2) / cfg.c)


def similarity_matrix(
    a: np.ndarray, b: np.ndarray, criterion: str, cfg: NwdConfig = NwdConfig()
) -> np.ndarray:
    if criterion == "iou":
        return iou_matrix(a, b)
    if criterion == "nwd":
        return nwd_matrix(a, b, cfg)
    raise ValueError(f"unknown criterion {criterion!r}; expected 'iou' or 'nwd'")


def _as_rows(x) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"expected an (n, 4) box array, got shape {arr.shape}")
    return arr


def sensitivity_scan(
    box_size: float, shifts: Sequence[float], cfg: NwdConfig = NwdConfig()
) -> list[tuple[float, float, float]]:
    """IoU and NWD of a square box against its copy shifted by ``(d, d)``.

    Returns one ``(shift, iou, nwd)`` row per entry of ``shifts``.
    """
    if not box_size > 0:
        raise ValueError(f"box_size must be positive, got {box_size!r}")
    ref = BBox(0.0, 0.0, float(box_size), float(box_size))
    rows = []
    for d in shifts:
        d = float(d)
        if not math.isfinite(d):
            raise ValueError(f"shift must be finite, got {d!r}")
        moved = ref.translated(d, d)
        rows.append((d, iou(ref, moved), nwd(ref, moved, cfg)))
    return rows
