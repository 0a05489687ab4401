"""Hot inner loops, each in two flavours.

Every kernel exists as a numba ``@njit`` loop (``*_jit``) and as a
vectorised numpy routine (``*_np``).  The public name picks one at import:
the jitted loop when numba is importable and ``TINYTARGET_DISABLE_JIT`` is
unset (or ``0``), otherwise the numpy path.  Both paths are always importable
so the test-suite and ``benchmarks/bench_kernels.py`` can compare them.
"""

from __future__ import annotations

import os

import numpy as np
from scipy import ndimage

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


def _jit_requested() -> bool:
    flag = os.environ.get("TINYTARGET_DISABLE_JIT", "").strip().lower()
    return flag in ("", "0", "false", "no")


USE_JIT = HAVE_NUMBA and _jit_requested()
BACKEND = "numba" if USE_JIT else "numpy"


# ---------------------------------------------------------------------------
# pairwise box similarity, boxes as (cx, cy, w, h) rows
# ---------------------------------------------------------------------------


@njit(cache=True)
def pairwise_iou_jit(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        ax0 = a[i, 0] - 0.5 * a[i, 2]
        ax1 = a[i, 0] + 0.5 * a[i, 2]
        ay0 = a[i, 1] - 0.5 * a[i, 3]
        ay1 = a[i, 1] + 0.5 * a[i, 3]
        area_a = (ax1 - ax0) * (ay1 - ay0)
        for j in range(m):
            bx0 = b[j, 0] - 0.5 * b[j, 2]
            bx1 = b[j, 0] + 0.5 * b[j, 2]
            by0 = b[j, 1] - 0.5 * b[j, 3]
            by1 = b[j, 1] + 0.5 * b[j, 3]
            iw = min(ax1, bx1) - max(ax0, bx0)
            ih = min(ay1, by1) - max(ay0, by0)
            if iw <= 0.0 or ih <= 0.0:
                continue
            inter = iw * ih
            out[i, j] = inter / (area_a + (bx1 - bx0) * (by1 - by0) - inter)
    return out


def pairwise_iou_np(a, b):
    ca = _corners(np.asarray(a, dtype=np.float64))[:, None, :]
    cb = _corners(np.asarray(b, dtype=np.float64))[None, :, :]
    iw = np.minimum(ca[..., 2], cb[..., 2]) - np.maximum(ca[..., 0], cb[..., 0])
    ih = np.minimum(ca[..., 3], cb[..., 3]) - np.maximum(ca[..., 1], cb[..., 1])
    inter = np.where((iw > 0.0) & (ih > 0.0), iw * ih, 0.0)
    area_a = (ca[..., 2] - ca[..., 0]) * (ca[..., 3] - ca[..., 1])
    area_b = (cb[..., 2] - cb[..., 0]) * (cb[..., 3] - cb[..., 1])
    return inter / (area_a + area_b - inter)


def _corners(boxes):
    half_w = 0.5 * boxes[:, 2]
    half_h = 0.5 * boxes[:, 3]
    return np.stack(
        [boxes[:, 0] - half_w, boxes[:, 1] - half_h, boxes[:, 0] + half_w, boxes[:, 1] + half_h],
        axis=1,
    )


@njit(cache=True)
def pairwise_w2_jit(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dw = 0.5 * (a[i, 2] - b[j, 2])
            dh = 0.5 * (a[i, 3] - b[j, 3])
            out[i, j] = dx * dx + dy * dy + dw * dw + dh * dh
    return out


def pairwise_w2_np(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.array([1.0, 1.0, 0.5, 0.5])
    d = (a * scale)[:, None, :] - (b * scale)[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


# ---------------------------------------------------------------------------
# 8-connected component labelling
# ---------------------------------------------------------------------------


@njit(cache=True)
def label8_jit(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    queue = np.empty(h * w, dtype=np.int64)
    n = 0
    for r0 in range(h):
        for c0 in range(w):
            if not mask[r0, c0] or labels[r0, c0] != 0:
                continue
            n += 1
            labels[r0, c0] = n
            head = 0
            tail = 1
            queue[0] = r0 * w + c0
            while head < tail:
                idx = queue[head]
                head += 1
                r = idx // w
                c = idx - r * w
                for dr in range(-1, 2):
                    rr = r + dr
                    if rr < 0 or rr >= h:
                        continue
                    for dc in range(-1, 2):
                        cc = c + dc
                        if cc < 0 or cc >= w:
                            continue
                        if mask[rr, cc] and labels[rr, cc] == 0:
                            labels[rr, cc] = n
                            queue[tail] = rr * w + cc
                            tail += 1
    return labels, n


_EIGHT = np.ones((3, 3), dtype=bool)


def label8_np(mask):
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    return labels.astype(np.int32), int(n)


# ---------------------------------------------------------------------------
# 3x3 local statistics with edge replication
# ---------------------------------------------------------------------------


@njit(cache=True)
def local_stats3_jit(img):
    """Return (3x3 mean, 3x3 max, mean of the 8 neighbours)."""
    h, w = img.shape
    mean = np.empty((h, w))
    mx = np.empty((h, w))
    ring = np.empty((h, w))
    for r in range(h):
        for c in range(w):
            s = 0.0
            m = -np.inf
            for dr in range(-1, 2):
                rr = min(max(r + dr, 0), h - 1)
                for dc in range(-1, 2):
                    cc = min(max(c + dc, 0), w - 1)
                    v = img[rr, cc]
                    s += v
                    if v > m:
                        m = v
            mean[r, c] = s / 9.0
            mx[r, c] = m
            ring[r, c] = (s - img[r, c]) / 8.0
    return mean, mx, ring


def local_stats3_np(img):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    pad = np.pad(img, 1, mode="edge")
    shifts = np.stack([pad[dr : dr + h, dc : dc + w] for dr in range(3) for dc in range(3)])
    # same summation order as the loop so both paths agree bit-for-bit on sums
    s = np.zeros((h, w))
    for k in range(9):
        s = s + shifts[k]
    return s / 9.0, shifts.max(axis=0), (s - img) / 8.0


# ---------------------------------------------------------------------------
# deformable sampling + level aggregation (spatial attention core)
# ---------------------------------------------------------------------------


@njit(cache=True)
def deform_aggregate_jit(feat, pos_x, pos_y, modulation, weights):
    """feat (L,H,W,C); pos_* and modulation (H,W,K); weights (Lo,L,K)."""
    n_levels, h, w, n_ch = feat.shape
    k_pts = pos_x.shape[2]
    n_out = weights.shape[0]
    out = np.zeros((n_out, h, w, n_ch))
    sample = np.empty(n_ch)
    for y in range(h):
        for x in range(w):
            for k in range(k_pts):
                px = min(max(pos_x[y, x, k], 0.0), w - 1.0)
                py = min(max(pos_y[y, x, k], 0.0), h - 1.0)
                x0 = int(np.floor(px))
                y0 = int(np.floor(py))
                x1 = min(x0 + 1, w - 1)
                y1 = min(y0 + 1, h - 1)
                fx = px - x0
                fy = py - y0
                w00 = (1.0 - fx) * (1.0 - fy)
                w01 = fx * (1.0 - fy)
                w10 = (1.0 - fx) * fy
                w11 = fx * fy
                m = modulation[y, x, k]
                for li in range(n_levels):
                    for c in range(n_ch):
                        sample[c] = (
                            w00 * feat[li, y0, x0, c]
                            + w01 * feat[li, y0, x1, c]
                            + w10 * feat[li, y1, x0, c]
                            + w11 * feat[li, y1, x1, c]
                        )
                    for lo in range(n_out):
                        coef = weights[lo, li, k] * m
                        if coef == 0.0:
                            continue
                        for c in range(n_ch):
                            out[lo, y, x, c] += coef * sample[c]
    return out / n_levels


def bilinear_gather_np(feat, pos_x, pos_y):
    """Sample every level of feat (L,H,W,C) at clamped positions (H,W,K).

    Returns an array of shape (L,H,W,K,C).
    """
    _, h, w, _ = feat.shape
    px = np.clip(pos_x, 0.0, w - 1.0)
    py = np.clip(pos_y, 0.0, h - 1.0)
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (px - x0)[None, ..., None]
    fy = (py - y0)[None, ..., None]
    return (
        (1.0 - fx) * (1.0 - fy) * feat[:, y0, x0, :]
        + fx * (1.0 - fy) * feat[:, y0, x1, :]
        + (1.0 - fx) * fy * feat[:, y1, x0, :]
        + fx * fy * feat[:, y1, x1, :]
    )


def deform_aggregate_np(feat, pos_x, pos_y, modulation, weights):
    samples = bilinear_gather_np(feat, pos_x, pos_y)
    samples = samples * modulation[None, ..., None]
    return np.einsum("oik,ihwkc->ohwc", weights, samples) / feat.shape[0]


if USE_JIT:
    pairwise_iou = pairwise_iou_jit
    pairwise_w2 = pairwise_w2_jit
    label8 = label8_jit
    local_stats3 = local_stats3_jit
    deform_aggregate = deform_aggregate_jit
else:
    pairwise_iou = pairwise_iou_np
    pairwise_w2 = pairwise_w2_np
    label8 = label8_np
    local_stats3 = local_stats3_np
    deform_aggregate = deform_aggregate_np
