"""Annotation files, mask-to-box conversion, PGM I/O and synthetic IR scenes.

Pixel convention: pixel ``(r, c)`` covers ``[c, c + 1] x [r, r + 1]``, so a
single lit pixel yields a 1x1 box centred at ``(c + 0.5, r + 0.5)``.

Annotation files hold one image each (``<image_id>.txt``), one box per line
as ``cx cy w h`` normalised to the image size, optionally followed by a
confidence score for detection files.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import AnnotationParseError, GenerationError
from .geometry import BBox


@dataclass(frozen=True)
class Scene:
    pixels: np.ndarray  # (H, W) in [0, 1]
    targets: tuple[BBox, ...]
    seed: int
    mask: np.ndarray  # (H, W) bool, target support

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def positive_fraction(self) -> float:
        return float(self.mask.mean())


@dataclass(frozen=True)
class AnnotationRecord:
    """Boxes for one image, normalised to [0, 1]; ``scores`` only for detections."""

    image_id: str
    boxes: tuple[BBox, ...]
    scores: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))
        for b in self.boxes:
            if not (0.0 <= b.cx <= 1.0 and 0.0 <= b.cy <= 1.0 and b.w <= 1.0 and b.h <= 1.0):
                raise ValueError(f"normalised box out of [0, 1]: {b}")
        if self.scores is not None and not self.boxes:
            # an empty file cannot say whether it held detections
            object.__setattr__(self, "scores", None)
        if self.scores is not None:
            object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
            if len(self.scores) != len(self.boxes):
                raise ValueError("scores and boxes differ in length")


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


def mask_to_boxes(mask) -> list[BBox]:
    """One tight box per 8-connected component, ordered by (top, left)."""
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    labels, n = _kernels.label8(mask)
    if n == 0:
        return []
    spans = []
    for sl in ndimage.find_objects(labels):
        rows, cols = sl
        spans.append((rows.start, cols.start, rows.stop, cols.stop))
    spans.sort()
    return [BBox.from_corners(float(c0), float(r0), float(c1), float(r1)) for r0, c0, r1, c1 in spans]


def rasterize_boxes(boxes: Sequence[BBox], shape: tuple[int, int]) -> np.ndarray:
    """Mark every pixel whose square overlaps a box interior."""
    out = np.zeros(shape, dtype=bool)
    h, w = shape
    for b in boxes:
        x0, y0, x1, y1 = b.corners()
        c0, r0 = max(int(math.floor(x0)), 0), max(int(math.floor(y0)), 0)
        c1, r1 = min(int(math.ceil(x1)), w), min(int(math.ceil(y1)), h)
        out[r0:r1, c0:c1] = True
    return out


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------


def _disc_offsets(diameter: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column offsets, from the box corner, of the pixels in a digital disc.

    Pixel centres within ``(diameter - 1) / 2`` of the disc centre are kept,
    with half a square pixel of slack so the 2-pixel disc is the full 2x2
    block.  Odd diameters are centred on a pixel centre, even ones on a pixel
    corner; either way the tight box is ``diameter`` pixels wide.  A 5-pixel
    disc has 13 pixels, so three of them stay under 1% of a 64x64 image.
    """
    centre = diameter / 2.0
    rr, cc = np.mgrid[0:diameter, 0:diameter]
    d2 = (rr + 0.5 - centre) ** 2 + (cc + 0.5 - centre) ** 2
    keep = d2 <= ((diameter - 1) / 2.0) ** 2 + 0.5
    return rr[keep], cc[keep]


def generate_scene(
    h: int = 64,
    w: int = 64,
    n_targets: int = 3,
    target_size_range: tuple[int, int] = (2, 5),
    noise_level: float = 0.08,
    seed: int = 0,
    *,
    contrast_range: tuple[float, float] = (0.12, 0.35),
    n_distractors: int = 3,
    max_attempts: int = 200,
) -> Scene:
    """Deterministic infrared-like scene with dim point targets.

    Background: a smooth gradient, low-pass clutter scaled by ``noise_level``,
    a little white noise and a few broad bright distractor patches.  Each
    target is a peaked blob on a digital disc whose diameter is drawn from
    ``target_size_range`` (inclusive).  Targets never touch each other and
    are listed by (top, left).
    """
    lo, hi = (int(v) for v in target_size_range)
    if h < 8 or w < 8:
        raise ValueError(f"scene must be at least 8x8, got {h}x{w}")
    if n_targets < 0:
        raise ValueError("n_targets must be >= 0")
    if not 1 <= lo <= hi <= min(h, w) / 4:
        raise ValueError(f"target sizes must satisfy 1 <= min <= max <= {min(h, w) / 4:g}")
    if noise_level < 0:
        raise ValueError("noise_level must be >= 0")

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    angle = rng.uniform(0.0, 2.0 * np.pi)
    ramp = (np.cos(angle) * (xx / w - 0.5) + np.sin(angle) * (yy / h - 0.5)) * rng.uniform(0.05, 0.2)
    clutter = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=2.0, mode="reflect")
    clutter /= clutter.std() or 1.0
    background = 0.35 + ramp + noise_level * clutter + 0.3 * noise_level * rng.standard_normal((h, w))
    for _ in range(n_distractors):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        sigma = rng.uniform(2.5, 5.0)
        background += rng.uniform(0.1, 0.3) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))

    pixels = background
    mask = np.zeros((h, w), dtype=bool)
    occupied = np.zeros((h, w), dtype=bool)
    targets: list[BBox] = []
    attempts = 0
    while len(targets) < n_targets:
        attempts += 1
        if attempts > max_attempts * max(n_targets, 1):
            raise GenerationError(f"could not place {n_targets} targets in a {h}x{w} scene")
        d = int(rng.integers(lo, hi + 1))
        top = int(rng.integers(0, h - d + 1))
        left = int(rng.integers(0, w - d + 1))
        # one-pixel guard band keeps targets from merging under 8-connectivity
        if occupied[max(top - 1, 0) : top + d + 1, max(left - 1, 0) : left + d + 1].any():
            continue
        dr, dc = _disc_offsets(d)
        centre = d / 2.0
        dist2 = (dr + 0.5 - centre) ** 2 + (dc + 0.5 - centre) ** 2
        sigma = max(d / 3.0, 0.5)
        amplitude = rng.uniform(*contrast_range)
        pixels[top + dr, left + dc] += amplitude * np.exp(-dist2 / (2 * sigma**2))
        mask[top + dr, left + dc] = True
        occupied[top : top + d, left : left + d] = True
        targets.append(BBox.from_corners(float(left), float(top), float(left + d), float(top + d)))

    pixels = np.clip(pixels, 0.0, 1.0)
    targets.sort(key=lambda b: (b.cy - 0.5 * b.h, b.cx - 0.5 * b.w))
    return Scene(pixels=pixels, targets=tuple(targets), seed=int(seed), mask=mask)


def generate_scenes(count: int, seed: int, **kwargs) -> list[Scene]:
    """``count`` scenes with per-scene seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [generate_scene(seed=int(s), **kwargs) for s in seeds]


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def read_pgm(path) -> np.ndarray:
    """Read a P2 or P5 PGM; returns an integer array scaled to 0..255."""
    raw = Path(path).read_bytes()
    pos = 0
    header = []
    while len(header) < 4:
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        header.append(m.group(2))
        pos = m.end()
    magic, width, height, maxval = header[0], int(header[1]), int(header[2]), int(header[3])
    if magic not in (b"P2", b"P5") or not 0 < maxval < 65536:
        raise ValueError(f"{path}: not a P2/P5 PGM")
    if magic == b"P5":
        pos += 1  # single whitespace byte before the raster
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        count = width * height
        data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    else:
        data = np.array(raw[pos:].split(), dtype=np.int64)
        if data.size < width * height:
            raise ValueError(f"{path}: truncated P2 raster")
        data = data[: width * height]
    img = data.reshape(height, width).astype(np.int64)
    if maxval != 255:
        img = (img * 255 + maxval // 2) // maxval
    return img


def write_pgm(path, image, binary: bool = True) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    img = np.clip(img, 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(Path(path), "wb") as fh:
        if binary:
            fh.write(f"P5\n{w} {h}\n255\n".encode())
            fh.write(img.tobytes())
        else:
            fh.write(f"P2\n{w} {h}\n255\n".encode())
            for row in img:
                fh.write((" ".join(str(int(v)) for v in row) + "\n").encode())


def read_mask_pgm(path) -> np.ndarray:
    return read_pgm(path) >= 128


def scene_to_uint8(scene: Scene) -> np.ndarray:
    return np.round(scene.pixels * 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------


def normalize_boxes(boxes: Sequence[BBox], width: int, height: int) -> tuple[BBox, ...]:
    return tuple(BBox(b.cx / width, b.cy / height, b.w / width, b.h / height) for b in boxes)


def denormalize_boxes(boxes: Sequence[BBox], width: float, height: float) -> tuple[BBox, ...]:
    return tuple(BBox(b.cx * width, b.cy * height, b.w * width, b.h * height) for b in boxes)


def format_record(record: AnnotationRecord) -> str:
    lines = []
    for i, b in enumerate(record.boxes):
        fields = [f"{b.cx:.6f}", f"{b.cy:.6f}", f"{b.w:.6f}", f"{b.h:.6f}"]
        if record.scores is not None:
            fields.append(f"{record.scores[i]:.6f}")
        lines.append(" ".join(fields))
    return "".join(line + "\n" for line in lines)


def write_annotations(records: Sequence[AnnotationRecord], path) -> list[Path]:
    """Write one ``<image_id>.txt`` per record into directory ``path``."""
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for record in records:
        target = out_dir / f"{record.image_id}.txt"
        target.write_text(format_record(record))
        written.append(target)
    return written


def parse_annotation_file(path) -> AnnotationRecord:
    path = Path(path)
    boxes: list[BBox] = []
    scores: list[float] = []
    n_cols = None
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) not in (4, 5):
            raise AnnotationParseError(path, line_no, f"expected 4 or 5 fields, got {len(parts)}")
        if n_cols is not None and len(parts) != n_cols:
            raise AnnotationParseError(path, line_no, "inconsistent number of fields")
        n_cols = len(parts)
        try:
            values = [float(v) for v in parts]
        except ValueError:
            raise AnnotationParseError(path, line_no, f"non-numeric field in {line!r}") from None
        cx, cy, w, h = values[:4]
        if not all(math.isfinite(v) for v in values):
            raise AnnotationParseError(path, line_no, "non-finite value")
        if not (w > 0 and h > 0):
            raise AnnotationParseError(path, line_no, f"width and height must be positive, got {w}, {h}")
        if not all(0.0 <= v <= 1.0 for v in (cx, cy, w, h)):
            raise AnnotationParseError(path, line_no, "normalised coordinates must lie in [0, 1]")
        boxes.append(BBox(cx, cy, w, h))
        if n_cols == 5:
            if not 0.0 <= values[4] <= 1.0:
                raise AnnotationParseError(path, line_no, "confidence must lie in [0, 1]")
            scores.append(values[4])
    return AnnotationRecord(path.stem, tuple(boxes), tuple(scores) if n_cols == 5 else None)


def read_annotations(path) -> list[AnnotationRecord]:
    """Read a single annotation file or every ``*.txt`` in a directory (sorted by id)."""
    path = Path(path)
    if path.is_dir():
        return [parse_annotation_file(p) for p in sorted(path.glob("*.txt"))]
    return [parse_annotation_file(path)]
