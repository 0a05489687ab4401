"""Toy dynamic head: scale-, spatial- and task-aware attention on (L, S, C) tensors.

A block applies, in order:

* scale attention: each pyramid level is multiplied by
  ``hard_sigmoid(weight[l] * mean(F[l]) + bias[l])``;
* spatial attention: ``K`` deformable bilinear samples around every location,
  modulated by a predicted mask scalar, mixed across levels with
  ``weights[l_out, l_in, k]`` and averaged over the ``L`` input levels;
* task attention: per-channel ``max(a1 * F + b1, a2 * F + b2)`` with the four
  coefficients produced by a small hyperfunction over the pooled channels.

Blocks chain without residuals.  Parameters are plain numpy arrays and are
never mutated after construction.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ShapeError

DEFAULT_BLOCKS = 4
DEFAULT_K = 9
ALPHA_RANGE = 1.0
BETA_RANGE = 0.5


@dataclass(frozen=True)
class FeatureTensor:
    data: np.ndarray  # (L, S, C), S = height * width
    height: int
    width: int

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 3:
            raise ShapeError(f"feature tensor must be 3-D (L, S, C), got shape {data.shape}")
        levels, s, c = data.shape
        if levels < 1 or c < 1 or self.height < 1 or self.width < 1:
            raise ShapeError(f"empty feature tensor: shape {data.shape}")
        if s != self.height * self.width:
            raise ShapeError(f"S={s} does not equal height*width={self.height * self.width}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature tensor contains non-finite entries")

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> "FeatureTensor":
        """Build from an ``(L, H, W, C)`` array."""
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim != 4:
            raise ShapeError(f"expected (L, H, W, C), got shape {grid.shape}")
        levels, h, w, c = grid.shape
        return cls(grid.reshape(levels, h * w, c), h, w)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def levels(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def grid(self) -> np.ndarray:
        return self.data.reshape(self.levels, self.height, self.width, self.channels)

    def with_data(self, data: np.ndarray) -> "FeatureTensor":
        return FeatureTensor(data, self.height, self.width)


@dataclass(frozen=True)
class DynHeadParams:
    scale_weight: np.ndarray  # (L,)
    scale_bias: np.ndarray  # (L,)
    base_offsets: np.ndarray  # (K, 2) as (dx, dy)
    offset_weight: np.ndarray  # (C, 3K): [dx_0..dx_K-1, dy_0.., mask_0..]
    offset_bias: np.ndarray  # (3K,)
    level_weights: np.ndarray  # (L_out, L_in, K)
    hyper_w1: np.ndarray  # (C, hidden)
    hyper_b1: np.ndarray  # (hidden,)
    hyper_w2: np.ndarray  # (hidden, 4C)
    hyper_b2: np.ndarray  # (4C,)
    offset_level: int = 0

    def __post_init__(self) -> None:
        for f in fields(self):
            if f.name == "offset_level":
                continue
            arr = np.ascontiguousarray(getattr(self, f.name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, f.name, arr)
        levels = self.scale_weight.shape[0]
        k = self.base_offsets.shape[0]
        c = self.offset_weight.shape[0]
        hidden = self.hyper_w1.shape[1] if self.hyper_w1.ndim == 2 else -1
        expected = {
            "scale_weight": (levels,),
            "scale_bias": (levels,),
            "base_offsets": (k, 2),
            "offset_weight": (c, 3 * k),
            "offset_bias": (3 * k,),
            "level_weights": (levels, levels, k),
            "hyper_w1": (c, hidden),
            "hyper_b1": (hidden,),
            "hyper_w2": (hidden, 4 * c),
            "hyper_b2": (4 * c,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if k < 1 or levels < 1 or c < 1 or hidden < 1:
            raise ShapeError("K, L, C and the hidden width must all be >= 1")
        if not 0 <= self.offset_level < levels:
            raise ShapeError(f"offset_level {self.offset_level} outside 0..{levels - 1}")

    @property
    def levels(self) -> int:
        return self.scale_weight.shape[0]

    @property
    def channels(self) -> int:
        return self.offset_weight.shape[0]

    @property
    def k(self) -> int:
        return self.base_offsets.shape[0]

    def check(self, f: FeatureTensor) -> None:
        if f.levels != self.levels or f.channels != self.channels:
            raise ShapeError(
                f"parameters expect L={self.levels}, C={self.channels}; "
                f"tensor has L={f.levels}, C={f.channels}"
            )


@dataclass(frozen=True)
class BlockStack:
    blocks: tuple[DynHeadParams, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def count(self) -> int:
        return len(self.blocks)


def grid_offsets(k: int = DEFAULT_K) -> np.ndarray:
    """Centred square grid of ``k`` base offsets (3x3 for the default k=9)."""
    side = int(round(np.sqrt(k)))
    if k < 1 or side * side != k:
        raise ValueError(f"K must be a positive perfect square, got {k}")
    r = np.arange(side) - (side - 1) / 2.0
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.column_stack([dx.ravel(), dy.ravel()])


def init_params(
    levels: int,
    channels: int,
    rng: np.random.Generator,
    k: int = DEFAULT_K,
    hidden: int | None = None,
    offset_level: int | None = None,
    scale: float = 0.1,
) -> DynHeadParams:
    """Random small parameters around a neutral configuration."""
    hidden = hidden or max(1, channels // 4)
    offset_level = levels // 2 if offset_level is None else offset_level
    offset_bias = np.zeros(3 * k)
    offset_bias[2 * k :] = 1.0
    return DynHeadParams(
        scale_weight=1.0 + scale * rng.standard_normal(levels),
        scale_bias=scale * rng.standard_normal(levels),
        base_offsets=grid_offsets(k),
        offset_weight=scale * rng.standard_normal((channels, 3 * k)),
        offset_bias=offset_bias,
        level_weights=rng.uniform(0.0, 2.0 / k, size=(levels, levels, k)),
        hyper_w1=scale * rng.standard_normal((channels, hidden)),
        hyper_b1=np.zeros(hidden),
        hyper_w2=scale * rng.standard_normal((hidden, 4 * channels)),
        hyper_b2=np.zeros(4 * channels),
        offset_level=offset_level,
    )


def identity_params(levels: int, channels: int, k: int = DEFAULT_K, hidden: int = 1) -> DynHeadParams:
    """Parameters for which every attention in the block is the identity map."""
    offsets = grid_offsets(k)
    centre = int(np.argmin(np.abs(offsets).sum(axis=1)))
    offset_bias = np.zeros(3 * k)
    offset_bias[2 * k :] = 1.0
    level_weights = np.zeros((levels, levels, k))
    for lvl in range(levels):
        level_weights[lvl, lvl, centre] = float(levels)
    hyper_b2 = np.zeros((4, channels))
    hyper_b2[1] = 1.0  # alpha2 = 1
    return DynHeadParams(
        scale_weight=np.zeros(levels),
        scale_bias=np.ones(levels),
        base_offsets=offsets,
        offset_weight=np.zeros((channels, 3 * k)),
        offset_bias=offset_bias,
        level_weights=level_weights,
        hyper_w1=np.zeros((channels, hidden)),
        hyper_b1=np.zeros(hidden),
        hyper_w2=np.zeros((hidden, 4 * channels)),
        hyper_b2=hyper_b2.ravel(),
        offset_level=levels // 2,
    )


def default_stack(
    levels: int, channels: int, rng: np.random.Generator, count: int = DEFAULT_BLOCKS, **kwargs
) -> BlockStack:
    return BlockStack(tuple(init_params(levels, channels, rng, **kwargs) for _ in range(count)))


def hard_sigmoid(x):
    out = np.maximum(0.0, np.minimum(1.0, (np.asarray(x, dtype=np.float64) + 1.0) / 2.0))
    return float(out) if out.ndim == 0 else out


def scale_factors(f: FeatureTensor, params: DynHeadParams) -> np.ndarray:
    """Per-level gate in [0, 1] computed from each level's mean activation."""
    params.check(f)
    level_means = f.data.mean(axis=(1, 2))
    return hard_sigmoid(params.scale_weight * level_means + params.scale_bias)


def scale_attention(f: FeatureTensor, params: DynHeadParams) -> FeatureTensor:
    gate = scale_factors(f, params)
    return f.with_data(gate[:, None, None] * f.data)


def predict_offsets(f: FeatureTensor, params: DynHeadParams):
    """Sampling positions and modulation scalars, each of shape (H, W, K)."""
    grid = f.grid()
    k = params.k
    raw = grid[params.offset_level] @ params.offset_weight + params.offset_bias
    ys, xs = np.meshgrid(np.arange(f.height, dtype=np.float64), np.arange(f.width, dtype=np.float64), indexing="ij")
    pos_x = xs[..., None] + params.base_offsets[:, 0] + raw[..., :k]
    pos_y = ys[..., None] + params.base_offsets[:, 1] + raw[..., k : 2 * k]
    modulation = raw[..., 2 * k :]
    return (
        np.ascontiguousarray(pos_x),
        np.ascontiguousarray(pos_y),
        np.ascontiguousarray(modulation),
    )


def spatial_attention(f: FeatureTensor, params: DynHeadParams) -> FeatureTensor:
    params.check(f)
    pos_x, pos_y, modulation = predict_offsets(f, params)
    out = _kernels.deform_aggregate(
        np.ascontiguousarray(f.grid()), pos_x, pos_y, modulation, params.level_weights
    )
    return f.with_data(out.reshape(f.shape))


def task_coefficients(f: FeatureTensor, params: DynHeadParams) -> np.ndarray:
    """Return a ``(4, C)`` array of ``[alpha1, alpha2, beta1, beta2]``."""
    params.check(f)
    pooled = f.data.mean(axis=(0, 1))
    hidden = np.maximum(pooled @ params.hyper_w1 + params.hyper_b1, 0.0)
    raw = (hidden @ params.hyper_w2 + params.hyper_b2).reshape(4, f.channels)
    # hard-sigmoid squash, then shift [0, 1] -> [-1, 1]
    unit = 2.0 * hard_sigmoid(raw) - 1.0
    return np.stack(
        [
            1.0 + ALPHA_RANGE * unit[0],
            ALPHA_RANGE * unit[1],
            BETA_RANGE * unit[2],
            BETA_RANGE * unit[3],
        ]
    )


def apply_task_coefficients(f: FeatureTensor, coeffs: np.ndarray) -> FeatureTensor:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (4, f.channels):
        raise ShapeError(f"coefficients must have shape (4, {f.channels}), got {coeffs.shape}")
    a1, a2, b1, b2 = coeffs
    return f.with_data(np.maximum(a1 * f.data + b1, a2 * f.data + b2))


def task_attention(f: FeatureTensor, params: DynHeadParams) -> FeatureTensor:
    return apply_task_coefficients(f, task_coefficients(f, params))


def block_forward(f: FeatureTensor, params: DynHeadParams) -> FeatureTensor:
    return task_attention(spatial_attention(scale_attention(f, params), params), params)


def dynhead_forward(f: FeatureTensor, stack: BlockStack) -> FeatureTensor:
    for params in stack.blocks:
        f = block_forward(f, params)
    return f


_ARRAY_FIELDS = [f.name for f in fields(DynHeadParams) if f.name != "offset_level"]


def save_stack(stack: BlockStack, path) -> None:
    """Write a stack as an ``.npz``-compatible tensor list plus a JSON shape manifest.

    Arrays are stored under ``block{i}/{field}``; the ``manifest`` entry holds
    the block count, each block's ``offset_level`` and every array shape.
    """
    arrays = {}
    manifest = {"format": "tinytarget-dynhead/1", "count": stack.count, "blocks": []}
    for i, block in enumerate(stack.blocks):
        entry = {"offset_level": block.offset_level, "shapes": {}}
        for name in _ARRAY_FIELDS:
            arr = getattr(block, name)
            arrays[f"block{i}/{name}"] = arr
            entry["shapes"][name] = list(arr.shape)
        manifest["blocks"].append(entry)
    arrays["manifest"] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    # np.savez stamps wall-clock time into the archive; pin it for reproducible bytes
    with zipfile.ZipFile(Path(path), "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.asarray(arr), allow_pickle=False)


def load_stack(path) -> BlockStack:
    with np.load(Path(path)) as data:
        manifest = json.loads(bytes(data["manifest"]).decode())
        blocks = []
        for i, entry in enumerate(manifest["blocks"]):
            kwargs = {}
            for name in _ARRAY_FIELDS:
                arr = data[f"block{i}/{name}"]
                if list(arr.shape) != entry["shapes"][name]:
                    raise ShapeError(f"block {i} {name}: stored shape disagrees with manifest")
                kwargs[name] = arr
            blocks.append(DynHeadParams(offset_level=entry["offset_level"], **kwargs))
    if len(blocks) != manifest["count"]:
        raise ShapeError("manifest count disagrees with stored blocks")
    return BlockStack(tuple(blocks))
