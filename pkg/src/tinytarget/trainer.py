"""Two small gradient-descent experiments.

A. Per-pixel target/background classification on synthetic scenes with a
   logistic model over four local features, trained full-batch with BCE,
   focal or ATFL.  Compares final pixel recall at probability 0.5.

B. Direct regression of a box toward a target box by minimising
   ``1 - IoU`` or ``1 - NWD``.  For disjoint boxes the IoU loss is flat, so
   the IoU run cannot move, while the NWD run converges.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import _kernels, losses
from .data import Scene
from .geometry import BBox, NwdConfig, iou, nwd, wasserstein2_sq

TRAIN_LOSSES = ("bce", "focal", "atfl")
BOX_METRICS = ("iou", "nwd")
N_FEATURES = 4


@dataclass
class TrainLog:
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    error: str | None = None
    error_epoch: int | None = None
    # per-row diagnostics kept out of the CSV, e.g. mean positive probability
    extras: dict[str, list[float]] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        idx = self.columns.index(name)
        return np.array([row[idx] for row in self.rows], dtype=np.float64)

    @property
    def final(self) -> dict:
        return dict(zip(self.columns, self.rows[-1]))

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([v if isinstance(v, int) else f"{v:.6g}" for v in row])


# ---------------------------------------------------------------------------
# experiment A
# ---------------------------------------------------------------------------


def pixel_features(image: np.ndarray) -> np.ndarray:
    """(H*W, 4) raw features: intensity, 3x3 mean, 3x3 max, centre minus ring mean."""
    image = np.ascontiguousarray(image, dtype=np.float64)
    mean, mx, ring = _kernels.local_stats3(image)
    return np.column_stack([image.ravel(), mean.ravel(), mx.ravel(), (image - ring).ravel()])


@dataclass
class PixelClassifier:
    """Logistic model on standardised pixel features (last weight is the bias)."""

    weights: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES + 1))
    learning_rate: float = 0.05
    feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    feature_std: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    def design(self, raw: np.ndarray) -> np.ndarray:
        z = (raw - self.feature_mean) / self.feature_std
        return np.column_stack([z, np.ones(len(z))])

    def predict(self, design: np.ndarray) -> np.ndarray:
        return expit(design @ self.weights)


def _loss_and_dp(loss_id: str, p_t: np.ndarray, p_hat_c: float, cfg: losses.LossConfig, gamma: float):
    if loss_id == "bce":
        return -np.log(losses.clamp_prob(p_t)), losses.focal_grad(p_t, 0.0)
    if loss_id == "focal":
        return losses.focal(p_t, gamma), losses.focal_grad(p_t, gamma)
    if loss_id == "atfl":
        return losses.atfl(p_t, p_hat_c, cfg), losses.atfl_grad_onesided(p_t, p_hat_c, cfg)
    raise ValueError(f"unknown loss {loss_id!r}; expected one of {', '.join(TRAIN_LOSSES)}")


def run_imbalance_experiment(
    loss_id: str,
    scenes: Sequence[Scene],
    epochs: int = 300,
    seed: int = 0,
    *,
    learning_rate: float = 0.05,
    gamma: float = 2.0,
    cfg: losses.LossConfig = losses.LossConfig(),
    decision_threshold: float = 0.5,
) -> TrainLog:
    """Train a :class:`PixelClassifier` full-batch with Adam and log each epoch.

    Row ``e`` describes the model after ``e`` updates, so ``epochs=0`` yields
    only the initial state.  ``p_hat_c`` is the forecast in force during that
    epoch (ATFL only; NaN otherwise).  ``seed`` sets the initial weights.
    """
    if loss_id not in TRAIN_LOSSES:
        raise ValueError(f"unknown loss {loss_id!r}; expected one of {', '.join(TRAIN_LOSSES)}")
    if not scenes:
        raise ValueError("need at least one scene")
    raw = np.concatenate([pixel_features(s.pixels) for s in scenes])
    labels = np.concatenate([s.mask.ravel() for s in scenes])
    if not labels.any():
        raise ValueError("scenes contain no target pixels")

    rng = np.random.default_rng(seed)
    model = PixelClassifier(
        weights=0.01 * rng.standard_normal(N_FEATURES + 1),
        learning_rate=learning_rate,
        feature_mean=raw.mean(axis=0),
        feature_std=raw.std(axis=0) + 1e-12,
    )
    x = model.design(raw)
    sign = np.where(labels, 1.0, -1.0)
    state = losses.SmoothingState()
    log = TrainLog(("epoch", "loss", "recall", "precision", "p_hat_c"))
    m = np.zeros_like(model.weights)
    v = np.zeros_like(model.weights)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8

    for epoch in range(epochs + 1):
        p = model.predict(x)
        p_t = np.where(labels, p, 1.0 - p)
        pos_mean = float(np.clip(p[labels].mean(), losses.EPS, 1.0 - losses.EPS))
        # forecast frozen for the epoch; before any history use this epoch's mean
        p_hat = state.p_hat_c if state.p_hat_c is not None else pos_mean
        loss_vals, dl_dpt = _loss_and_dp(loss_id, p_t, p_hat, cfg, gamma)
        loss = float(np.mean(loss_vals))

        predicted = p >= decision_threshold
        tp = int(np.count_nonzero(predicted & labels))
        recall = tp / int(labels.sum())
        precision = tp / int(predicted.sum()) if predicted.any() else 0.0
        log.rows.append((epoch, loss, recall, precision, p_hat if loss_id == "atfl" else math.nan))
        log.extras.setdefault("positive_mean", []).append(pos_mean)
        if not math.isfinite(loss):
            log.error = "non-finite loss"
            log.error_epoch = epoch
            break
        if epoch == epochs:
            break

        grad_z = dl_dpt * sign * p * (1.0 - p)
        grad = x.T @ grad_z / len(grad_z)
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1 ** (epoch + 1))
        v_hat = v / (1 - beta2 ** (epoch + 1))
        model.weights = model.weights - model.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)
        if not np.all(np.isfinite(model.weights)):
            log.error = "non-finite weights"
            log.error_epoch = epoch
            break
        if loss_id == "atfl":
            state = losses.update_smoothing(state, pos_mean)
    return log


# ---------------------------------------------------------------------------
# experiment B
# ---------------------------------------------------------------------------


@dataclass
class BoxRegressor:
    """Box parameters kept as ``(cx, cy, log w, log h)`` so sizes stay positive."""

    params: np.ndarray

    @classmethod
    def from_box(cls, box: BBox) -> "BoxRegressor":
        return cls(np.array([box.cx, box.cy, math.log(box.w), math.log(box.h)]))

    @staticmethod
    def to_box(params: np.ndarray) -> BBox:
        return BBox(float(params[0]), float(params[1]), math.exp(params[2]), math.exp(params[3]))

    @property
    def box(self) -> BBox:
        return self.to_box(self.params)


def box_metric(metric: str, params: np.ndarray, target: BBox, cfg: NwdConfig) -> float:
    box = BoxRegressor.to_box(params)
    if metric == "iou":
        return iou(box, target)
    if metric == "nwd":
        return nwd(box, target, cfg)
    raise ValueError(f"unknown metric {metric!r}; expected 'iou' or 'nwd'")


def numeric_loss_grad(metric: str, params: np.ndarray, target: BBox, cfg: NwdConfig, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of ``1 - metric`` in parameter space."""
    grad = np.zeros(4)
    for j in range(4):
        hi = params.copy()
        lo = params.copy()
        hi[j] += step
        lo[j] -= step
        grad[j] = -(box_metric(metric, hi, target, cfg) - box_metric(metric, lo, target, cfg)) / (2 * step)
    return grad


def nwd_loss_grad(params: np.ndarray, target: BBox, cfg: NwdConfig) -> np.ndarray:
    """Analytic gradient of ``1 - NWD`` in parameter space."""
    box = BoxRegressor.to_box(params)
    dist = math.sqrt(wasserstein2_sq(box, target))
    if dist == 0.0:
        return np.zeros(4)
    sim = math.exp(-dist / cfg.c)
    # d dist / d params; the size terms carry d w / d log w = w
    d_dist = np.array(
        [
            (box.cx - target.cx),
            (box.cy - target.cy),
            0.5 * (box.w - target.w) * 0.5 * box.w,
            0.5 * (box.h - target.h) * 0.5 * box.h,
        ]
    ) / dist
    return sim / cfg.c * d_dist


def run_box_experiment(
    metric: str,
    init: BBox,
    target: BBox,
    steps: int = 2000,
    lr: float = 0.5,
    cfg: NwdConfig = NwdConfig(),
    *,
    analytic: bool = True,
) -> TrainLog:
    """Minimise ``1 - metric`` with Adam; the log holds the metric at every step."""
    if metric not in BOX_METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected 'iou' or 'nwd'")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    reg = BoxRegressor.from_box(init)
    log = TrainLog(("step", "metric_value"))
    m = np.zeros(4)
    v = np.zeros(4)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-12
    for step in range(steps + 1):
        log.rows.append((step, box_metric(metric, reg.params, target, cfg)))
        if step == steps:
            break
        if metric == "nwd" and analytic:
            grad = nwd_loss_grad(reg.params, target, cfg)
        else:
            grad = numeric_loss_grad(metric, reg.params, target, cfg)
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1 ** (step + 1))
        v_hat = v / (1 - beta2 ** (step + 1))
        reg.params = reg.params - lr * m_hat / (np.sqrt(v_hat) + adam_eps)
    return log
