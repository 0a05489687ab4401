"""Binary classification losses for heavily imbalanced targets.

All losses are written in terms of ``p_t``, the probability given to the true
class.  Besides BCE and focal loss this module provides the threshold focal
loss (TFL), which splits samples at a probability threshold and amplifies the
hard side with ``(lam - p_t) ** eta``, and its adaptive form (ATFL) in which
``eta = -ln p_t`` and ``gamma = -ln p_hat_c``, ``p_hat_c`` being an
exponentially smoothed forecast of the mean target probability.

Functions accept scalars or numpy arrays; scalar in, float out.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BranchPointError, DomainError

EPS = 1e-7
SMOOTHING_HISTORY_WEIGHT = 0.05
DEFAULT_LAMBDA = 3.5
DEFAULT_THRESHOLD = 0.5
LOSS_IDS = ("bce", "focal", "tfl", "atfl")


@dataclass(frozen=True)
class LossConfig:
    lam: float = DEFAULT_LAMBDA
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self) -> None:
        if not self.lam > 1:
            raise DomainError(f"lambda must be > 1, got {self.lam!r}")
        if not 0 < self.threshold < 1:
            raise DomainError(f"threshold must lie in (0, 1), got {self.threshold!r}")


@dataclass(frozen=True)
class SmoothingState:
    """Per-epoch mean target probabilities and the forecast for the next epoch.

    ``p_hat_c`` is ``None`` until the first epoch has been recorded.
    """

    epoch_means: tuple[float, ...] = field(default_factory=tuple)
    p_hat_c: float | None = None


def _scalar_or_array(x: np.ndarray):
    x = x + 0.0  # -log(1) is -0.0; normalise to +0.0
    return float(x) if np.ndim(x) == 0 else x


def clamp_prob(p, name: str = "p", *, upper: float = 1.0) -> np.ndarray:
    """Validate ``p`` in [0, 1] and clip it to ``[EPS, upper]``.

    Loss values only need the lower clip (``log 1`` is fine and keeps the
    loss exactly 0 at certainty); gradients pass ``upper=1 - EPS`` because
    ``(1 - p) ** (gamma - 1)`` diverges at 1 when ``gamma < 1``.
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"{name} must lie in [0, 1]")
    return np.clip(arr, EPS, upper)


def _clamp_for_grad(p, name: str) -> np.ndarray:
    return clamp_prob(p, name, upper=1.0 - EPS)


def _check_exponent(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise DomainError(f"{name} must be a finite value >= 0")
    return arr


def bce(p, y):
    """Binary cross-entropy ``-log(p_t)`` for predicted probability ``p`` and label ``y``."""
    p = np.asarray(p, dtype=np.float64)
    clamp_prob(p)  # validation only; clip p_t below so p = 0 and p = 1 stay symmetric
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("labels must be 0 or 1")
    p_t = clamp_prob(np.where(y == 1, p, 1.0 - p), "p_t")
    return _scalar_or_array(-np.log(p_t))


def focal(p_t, gamma):
    p_t = clamp_prob(p_t, "p_t")
    gamma = _check_exponent(gamma, "gamma")
    return _scalar_or_array(np.power(1.0 - p_t, gamma) * -np.log(p_t))


def focal_grad(p_t, gamma):
    """d focal / d p_t."""
    p_t = _clamp_for_grad(p_t, "p_t")
    gamma = _check_exponent(gamma, "gamma")
    log_p = np.log(p_t)
    grad = gamma * np.power(1.0 - p_t, gamma - 1.0) * log_p - np.power(1.0 - p_t, gamma) / p_t
    return _scalar_or_array(grad)


def tfl(p_t, eta, gamma, cfg: LossConfig = LossConfig()):
    """Threshold focal loss with fixed exponents.

    ``p_t <= cfg.threshold`` is the hard branch ``-(lam - p_t)**eta * log(p_t)``;
    above it the loss is the focal loss with exponent ``gamma``.
    """
    p_t = clamp_prob(p_t, "p_t")
    eta = _check_exponent(eta, "eta")
    gamma = _check_exponent(gamma, "gamma")
    nll = -np.log(p_t)
    hard = np.power(cfg.lam - p_t, eta) * nll
    easy = np.power(1.0 - p_t, gamma) * nll
    return _scalar_or_array(np.where(p_t <= cfg.threshold, hard, easy))


def adaptive_gamma(p_hat_c):
    p_hat_c = clamp_prob(p_hat_c, "p_hat_c")
    return _scalar_or_array(-np.log(p_hat_c))


def adaptive_eta(p_t):
    p_t = clamp_prob(p_t, "p_t")
    return _scalar_or_array(-np.log(p_t))


def atfl(p_t, p_hat_c, cfg: LossConfig = LossConfig()):
    """Adaptive threshold focal loss.

    Hard samples get the factor ``(lam - p_t) ** (-ln p_t)``, easy samples
    ``(1 - p_t) ** (-ln p_hat_c)``.
    """
    p_t = clamp_prob(p_t, "p_t")
    p_hat_c = clamp_prob(p_hat_c, "p_hat_c")
    nll = -np.log(p_t)
    hard = np.power(cfg.lam - p_t, -np.log(p_t)) * nll
    easy = np.power(1.0 - p_t, -np.log(p_hat_c)) * nll
    return _scalar_or_array(np.where(p_t <= cfg.threshold, hard, easy))


def _atfl_grad(p_t: np.ndarray, p_hat_c: np.ndarray, cfg: LossConfig) -> np.ndarray:
    log_p = np.log(p_t)
    nll = -log_p
    # hard branch: M = (lam - p)^(-ln p), L = M * (-ln p)
    base = cfg.lam - p_t
    m = np.power(base, nll)
    dm = m * (-np.log(base) / p_t + log_p / base)
    hard = dm * nll - m / p_t
    # easy branch: fixed exponent gamma = -ln p_hat_c
    gamma = -np.log(p_hat_c)
    easy = gamma * np.power(1.0 - p_t, gamma - 1.0) * log_p - np.power(1.0 - p_t, gamma) / p_t
    return np.where(p_t <= cfg.threshold, hard, easy)


def atfl_grad(p_t, p_hat_c, cfg: LossConfig = LossConfig(), *, branch_tol: float = 1e-9):
    """Analytic d ATFL / d p_t.

    Raises ``BranchPointError`` within ``branch_tol`` of the threshold, where
    the loss jumps between branches.
    """
    p_t = _clamp_for_grad(p_t, "p_t")
    p_hat_c = _clamp_for_grad(p_hat_c, "p_hat_c")
    if np.any(np.abs(p_t - cfg.threshold) < branch_tol):
        raise BranchPointError(f"ATFL is not differentiable at p_t = threshold ({cfg.threshold})")
    return _scalar_or_array(_atfl_grad(p_t, p_hat_c, cfg))


def atfl_grad_onesided(p_t, p_hat_c, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Like ``atfl_grad`` but uses the hard branch at the threshold itself.

    Training code needs a gradient for every pixel, including the very first
    step where all probabilities may sit exactly on the threshold.
    """
    return _atfl_grad(_clamp_for_grad(p_t, "p_t"), _clamp_for_grad(p_hat_c, "p_hat_c"), cfg)


def tfl_grad(p_t, eta, gamma, cfg: LossConfig = LossConfig()):
    """d TFL / d p_t with ``eta`` and ``gamma`` held fixed."""
    p_t = _clamp_for_grad(p_t, "p_t")
    eta = _check_exponent(eta, "eta")
    gamma = _check_exponent(gamma, "gamma")
    log_p = np.log(p_t)
    base = cfg.lam - p_t
    hard = eta * np.power(base, eta - 1.0) * log_p - np.power(base, eta) / p_t
    easy = gamma * np.power(1.0 - p_t, gamma - 1.0) * log_p - np.power(1.0 - p_t, gamma) / p_t
    return _scalar_or_array(np.where(p_t <= cfg.threshold, hard, easy))


def update_smoothing(state: SmoothingState, current_epoch_mean: float) -> SmoothingState:
    """Record an epoch's mean target probability and forecast the next one.

    ``p_hat_c = 0.05 * mean(previous epoch means) + 0.95 * current``; with no
    history the forecast is the current mean.
    """
    current = float(current_epoch_mean)
    if not (math.isfinite(current) and 0.0 < current < 1.0):
        raise DomainError(f"epoch mean must lie in (0, 1), got {current_epoch_mean!r}")
    history = state.epoch_means
    if not history:
        p_hat = current
    else:
        # running mean: exact for constant sequences
        hist_mean = history[0]
        for k, value in enumerate(history[1:], start=2):
            hist_mean += (value - hist_mean) / k
        p_hat = current + SMOOTHING_HISTORY_WEIGHT * (hist_mean - current)
        # guard against rounding outside the convex hull of the observations
        p_hat = min(max(p_hat, min(min(history), current)), max(max(history), current))
    return SmoothingState(epoch_means=history + (current,), p_hat_c=p_hat)


def loss_values(loss_id: str, p_t, params: dict | None = None):
    """Evaluate a loss by name; ``params`` supplies gamma, eta, lam, threshold, p_hat_c."""
    params = dict(params or {})
    cfg = LossConfig(
        lam=params.get("lam", DEFAULT_LAMBDA), threshold=params.get("threshold", DEFAULT_THRESHOLD)
    )
    if loss_id == "bce":
        return bce(p_t, np.ones_like(np.asarray(p_t), dtype=np.int64))
    if loss_id == "focal":
        return focal(p_t, params.get("gamma", 2.0))
    if loss_id == "tfl":
        return tfl(p_t, params.get("eta", 1.0), params.get("gamma", 2.0), cfg)
    if loss_id == "atfl":
        return atfl(p_t, params.get("p_hat_c", 0.5), cfg)
    raise DomainError(f"unknown loss {loss_id!r}; expected one of {', '.join(LOSS_IDS)}")


def loss_curve(loss_id: str, params: dict | None = None, n_points: int = 101) -> np.ndarray:
    """Loss sampled on an even ``p_t`` grid over ``[EPS, 1 - EPS]``.

    Returns an ``(n_points, 2)`` array of ``(p_t, loss)`` rows.
    """
    if int(n_points) < 2:
        raise DomainError(f"n_points must be >= 2, got {n_points!r}")
    p_t = np.linspace(EPS, 1.0 - EPS, int(n_points))
    values = np.asarray(loss_values(loss_id, p_t, params), dtype=np.float64)
    return np.column_stack([p_t, values])


def write_curve_csv(curve: np.ndarray, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["p_t", "loss"])
        for p_t, value in curve:
            writer.writerow([f"{p_t:.6g}", f"{value:.6g}"])
