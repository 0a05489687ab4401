"""Target-level detection scoring: greedy matching, P/R/F1 and AP.

Matching is per image and greedy: detections are visited by descending
confidence (ties keep input order) and each claims the still-unmatched ground
truth with the highest similarity, provided that similarity reaches the
threshold.  AP is the all-point interpolated area under the PR curve with a
monotone precision envelope.
"""

from __future__ import annotations

import csv
import json
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Hashable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError
from .geometry import BBox, NwdConfig, boxes_to_array, similarity_matrix

DEFAULT_CONF_CUT = 0.25
DEFAULT_MATCH_THRESHOLD = 0.5


@dataclass(frozen=True)
class Detection:
    box: BBox
    confidence: float
    image_id: Hashable = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError(f"confidence must lie in [0, 1], got {self.confidence!r}")


@dataclass(frozen=True)
class GroundTruth:
    box: BBox
    image_id: Hashable = 0


class Match(NamedTuple):
    det_index: int
    gt_index: int
    value: float


class MatchResult(NamedTuple):
    tp: int
    fp: int
    fn: int
    matches: list[Match]


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    ap50: float
    criterion: str = "iou"
    threshold: float = DEFAULT_MATCH_THRESHOLD
    conf_cut: float = DEFAULT_CONF_CUT
    empty_ground_truth: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _check_threshold(threshold: float) -> None:
    if not 0.0 <= threshold <= 1.0:
        raise DomainError(f"match threshold must lie in [0, 1], got {threshold!r}")


def _ranked(dets: Sequence[Detection]) -> list[int]:
    # stable sort keeps insertion order among equal confidences
    return sorted(range(len(dets)), key=lambda i: -dets[i].confidence)


def _greedy(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    criterion: str,
    threshold: float,
    cfg: NwdConfig,
) -> tuple[np.ndarray, list[Match]]:
    """Return a per-detection TP flag array and the list of matches."""
    is_tp = np.zeros(len(dets), dtype=bool)
    matches: list[Match] = []
    gts_by_image: dict[Hashable, list[int]] = defaultdict(list)
    for j, g in enumerate(gts):
        gts_by_image[g.image_id].append(j)
    dets_by_image: dict[Hashable, list[int]] = defaultdict(list)
    for i in _ranked(dets):
        dets_by_image[dets[i].image_id].append(i)

    for image_id, det_idx in dets_by_image.items():
        gt_idx = gts_by_image.get(image_id, [])
        if not gt_idx:
            continue
        sim = similarity_matrix(
            boxes_to_array(dets[i].box for i in det_idx),
            boxes_to_array(gts[j].box for j in gt_idx),
            criterion,
            cfg,
        )
        taken = np.zeros(len(gt_idx), dtype=bool)
        for row, i in enumerate(det_idx):
            candidates = np.where(taken, -np.inf, sim[row])
            best = int(np.argmax(candidates))
            if np.isfinite(candidates[best]) and candidates[best] >= threshold:
                taken[best] = True
                is_tp[i] = True
                matches.append(Match(i, gt_idx[best], float(sim[row, best])))
    return is_tp, matches


def match(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    criterion: str = "iou",
    threshold: float = DEFAULT_MATCH_THRESHOLD,
    cfg: NwdConfig = NwdConfig(),
) -> MatchResult:
    """Greedy one-to-one matching; returns ``(tp, fp, fn, matches)``."""
    _check_threshold(threshold)
    is_tp, matches = _greedy(dets, gts, criterion, threshold, cfg)
    tp = int(is_tp.sum())
    return MatchResult(tp, len(dets) - tp, len(gts) - tp, matches)


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    if min(tp, fp, fn) < 0:
        raise DomainError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def pr_curve(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    criterion: str = "iou",
    threshold: float = DEFAULT_MATCH_THRESHOLD,
    cfg: NwdConfig = NwdConfig(),
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Confidence, precision and recall after each ranked detection."""
    _check_threshold(threshold)
    is_tp, _ = _greedy(dets, gts, criterion, threshold, cfg)
    order = _ranked(dets)
    conf = np.array([dets[i].confidence for i in order], dtype=np.float64)
    hits = is_tp[order].astype(np.float64)
    cum_tp = np.cumsum(hits)
    cum_fp = np.cumsum(1.0 - hits)
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1.0)
    recall = cum_tp / len(gts) if gts else np.zeros_like(cum_tp)
    return conf, precision, recall


def average_precision(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    criterion: str = "iou",
    threshold: float = DEFAULT_MATCH_THRESHOLD,
    cfg: NwdConfig = NwdConfig(),
) -> float:
    if not gts:
        warnings.warn("average precision is undefined without ground truth; returning 0", stacklevel=2)
        return 0.0
    _, precision, recall = pr_curve(dets, gts, criterion, threshold, cfg)
    if precision.size == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    criterion: str = "iou",
    threshold: float = DEFAULT_MATCH_THRESHOLD,
    cfg: NwdConfig = NwdConfig(),
    conf_cut: float = DEFAULT_CONF_CUT,
) -> EvalReport:
    """P/R/F1 on detections with confidence >= ``conf_cut``; AP over all of them.

    ``threshold`` sets the matching cut for the P/R/F1 counts.  ``ap50`` always
    matches at 0.5 under the chosen criterion.
    """
    kept = [d for d in dets if d.confidence >= conf_cut]
    tp, fp, fn, _ = match(kept, gts, criterion, threshold, cfg)
    precision, recall, f1 = precision_recall_f1(tp, fp, fn)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ap = average_precision(dets, gts, criterion, DEFAULT_MATCH_THRESHOLD, cfg)
    return EvalReport(
        tp=tp,
        fp=fp,
        fn=fn,
        precision=precision,
        recall=recall,
        f1=f1,
        ap50=ap,
        criterion=criterion,
        threshold=threshold,
        conf_cut=conf_cut,
        empty_ground_truth=not gts,
    )


def write_pr_curve_csv(conf: np.ndarray, precision: np.ndarray, recall: np.ndarray, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "confidence", "precision", "recall"])
        for rank, (c, p, r) in enumerate(zip(conf, precision, recall), start=1):
            writer.writerow([rank, f"{c:.6g}", f"{p:.6g}", f"{r:.6g}"])
