"""Localization evaluation: matching, counting metrics, calibration.

Predicted points are matched to ground-truth boxes by an exact minimum-
total-distance assignment of maximum cardinality, where a pair is feasible
only when the point lies within the box's diagonal length of its center.
Counting metrics and a 10-bin expected calibration error complete the
report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .annot import (
    BoxAnnotation,
    DatasetBundle,
    PredictedPoint,
    PredictionSet,
    center_of,
    diagonal_of,
)
from .errors import ContractError

N_ECE_BINS = 10


def _as_points(pred_points) -> np.ndarray:
    if len(pred_points) == 0:
        return np.empty((0, 2))
    if isinstance(pred_points[0], PredictedPoint):
        return np.array([[p.x, p.y] for p in pred_points], dtype=float)
    pts = np.asarray(pred_points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ContractError("pred_points must have shape (n, 2)")
    return pts


@dataclass
class MatchResult:
    """Optimal feasible matching for one image."""

    n_pred: int
    n_gt: int
    pairs: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return self.n_pred - self.tp

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp

    @property
    def total_distance(self) -> float:
        return float(sum(d for _, _, d in self.pairs))

    def matched_preds(self) -> set[int]:
        return {i for i, _, _ in self.pairs}


def match_predictions(pred_points, gt_boxes: list[BoxAnnotation]) -> MatchResult:
    """Match points to box centers: maximum cardinality, then minimum
    total distance, over pairs with distance <= the box diagonal.

    The feasibility comparison is exact (<=), so a point at precisely the
    diagonal distance matches and one ulp beyond does not.
    """
    pts = _as_points(pred_points)
    n_pred, n_gt = pts.shape[0], len(gt_boxes)
    if n_pred == 0 or n_gt == 0:
        return MatchResult(n_pred=n_pred, n_gt=n_gt)
    centers = np.array([center_of(b) for b in gt_boxes], dtype=float)
    diags = np.array([diagonal_of(b) for b in gt_boxes], dtype=float)
    dist = np.hypot(pts[:, 0, None] - centers[None, :, 0],
                    pts[:, 1, None] - centers[None, :, 1])
    feasible = dist <= diags[None, :]
    if not feasible.any():
        return MatchResult(n_pred=n_pred, n_gt=n_gt)
    big = float(dist[feasible].sum() + dist.max() + 1.0)
    cost = np.where(feasible, dist, big)
    rows, cols = linear_sum_assignment(cost)
    pairs = [
        (int(r), int(c), float(dist[r, c]))
        for r, c in zip(rows, cols)
        if feasible[r, c]
    ]
    return MatchResult(n_pred=n_pred, n_gt=n_gt, pairs=pairs)


@dataclass
class LocMetrics:
    """Micro-averaged localization and counting metrics.

    ``mse`` is the root of the mean squared count error (the RMSE, under
    its conventional name in counting benchmarks).  Per-image macro
    averages are secondary; an image with neither predictions nor objects
    counts as perfect in them.  ``nae`` averages |error| / n_gt over
    images with at least one object and is NaN when there is none.
    """

    tp: int
    fp: int
    fn: int
    n_images: int
    precision: float
    recall: float
    f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    mae: float
    mse: float
    nae: float

    def to_record(self) -> dict:
        rec = {
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "n_images": self.n_images,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "macro_precision": self.macro_precision, "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1, "mae": self.mae, "mse": self.mse,
            "nae": None if math.isnan(self.nae) else self.nae,
        }
        return rec


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = 1.0 if tp + fp == 0 else tp / (tp + fp)
    r = 1.0 if tp + fn == 0 else tp / (tp + fn)
    f = 0.0 if p + r == 0 else 2.0 * p * r / (p + r)
    return p, r, f


def localization_metrics(results: list[MatchResult]) -> LocMetrics:
    if not results:
        raise ContractError("localization_metrics needs at least one image")
    tp = sum(r.tp for r in results)
    fp = sum(r.fp for r in results)
    fn = sum(r.fn for r in results)
    precision, recall, f1 = _prf(tp, fp, fn)
    per = [_prf(r.tp, r.fp, r.fn) for r in results]
    diffs = np.array([r.n_pred - r.n_gt for r in results], dtype=float)
    gts = np.array([r.n_gt for r in results], dtype=float)
    with_gt = gts > 0
    nae = float(np.mean(np.abs(diffs[with_gt]) / gts[with_gt])) if with_gt.any() else float("nan")
    return LocMetrics(
        tp=tp, fp=fp, fn=fn, n_images=len(results),
        precision=precision, recall=recall, f1=f1,
        macro_precision=float(np.mean([p for p, _, _ in per])),
        macro_recall=float(np.mean([r for _, r, _ in per])),
        macro_f1=float(np.mean([f for _, _, f in per])),
        mae=float(np.mean(np.abs(diffs))),
        mse=float(np.sqrt(np.mean(diffs ** 2))),
        nae=nae,
    )


def confidence_from_map(conf_map: np.ndarray, boxes: list[BoxAnnotation]) -> np.ndarray:
    """Mean map value over the integer pixel lattice covered by each box.

    A pixel (row r, column c) is covered when its unit cell intersects the
    box, i.e. rows floor(y) .. ceil(y+h)-1 and columns floor(x) ..
    ceil(x+w)-1, clipped to the map.
    """
    conf_map = np.asarray(conf_map, dtype=float)
    if conf_map.ndim != 2:
        raise ContractError("conf_map must be 2-D")
    h_map, w_map = conf_map.shape
    out = np.empty(len(boxes))
    for i, b in enumerate(boxes):
        r0 = max(int(math.floor(b.y)), 0)
        r1 = min(int(math.ceil(b.y + b.h)), h_map)
        c0 = max(int(math.floor(b.x)), 0)
        c1 = min(int(math.ceil(b.x + b.w)), w_map)
        if r1 <= r0 or c1 <= c0:
            raise ContractError(f"box {i} covers no pixels of the map")
        out[i] = conf_map[r0:r1, c0:c1].mean()
    return out


@dataclass
class CalibrationReport:
    """Reliability statistics over 10 equal-width confidence bins."""

    edges: np.ndarray
    counts: np.ndarray
    conf_means: np.ndarray  # NaN for empty bins
    precisions: np.ndarray  # NaN for empty bins
    ece: float
    n: int

    def to_record(self) -> dict:
        none_if_nan = lambda v: None if math.isnan(v) else float(v)
        return {
            "edges": [float(e) for e in self.edges],
            "counts": [int(c) for c in self.counts],
            "conf_means": [none_if_nan(v) for v in self.conf_means],
            "precisions": [none_if_nan(v) for v in self.precisions],
            "ece": self.ece,
            "n": self.n,
        }


def ece(confidences, correct, n_bins: int = N_ECE_BINS) -> CalibrationReport:
    """Expected calibration error over equal-width confidence bins.

    Bins are right-open except the last (confidence 1.0 belongs to the top
    bin); empty bins contribute nothing.  Confidences must lie in [0, 1].
    """
    conf = np.asarray(confidences, dtype=float).ravel()
    hit = np.asarray(correct, dtype=bool).ravel()
    if conf.size == 0:
        raise ContractError("ece needs at least one prediction")
    if conf.shape != hit.shape:
        raise ContractError("confidences and correctness flags must align")
    if conf.min() < 0.0 or conf.max() > 1.0:
        raise ContractError("confidences must lie in [0, 1]")
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.minimum((np.searchsorted(edges, conf, side="right") - 1), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    conf_means = np.full(n_bins, np.nan)
    precisions = np.full(n_bins, np.nan)
    total = 0.0
    for i in range(n_bins):
        if counts[i] == 0:
            continue
        sel = idx == i
        conf_means[i] = conf[sel].mean()
        precisions[i] = hit[sel].mean()
        total += counts[i] / conf.size * abs(conf_means[i] - precisions[i])
    return CalibrationReport(edges=edges, counts=counts, conf_means=conf_means,
                             precisions=precisions, ece=float(total), n=int(conf.size))


@dataclass
class EvalResult:
    metrics: LocMetrics
    calibration: CalibrationReport | None
    per_image: list[dict] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "metrics": self.metrics.to_record(),
            "calibration": None if self.calibration is None else self.calibration.to_record(),
            "per_image": self.per_image,
        }


def evaluate_predictions(bundle: DatasetBundle, preds: PredictionSet) -> EvalResult:
    """Match and score a prediction set against a dataset.

    Images without a prediction record count as zero predictions.
    Prediction records for unknown image ids are a contract error.
    """
    known = {img.id for img in bundle.images}
    unknown = sorted(set(preds.points) - known)
    if unknown:
        raise ContractError(f"predictions reference unknown image ids: {unknown[:5]}")
    results = []
    confs: list[float] = []
    hits: list[bool] = []
    per_image = []
    for img in bundle.images:
        pred_pts = preds.points.get(img.id, [])
        res = match_predictions(pred_pts, img.boxes)
        results.append(res)
        matched = res.matched_preds()
        confs.extend(p.conf for p in pred_pts)
        hits.extend(i in matched for i in range(len(pred_pts)))
        per_image.append({
            "id": img.id, "n_pred": res.n_pred, "n_gt": res.n_gt,
            "tp": res.tp, "fp": res.fp, "fn": res.fn,
            "total_distance": res.total_distance,
        })
    metrics = localization_metrics(results)
    calibration = ece(confs, hits) if confs else None
    return EvalResult(metrics=metrics, calibration=calibration, per_image=per_image)
