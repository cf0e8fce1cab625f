"""Histograms, divergences, and correlation summaries.

All distribution comparisons in the toolkit run over explicit shared bin
edges, so the estimators stay deterministic and artifacts can be rebuilt
bit for bit from the manifests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .annot import DatasetBundle, center_of, scale_of
from .errors import ContractError

DEFAULT_BINS = 256
DEFAULT_SMOOTHING = 1e-9


@dataclass
class EmpiricalDistribution:
    """Normalized histogram over fixed edges.

    ``mass`` sums to 1 (or to 0 for an empty sample set).  Samples outside
    the edge range are clipped into the terminal bins and counted in
    ``clip_low`` / ``clip_high``.
    """

    edges: np.ndarray
    mass: np.ndarray
    n_samples: int
    clip_low: int = 0
    clip_high: int = 0

    @property
    def n_bins(self) -> int:
        return len(self.mass)

    def to_record(self) -> dict:
        return {
            "edges": [float(e) for e in self.edges],
            "mass": [float(m) for m in self.mass],
            "n_samples": int(self.n_samples),
            "clip_low": int(self.clip_low),
            "clip_high": int(self.clip_high),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "EmpiricalDistribution":
        return cls(
            edges=np.asarray(rec["edges"], dtype=float),
            mass=np.asarray(rec["mass"], dtype=float),
            n_samples=int(rec["n_samples"]),
            clip_low=int(rec.get("clip_low", 0)),
            clip_high=int(rec.get("clip_high", 0)),
        )


def _check_edges(edges: np.ndarray) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2:
        raise ContractError("edges must be a 1-D array with at least two entries")
    if not np.all(np.diff(edges) > 0):
        raise ContractError("edges must be strictly increasing")
    return edges


def shared_edges(*sample_sets, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Linear bin edges spanning the pooled range of all sample sets.

    A degenerate pooled range (single distinct value) is widened
    symmetrically by 0.5 on each side so the histogram stays well defined.
    """
    pooled = np.concatenate([np.asarray(s, dtype=float).ravel() for s in sample_sets])
    if pooled.size == 0:
        raise ContractError("shared_edges needs at least one sample")
    if bins < 1:
        raise ContractError("bins must be >= 1")
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def geometric_edges(*sample_sets, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Log-spaced bin edges spanning the pooled range of all sample sets.

    Suited to multiplicative quantities such as object scales, where a
    linear grid would collapse most of the mass into the first few bins.
    All samples must be positive; a degenerate pooled range is widened
    to one octave on each side.
    """
    pooled = np.concatenate([np.asarray(s, dtype=float).ravel() for s in sample_sets])
    if pooled.size == 0:
        raise ContractError("geometric_edges needs at least one sample")
    if bins < 1:
        raise ContractError("bins must be >= 1")
    if not np.all(pooled > 0):
        raise ContractError("geometric_edges needs positive samples")
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo / 2.0, hi * 2.0
    return np.geomspace(lo, hi, bins + 1)


def bin_indices(samples, edges) -> np.ndarray:
    """Bin index per sample under the shared binning rule.

    Bins are right-open except the last, which also owns the maximum edge;
    a sample equal to an interior edge lands in the bin to its right.
    Out-of-range samples are clipped into the terminal bins.
    """
    edges = _check_edges(edges)
    samples = np.asarray(samples, dtype=float).ravel()
    if not np.all(np.isfinite(samples)):
        raise ContractError("samples must be finite")
    x = np.clip(samples, edges[0], edges[-1])
    idx = np.searchsorted(edges, x, side="right") - 1
    return np.minimum(idx, len(edges) - 2)


def histogram(samples, edges) -> EmpiricalDistribution:
    """Normalized histogram under the :func:`bin_indices` rule.

    Clipped out-of-range samples are tallied in ``clip_low``/``clip_high``.
    """
    edges = _check_edges(edges)
    samples = np.asarray(samples, dtype=float).ravel()
    idx = bin_indices(samples, edges)
    clip_low = int(np.count_nonzero(samples < edges[0]))
    clip_high = int(np.count_nonzero(samples > edges[-1]))
    counts = np.bincount(idx, minlength=len(edges) - 1)
    n = samples.size
    mass = counts / n if n else np.zeros(len(edges) - 1)
    return EmpiricalDistribution(edges=edges, mass=mass, n_samples=int(n),
                                 clip_low=clip_low, clip_high=clip_high)


def kl_divergence(
    p: EmpiricalDistribution, q: EmpiricalDistribution, smoothing: float = DEFAULT_SMOOTHING
) -> float:
    """KL(p || q) over shared edges with additive smoothing.

    Both mass vectors get ``smoothing`` added to every bin and are
    renormalized before the divergence is taken, so the result is finite
    and non-negative even with empty bins.
    """
    if not np.array_equal(p.edges, q.edges):
        raise ContractError("kl_divergence requires identical edges")
    if smoothing <= 0:
        raise ContractError("smoothing must be positive")
    ps = p.mass + smoothing
    ps = ps / ps.sum()
    qs = q.mass + smoothing
    qs = qs / qs.sum()
    return float(np.sum(ps * np.log(ps / qs)))


def pearson(xs, ys) -> float:
    """Pearson correlation; NaN when either side has zero variance."""
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.shape != ys.shape:
        raise ContractError("pearson requires equal-length inputs")
    if xs.size < 2:
        return float("nan")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if denom == 0.0:
        return float("nan")
    return float(np.clip(np.sum(xc * yc) / denom, -1.0, 1.0))


def spearman(xs, ys) -> float:
    """Spearman rank correlation; ties receive mean ranks."""
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.shape != ys.shape:
        raise ContractError("spearman requires equal-length inputs")
    if xs.size < 2:
        return float("nan")
    return pearson(rankdata(xs, method="average"), rankdata(ys, method="average"))


@dataclass
class CorrelationSummary:
    """Per-image correlation coefficients for one feature pair."""

    pair: str
    coefficients: np.ndarray
    mean: float
    n_undefined: int
    hist: EmpiricalDistribution

    def to_record(self) -> dict:
        return {
            "pair": self.pair,
            "mean": self.mean,
            "n_images": int(self.coefficients.size),
            "n_undefined": self.n_undefined,
            "hist": self.hist.to_record(),
        }


@dataclass
class CorrelationReport:
    summaries: dict[str, CorrelationSummary] = field(default_factory=dict)
    n_images: int = 0
    n_skipped: int = 0

    def to_record(self) -> dict:
        return {
            "n_images": self.n_images,
            "n_skipped": self.n_skipped,
            "summaries": {k: v.to_record() for k, v in self.summaries.items()},
        }


CORRELATION_PAIRS = ("scale_vertical", "scale_horizontal", "vertical_horizontal")


def scale_position_correlations(
    bundle: DatasetBundle, include_synthetic: bool = False, bins: int = 40
) -> CorrelationReport:
    """Per-image Pearson correlations between object scale and position.

    For every image with at least two usable boxes, computes the
    correlation of scale with the vertical and horizontal box-center
    coordinates, and between the two coordinates.  Synthetic pseudo-boxes
    are excluded by default since their scale carries no signal.  Undefined
    coefficients (constant features) are recorded as NaN and excluded from
    the means.
    """
    per_pair: dict[str, list[float]] = {p: [] for p in CORRELATION_PAIRS}
    n_used = 0
    n_skipped = 0
    for img in bundle.images:
        boxes = [b for b in img.boxes if include_synthetic or not b.synthetic]
        if len(boxes) < 2:
            n_skipped += 1
            continue
        n_used += 1
        scales = np.array([scale_of(b) for b in boxes])
        centers = np.array([center_of(b) for b in boxes])
        cx, cy = centers[:, 0], centers[:, 1]
        per_pair["scale_vertical"].append(pearson(scales, cy))
        per_pair["scale_horizontal"].append(pearson(scales, cx))
        per_pair["vertical_horizontal"].append(pearson(cy, cx))

    edges = np.linspace(-1.0, 1.0, bins + 1)
    report = CorrelationReport(n_images=n_used, n_skipped=n_skipped)
    for pair, values in per_pair.items():
        coeffs = np.asarray(values, dtype=float)
        defined = coeffs[np.isfinite(coeffs)]
        report.summaries[pair] = CorrelationSummary(
            pair=pair,
            coefficients=coeffs,
            mean=float(defined.mean()) if defined.size else float("nan"),
            n_undefined=int(coeffs.size - defined.size),
            hist=histogram(defined, edges),
        )
    return report
