"""Distribution-shift measures between two scale populations.

Two complementary quantities over shared bin edges:

* diversity shift: total-variation distance between the marginal scale
  distributions, in [0, 1];
* correlation shift: disagreement of the label conditionals p(y | scale),
  weighted per bin by the geometric mean of the two marginals, also in
  [0, 1] and zero whenever the supports are disjoint.

Both are estimated from finite samples on a fixed grid, so reports carry
the bin count and sample sizes, and a bootstrap helper quantifies
estimator noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .regularize import Patch
from .stats import (
    DEFAULT_BINS,
    DEFAULT_SMOOTHING,
    EmpiricalDistribution,
    bin_indices,
    geometric_edges,
    histogram,
    kl_divergence,
    shared_edges,
)

N_LABEL_CLASSES = 4


@dataclass
class LabeledScaleSamples:
    """Scale samples with a small-integer class label per sample."""

    name: str
    scales: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scales = np.asarray(self.scales, dtype=float).ravel()
        self.labels = np.asarray(self.labels, dtype=int).ravel()
        if self.scales.size == 0:
            raise ContractError(f"{self.name}: at least one sample is required")
        if self.scales.shape != self.labels.shape:
            raise ContractError(f"{self.name}: scales and labels must align")
        if self.labels.min() < 0:
            raise ContractError(f"{self.name}: labels must be non-negative")

    @property
    def n(self) -> int:
        return int(self.scales.size)


def diversity_shift(p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
    """Total-variation distance between two histograms on shared edges."""
    if not np.array_equal(p.edges, q.edges):
        raise ContractError("diversity_shift requires identical edges")
    return float(0.5 * np.abs(p.mass - q.mass).sum())


def restricted_diversity_shift(p: EmpiricalDistribution, q: EmpiricalDistribution) -> float:
    """Total variation restricted to bins where both sides have mass."""
    if not np.array_equal(p.edges, q.edges):
        raise ContractError("restricted_diversity_shift requires identical edges")
    both = (p.mass > 0) & (q.mass > 0)
    return float(0.5 * np.abs(p.mass[both] - q.mass[both]).sum())


def correlation_shift(
    s1: LabeledScaleSamples, s2: LabeledScaleSamples, edges
) -> tuple[float, int]:
    """Geometric-mean-weighted disagreement of label conditionals.

    Per scale bin i with marginals p1_i, p2_i and label conditionals
    p1(y|i), p2(y|i):  0.5 * sum_i sqrt(p1_i p2_i) * sum_y |p1(y|i) - p2(y|i)|.
    Bins where either side is empty contribute zero; bins empty on exactly
    one side are tallied in the returned warning counter.
    """
    i1 = bin_indices(s1.scales, edges)
    i2 = bin_indices(s2.scales, edges)
    n_bins = len(np.asarray(edges)) - 1
    n_labels = int(max(s1.labels.max(), s2.labels.max())) + 1

    j1 = np.zeros((n_bins, n_labels))
    j2 = np.zeros((n_bins, n_labels))
    np.add.at(j1, (i1, s1.labels), 1.0)
    np.add.at(j2, (i2, s2.labels), 1.0)
    c1 = j1.sum(axis=1)
    c2 = j2.sum(axis=1)
    p1 = c1 / s1.n
    p2 = c2 / s2.n

    both = (c1 > 0) & (c2 > 0)
    n_undefined = int(((c1 > 0) ^ (c2 > 0)).sum())
    if not both.any():
        return 0.0, n_undefined
    cond1 = j1[both] / c1[both, None]
    cond2 = j2[both] / c2[both, None]
    tv_y = np.abs(cond1 - cond2).sum(axis=1)
    value = 0.5 * float((np.sqrt(p1[both] * p2[both]) * tv_y).sum())
    return value, n_undefined


@dataclass
class ShiftReport:
    """Shift measures between two labeled scale populations."""

    name1: str
    name2: str
    n1: int
    n2: int
    bins: int
    div_div: float
    div_cor: float
    kl: float
    div_div_shared: float  # total variation restricted to the shared support
    n_undefined_bins: int
    label_proxy: str = "count-quartile"
    kl_objects: float | None = None

    def to_record(self) -> dict:
        return {
            "name1": self.name1,
            "name2": self.name2,
            "n1": self.n1,
            "n2": self.n2,
            "bins": self.bins,
            "div_div": self.div_div,
            "div_cor": self.div_cor,
            "kl": self.kl,
            "div_div_shared": self.div_div_shared,
            "n_undefined_bins": self.n_undefined_bins,
            "label_proxy": self.label_proxy,
            "kl_objects": self.kl_objects,
        }


def shift_report(
    s1: LabeledScaleSamples,
    s2: LabeledScaleSamples,
    bins: int = DEFAULT_BINS,
    smoothing: float = DEFAULT_SMOOTHING,
    edges=None,
    label_proxy: str = "count-quartile",
) -> ShiftReport:
    """Full shift report over shared edges built from the pooled samples."""
    if edges is None:
        edges = shared_edges(s1.scales, s2.scales, bins=bins)
    h1 = histogram(s1.scales, edges)
    h2 = histogram(s2.scales, edges)
    div_cor, n_undef = correlation_shift(s1, s2, edges)
    return ShiftReport(
        name1=s1.name,
        name2=s2.name,
        n1=s1.n,
        n2=s2.n,
        bins=len(edges) - 1,
        div_div=diversity_shift(h1, h2),
        div_cor=div_cor,
        kl=kl_divergence(h1, h2, smoothing),
        div_div_shared=restricted_diversity_shift(h1, h2),
        n_undefined_bins=n_undef,
        label_proxy=label_proxy,
    )


def count_quartile_cuts(*count_sets) -> np.ndarray:
    """Quartile cutpoints of the pooled per-sample counts."""
    pooled = np.concatenate([np.asarray(c, dtype=float).ravel() for c in count_sets])
    if pooled.size == 0:
        raise ContractError("count_quartile_cuts needs at least one count")
    return np.quantile(pooled, [0.25, 0.5, 0.75])


def quantize_counts(counts, cuts) -> np.ndarray:
    """Class in 0..3 per count; values equal to a cutpoint go up."""
    return np.searchsorted(np.asarray(cuts, dtype=float),
                           np.asarray(counts, dtype=float), side="right").astype(int)


def labeled_pair_from_patches(
    patches1: list[Patch], patches2: list[Patch], name1: str = "d1", name2: str = "d2"
) -> tuple[LabeledScaleSamples, LabeledScaleSamples]:
    """Patch-level samples for a domain pair.

    The sample value is the patch mean scale; the label is the patch object
    count quantized into four quartile classes computed on the pooled pair,
    a proxy for the semantic label conditional.
    """
    counts1 = np.array([p.n_objects for p in patches1], dtype=float)
    counts2 = np.array([p.n_objects for p in patches2], dtype=float)
    cuts = count_quartile_cuts(counts1, counts2)
    return (
        LabeledScaleSamples(name1, [p.mean_scale for p in patches1],
                            quantize_counts(counts1, cuts)),
        LabeledScaleSamples(name2, [p.mean_scale for p in patches2],
                            quantize_counts(counts2, cuts)),
    )


def object_scale_kl(
    patches1: list[Patch],
    patches2: list[Patch],
    bins: int = DEFAULT_BINS,
    smoothing: float = DEFAULT_SMOOTHING,
) -> float:
    """KL divergence between the pooled object-scale distributions.

    Works at the object level (every box in every patch), where domain
    supports genuinely overlap, unlike patch means which are separated into
    disjoint intervals by construction.  Bins are log-spaced: object
    scales span decades, and a linear grid would pool most of the mass
    into a handful of bins.
    """
    sc1 = np.concatenate([p.scales for p in patches1])
    sc2 = np.concatenate([p.scales for p in patches2])
    edges = geometric_edges(sc1, sc2, bins=bins)
    return kl_divergence(histogram(sc1, edges), histogram(sc2, edges), smoothing)


@dataclass
class BootstrapShift:
    n_boot: int
    div_div_mean: float
    div_div_se: float
    div_cor_mean: float
    div_cor_se: float

    def to_record(self) -> dict:
        return {
            "n_boot": self.n_boot,
            "div_div_mean": self.div_div_mean,
            "div_div_se": self.div_div_se,
            "div_cor_mean": self.div_cor_mean,
            "div_cor_se": self.div_cor_se,
        }


def bootstrap_shift(
    s1: LabeledScaleSamples,
    s2: LabeledScaleSamples,
    bins: int = DEFAULT_BINS,
    n_boot: int = 200,
    seed: int = 0,
    edges=None,
) -> BootstrapShift:
    """Bootstrap standard errors of both shift measures.

    Samples are resampled with replacement within each side; the bin edges
    stay fixed at the pooled-data edges so only sampling noise varies.
    """
    if n_boot < 2:
        raise ContractError("n_boot must be >= 2")
    if edges is None:
        edges = shared_edges(s1.scales, s2.scales, bins=bins)
    rng = np.random.default_rng(seed)
    div_vals = np.empty(n_boot)
    cor_vals = np.empty(n_boot)
    for b in range(n_boot):
        k1 = rng.integers(0, s1.n, s1.n)
        k2 = rng.integers(0, s2.n, s2.n)
        r1 = LabeledScaleSamples(s1.name, s1.scales[k1], s1.labels[k1])
        r2 = LabeledScaleSamples(s2.name, s2.scales[k2], s2.labels[k2])
        h1 = histogram(r1.scales, edges)
        h2 = histogram(r2.scales, edges)
        div_vals[b] = diversity_shift(h1, h2)
        cor_vals[b], _ = correlation_shift(r1, r2, edges)
    return BootstrapShift(
        n_boot=n_boot,
        div_div_mean=float(div_vals.mean()),
        div_div_se=float(div_vals.std(ddof=1)),
        div_cor_mean=float(cor_vals.mean()),
        div_cor_se=float(cor_vals.std(ddof=1)),
    )
