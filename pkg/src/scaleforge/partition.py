"""Domain construction: equal-mass partition, Gaussian reshaping, trials.

Patches are split along mean scale into M+1 equal-mass regions; the
largest-scale region is dropped and each remaining region is subsampled so
its mean-scale profile follows a Gaussian centered on the region midpoint.
The Gaussian widths are searched jointly so retained counts balance within
a tolerance.  The result is a versioned benchmark manifest with train/val
splits and leave-one-out trials.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BuildError, ContractError
from .regularize import Patch
from .stats import DEFAULT_BINS, EmpiricalDistribution, geometric_edges, histogram

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
DEFAULT_EPSILON = 0.02
DEFAULT_VAL_FRACTION = 0.05
SIGMA_GRID_SIZE = 32
DOMAIN_NAMES_M4 = ("Tiny", "Small", "Normal", "Big")


def equal_mass_boundaries(dist: EmpiricalDistribution, M: int) -> np.ndarray:
    """Interior boundaries of the M equal-mass intervals of ``dist``.

    Boundaries are the k/M quantiles (k = 1..M-1) of the histogram with
    linear interpolation inside bins; a boundary that falls exactly on a
    cumulative edge is that edge (intervals are right-open downstream).
    """
    if M < 1:
        raise ContractError("M must be >= 1")
    if M > dist.n_samples:
        raise ContractError(f"M={M} exceeds the {dist.n_samples} available samples")
    mass = np.asarray(dist.mass, dtype=float)
    total = mass.sum()
    if total <= 0:
        raise ContractError("distribution has no mass")
    mass = mass / total
    cum = np.concatenate([[0.0], np.cumsum(mass)])
    cum[-1] = 1.0
    edges = dist.edges
    bounds = np.empty(M - 1)
    for j, q in enumerate((np.arange(1, M) / M)):
        i = int(np.searchsorted(cum, q, side="right")) - 1
        i = min(i, len(mass) - 1)
        if cum[i] == q:
            bounds[j] = edges[i]
        else:
            t = (q - cum[i]) / mass[i]
            bounds[j] = edges[i] + t * (edges[i + 1] - edges[i])
    return bounds


def reshape_domain(
    members: list[Patch], center: float, sigma: float | None, seed: int = 0
) -> tuple[list[Patch], list[Patch]]:
    """Subsample patches so mean scales follow a Gaussian around ``center``.

    Each patch is kept with probability exp(-(c - center)^2 / (2 sigma^2))
    where c is its mean scale (peak-normalized, so patches at the center
    always survive).  Acceptance draws come from ``seed`` in a canonical
    member order (mean scale, then pid), so identical member multisets
    reshape identically regardless of list order.  ``sigma=None`` keeps
    everything.  Returns (accepted, rejected) in the input order.
    """
    if sigma is not None and not sigma > 0:
        raise ContractError("sigma must be positive (or None to keep all members)")
    if sigma is None or math.isinf(sigma):
        return list(members), []
    order = sorted(range(len(members)),
                   key=lambda i: (members[i].mean_scale, members[i].pid))
    u = np.random.default_rng(seed).random(len(members))
    accept = np.zeros(len(members), dtype=bool)
    for draw, i in enumerate(order):
        c = members[i].mean_scale
        g = math.exp(-((c - center) ** 2) / (2.0 * sigma * sigma))
        accept[i] = u[draw] <= g
    accepted = [m for i, m in enumerate(members) if accept[i]]
    rejected = [m for i, m in enumerate(members) if not accept[i]]
    return accepted, rejected


@dataclass
class SigmaSearchResult:
    sigmas: list[float]
    retained: list[int]
    feasible: bool
    imbalance: float  # max pairwise count difference / total retained

    def to_record(self) -> dict:
        return {
            "sigmas": self.sigmas,
            "retained": self.retained,
            "feasible": self.feasible,
            "imbalance": self.imbalance,
        }


def search_sigmas(
    members_per_domain: list[list[Patch]],
    intervals: list[tuple[float, float]],
    epsilon: float = DEFAULT_EPSILON,
    seed: int = 0,
    grid_size: int = SIGMA_GRID_SIZE,
) -> SigmaSearchResult:
    """Grid-search reshaping widths that balance retained counts.

    Each domain gets a log-spaced sigma grid spanning
    [interval_width / 20, interval_width * 5].  Retention is evaluated
    with the same acceptance draws as :func:`reshape_domain`, so retained
    counts are non-decreasing in sigma.  A target-count sweep picks, per
    domain, the grid sigma whose retention lands closest to the target;
    the feasible assignment (pairwise count imbalance <= epsilon * total)
    with maximum total retention wins.  If no target is feasible the
    minimal-imbalance assignment is returned with ``feasible=False``.
    """
    if epsilon < 0:
        raise ContractError("epsilon must be >= 0")
    if len(members_per_domain) != len(intervals):
        raise ContractError("one interval per domain is required")
    m_domains = len(members_per_domain)
    if m_domains == 0:
        raise ContractError("at least one domain is required")
    for members, (lo, hi) in zip(members_per_domain, intervals):
        if not members:
            raise BuildError(f"domain over [{lo}, {hi}) has no members")
        if not hi > lo:
            raise ContractError("intervals must have positive width")

    if m_domains == 1:
        n = len(members_per_domain[0])
        width = intervals[0][1] - intervals[0][0]
        return SigmaSearchResult([float(width * 5)], [n], True, 0.0)

    grids = []
    counts = []
    for members, (lo, hi) in zip(members_per_domain, intervals):
        width = hi - lo
        center = (lo + hi) / 2.0
        grid = np.geomspace(width / 20.0, width * 5.0, grid_size)
        grids.append(grid)
        counts.append(
            np.array([len(reshape_domain(members, center, float(s), seed)[0]) for s in grid])
        )

    targets = sorted({int(c) for row in counts for c in row}, reverse=True)
    t_cap = min(int(row.max()) for row in counts)
    best = None       # (total, sigmas, retained)
    fallback = None   # (imbalance, -total, sigmas, retained)
    for target in [t for t in targets if 0 < t <= t_cap]:
        sigmas, retained = [], []
        for grid, row in zip(grids, counts):
            gap = np.abs(row - target)
            # among equally close retentions prefer the larger, then the
            # smaller sigma; indices ascend with sigma
            j = min(range(len(row)), key=lambda i: (gap[i], -row[i], i))
            sigmas.append(float(grid[j]))
            retained.append(int(row[j]))
        total = sum(retained)
        imb = (max(retained) - min(retained)) / total if total else math.inf
        if imb <= epsilon:
            if best is None or total > best[0]:
                best = (total, sigmas, retained)
        if fallback is None or (imb, -total) < (fallback[0], fallback[1]):
            fallback = (imb, -total, sigmas, retained)

    if best is not None:
        total, sigmas, retained = best
        imb = (max(retained) - min(retained)) / total
        return SigmaSearchResult(sigmas, retained, True, imb)
    imb, _, sigmas, retained = fallback
    logger.warning("no sigma assignment meets imbalance <= %g; best achieved %g", epsilon, imb)
    return SigmaSearchResult(sigmas, retained, False, imb)


@dataclass
class DomainSpec:
    name: str
    lo: float
    hi: float
    sigma: float | None
    patch_ids: list[str]
    pdf: EmpiricalDistribution

    @property
    def n_patches(self) -> int:
        return len(self.patch_ids)

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "interval": [self.lo, self.hi],
            "sigma": self.sigma,
            "n_patches": self.n_patches,
            "patch_ids": self.patch_ids,
            "pdf": self.pdf.to_record(),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "DomainSpec":
        return cls(
            name=rec["name"],
            lo=float(rec["interval"][0]),
            hi=float(rec["interval"][1]),
            sigma=None if rec["sigma"] is None else float(rec["sigma"]),
            patch_ids=list(rec["patch_ids"]),
            pdf=EmpiricalDistribution.from_record(rec["pdf"]),
        )


@dataclass
class BenchmarkManifest:
    M: int
    seed: int
    epsilon: float
    val_fraction: float
    bins: int
    balanced: bool
    imbalance: float
    domains: list[DomainSpec] = field(default_factory=list)
    splits: dict = field(default_factory=dict)  # name -> {"train": [...], "val": [...]}
    dropped_region: list[str] = field(default_factory=list)
    reshape_rejected: list[str] = field(default_factory=list)

    def domain(self, name: str) -> DomainSpec:
        for d in self.domains:
            if d.name == name:
                return d
        raise ContractError(f"no domain named {name!r}")

    def to_record(self) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "kind": "benchmark",
            "M": self.M,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "val_fraction": self.val_fraction,
            "bins": self.bins,
            "balanced": self.balanced,
            "imbalance": self.imbalance,
            "domains": [d.to_record() for d in self.domains],
            "splits": self.splits,
            "dropped_region": self.dropped_region,
            "reshape_rejected": self.reshape_rejected,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "BenchmarkManifest":
        if rec.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise ContractError(
                f"unsupported benchmark schema_version {rec.get('schema_version')!r}"
            )
        return cls(
            M=int(rec["M"]),
            seed=int(rec["seed"]),
            epsilon=float(rec["epsilon"]),
            val_fraction=float(rec["val_fraction"]),
            bins=int(rec["bins"]),
            balanced=bool(rec["balanced"]),
            imbalance=float(rec["imbalance"]),
            domains=[DomainSpec.from_record(d) for d in rec["domains"]],
            splits=rec["splits"],
            dropped_region=list(rec["dropped_region"]),
            reshape_rejected=list(rec["reshape_rejected"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_record(), sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "BenchmarkManifest":
        return cls.from_record(json.loads(Path(path).read_text(encoding="utf-8")))


def _domain_names(M: int) -> list[str]:
    if M == len(DOMAIN_NAMES_M4):
        return list(DOMAIN_NAMES_M4)
    return [f"domain-{i + 1}" for i in range(M)]


def build_benchmark(
    patches: list[Patch],
    M: int = 4,
    bins: int = DEFAULT_BINS,
    epsilon: float = DEFAULT_EPSILON,
    val_fraction: float = DEFAULT_VAL_FRACTION,
    seed: int = 0,
) -> BenchmarkManifest:
    """Construct the M-domain benchmark from filtered patches.

    Mean scales are histogrammed on a log-spaced grid (scale spans decades,
    so a linear grid would starve the quantile interpolation) and split
    into M+1 equal-mass regions; the top region is dropped and recorded,
    the rest are reshaped with searched sigmas.  For
    M=4 the domains are named Tiny/Small/Normal/Big in ascending scale.
    Each domain gets a seeded train/val split (``val_fraction`` of members,
    at least one each when the domain has two or more patches).  When the
    sigma search cannot balance retained counts within epsilon the manifest
    is still built and flagged ``balanced=False``.
    """
    if M < 1:
        raise ContractError("M must be >= 1")
    if not 0 <= val_fraction < 1:
        raise ContractError("val_fraction must be in [0, 1)")
    ids = [p.pid for p in patches]
    if len(set(ids)) != len(ids):
        raise ContractError("patch ids must be unique")
    cbar = np.array([p.mean_scale for p in patches], dtype=float)
    if cbar.size < M + 1:
        raise ContractError(f"need at least M+1={M + 1} patches, got {cbar.size}")

    if not np.all(cbar > 0):
        raise ContractError("patch mean scales must be positive")
    edges = geometric_edges(cbar, bins=bins)
    dist = histogram(cbar, edges)
    bounds = equal_mass_boundaries(dist, M + 1)

    region_of = np.searchsorted(bounds, cbar, side="right")
    regions: list[list[Patch]] = [[] for _ in range(M + 1)]
    for patch, r in zip(patches, region_of):
        regions[int(r)].append(patch)
    dropped = [p.pid for p in regions[M]]

    lo0 = float(edges[0])
    intervals = [(lo0 if m == 0 else float(bounds[m - 1]), float(bounds[m])) for m in range(M)]
    for m, region in enumerate(regions[:M]):
        if not region:
            raise BuildError(f"region {m} over {intervals[m]} is empty before reshaping")

    if M == 1:
        search = SigmaSearchResult([None], [len(regions[0])], True, 0.0)
    else:
        search = search_sigmas(regions[:M], intervals, epsilon=epsilon, seed=seed)

    names = _domain_names(M)
    domains: list[DomainSpec] = []
    splits: dict = {}
    reshape_rejected: list[str] = []
    for m in range(M):
        lo, hi = intervals[m]
        center = (lo + hi) / 2.0
        accepted, rejected = reshape_domain(regions[m], center, search.sigmas[m], seed)
        reshape_rejected.extend(p.pid for p in rejected)
        if not accepted:
            raise BuildError(f"domain {names[m]} is empty after reshaping")
        pdf = histogram([p.mean_scale for p in accepted], edges)
        domains.append(
            DomainSpec(name=names[m], lo=lo, hi=hi, sigma=search.sigmas[m],
                       patch_ids=[p.pid for p in accepted], pdf=pdf)
        )
        splits[names[m]] = _split_domain(domains[-1].patch_ids, val_fraction, seed, m)

    if not search.feasible:
        logger.warning("benchmark built with imbalance %.4f > epsilon %.4f",
                       search.imbalance, epsilon)
    return BenchmarkManifest(
        M=M, seed=seed, epsilon=epsilon, val_fraction=val_fraction, bins=bins,
        balanced=search.feasible, imbalance=search.imbalance,
        domains=domains, splits=splits, dropped_region=dropped,
        reshape_rejected=reshape_rejected,
    )


def _split_domain(pids: list[str], val_fraction: float, seed: int, index: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    order = rng.permutation(sorted(pids))
    n = len(pids)
    n_val = int(round(val_fraction * n))
    if n >= 2:
        n_val = min(max(n_val, 1), n - 1)
    else:
        n_val = 0
    val = sorted(order[:n_val].tolist())
    train = sorted(order[n_val:].tolist())
    return {"train": train, "val": val}


@dataclass
class Trial:
    name: str
    target: str
    sources: list[str]
    train: list[str]
    val: list[str]
    test: list[str]

    def to_record(self) -> dict:
        return {
            "name": self.name,
            "target": self.target,
            "sources": self.sources,
            "train": self.train,
            "val": self.val,
            "test": self.test,
        }


def leave_one_out_trials(manifest: BenchmarkManifest) -> list[Trial]:
    """One trial per domain: train on the others, test on the whole target."""
    if manifest.M < 2:
        raise ContractError("leave-one-out trials need at least two domains")
    trials = []
    names = [d.name for d in manifest.domains]
    for target in names:
        sources = [n for n in names if n != target]
        train: list[str] = []
        val: list[str] = []
        for s in sources:
            train.extend(manifest.splits[s]["train"])
            val.extend(manifest.splits[s]["val"])
        test = sorted(manifest.domain(target).patch_ids)
        trials.append(
            Trial(name=f"target-{target}", target=target, sources=sources,
                  train=sorted(train), val=sorted(val), test=test)
        )
    return trials
