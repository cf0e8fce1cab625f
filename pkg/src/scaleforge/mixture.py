"""Gaussian mixture fitting by expectation-maximization.

One- and two-dimensional mixtures with seeded k-means initialization,
variance flooring, pruning of numerically dead components, and canonical
component ordering, so a fit is a pure function of (data, config).

The component log densities are quadratic polynomials in the coordinates,
so each E-step evaluates one (n, d') @ (d', K) product against a
precomputed design matrix of coordinate monomials; the same matrix yields
every M-step sufficient statistic.  This keeps per-iteration cost at a
handful of vector operations, which matters when fitting one small
mixture per image over many thousands of images.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
PRUNE_WEIGHT = 1e-6

INIT_METHODS = ("kmeans", "random-responsibility")


@dataclass(frozen=True)
class EmConfig:
    """EM settings.

    ``tol`` is a relative tolerance on the mean log-likelihood change
    between iterations (with an absolute floor of the same size when the
    log-likelihood sits near zero).  ``restarts`` independent seeded runs
    are fitted and the best final log-likelihood is kept.
    """

    K: int = 5
    max_iters: int = 200
    tol: float = 1e-6
    var_floor: float = 1e-6
    seed: int = 0
    init: str = "kmeans"
    restarts: int = 3

    def __post_init__(self):
        if self.K < 1:
            raise ContractError("K must be >= 1")
        if self.max_iters < 1:
            raise ContractError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ContractError("tol must be positive")
        if self.seed < 0:
            raise ContractError("seed must be non-negative")
        if self.init not in INIT_METHODS:
            raise ContractError(f"init must be one of {INIT_METHODS}")
        if self.restarts < 1:
            raise ContractError("restarts must be >= 1")
        if self.var_floor <= 0:
            raise ContractError("var_floor must be positive")


def _logpdf_1d(x: np.ndarray, means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    z = (x[:, None] - means[None, :]) / stds
    return -0.5 * z * z - np.log(stds) - 0.5 * LOG_2PI


def _logpdf_2d(x: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    a, b, d = covs[:, 0, 0], covs[:, 0, 1], covs[:, 1, 1]
    det = a * d - b * b
    dx0 = x[:, 0, None] - means[None, :, 0]
    dx1 = x[:, 1, None] - means[None, :, 1]
    quad = (d * dx0 * dx0 - 2.0 * b * dx0 * dx1 + a * dx1 * dx1) / det
    return -0.5 * (quad + np.log(det)) - LOG_2PI


@dataclass
class GmmModel1D:
    """Mixture of K univariate normals; components sorted by mean."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    ll_trace: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def K(self) -> int:
        return len(self.weights)

    def component_log_pdf(self, x) -> np.ndarray:
        return _logpdf_1d(np.asarray(x, dtype=float).ravel(), self.means, self.stds)

    def pdf(self, x) -> np.ndarray:
        return np.exp(_log_density(self, x))

    def to_record(self) -> dict:
        return {
            "kind": "gmm1d",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "converged": self.converged,
            "final_ll": self.ll_trace[-1] if self.ll_trace else None,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "GmmModel1D":
        return cls(
            weights=np.asarray(rec["weights"], dtype=float),
            means=np.asarray(rec["means"], dtype=float),
            stds=np.asarray(rec["stds"], dtype=float),
            converged=bool(rec.get("converged", False)),
        )


@dataclass
class GmmModel2D:
    """Mixture of K bivariate normals; components sorted by vertical mean.

    Points are (scale, vertical) pairs, so ``means[:, 1]`` is the vertical
    coordinate used for canonical ordering.
    """

    weights: np.ndarray
    means: np.ndarray  # (K, 2)
    covs: np.ndarray   # (K, 2, 2)
    ll_trace: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def K(self) -> int:
        return len(self.weights)

    def component_log_pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != 2:
            raise ContractError("points must have shape (n, 2)")
        return _logpdf_2d(x, self.means, self.covs)

    def pdf(self, x) -> np.ndarray:
        return np.exp(_log_density(self, x))

    def to_record(self) -> dict:
        return {
            "kind": "gmm2d",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
            "converged": self.converged,
            "final_ll": self.ll_trace[-1] if self.ll_trace else None,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "GmmModel2D":
        return cls(
            weights=np.asarray(rec["weights"], dtype=float),
            means=np.asarray(rec["means"], dtype=float),
            covs=np.asarray(rec["covs"], dtype=float),
            converged=bool(rec.get("converged", False)),
        )


def _log_joint(model, x) -> np.ndarray:
    return model.component_log_pdf(x) + np.log(model.weights)


def _log_density(model, x) -> np.ndarray:
    lp = _log_joint(model, x)
    m = lp.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(lp - m).sum(axis=1, keepdims=True))).ravel()


def responsibilities(model, x) -> np.ndarray:
    """Posterior component membership; rows sum to 1."""
    lp = _log_joint(model, x)
    m = lp.max(axis=1, keepdims=True)
    p = np.exp(lp - m)
    return p / p.sum(axis=1, keepdims=True)


def log_likelihood(model, x) -> float:
    """Mean per-sample log density under the mixture."""
    return float(np.mean(_log_density(model, x)))


def _kmeans(x: np.ndarray, K: int, rng: np.random.Generator, iters: int = 8) -> np.ndarray:
    """Lloyd iterations with greedy farthest-point seeding; returns labels."""
    n = x.shape[0]
    centers = np.empty((K, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2min = ((x - centers[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        centers[k] = x[int(np.argmax(d2min))]
        np.minimum(d2min, ((x - centers[k]) ** 2).sum(axis=1), out=d2min)
    labels = np.full(n, -1, dtype=int)
    for _ in range(iters):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        onehot = np.zeros((n, K))
        onehot[np.arange(n), labels] = 1.0
        counts = onehot.sum(axis=0)
        sums = onehot.T @ x
        empty = counts == 0
        if empty.any():
            centers[empty] = x[int(np.argmax(d2.min(axis=1)))]
        occupied = ~empty
        centers[occupied] = sums[occupied] / counts[occupied, None]
    return labels


def _init_resp(x: np.ndarray, K: int, cfg: EmConfig, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    if cfg.init == "kmeans":
        labels = _kmeans(x, K, rng)
        resp = np.zeros((n, K))
        resp[np.arange(n), labels] = 1.0
        resp += 1e-3  # keeps starved clusters fittable
    else:
        resp = rng.random((n, K)) + 1e-3
    return resp / resp.sum(axis=1, keepdims=True)


def _em(x: np.ndarray, design: np.ndarray, cfg: EmConfig, mstep, log_joint):
    """Shared EM driver over flat parameter tuples.

    ``mstep(design, resp)`` produces a parameter tuple whose first entry is
    the weight vector; ``log_joint(design, params)`` evaluates the joint
    log density including log weights.  Both are width-agnostic: handed the
    horizontally stacked responsibilities of several restarts they fit all
    of them at once, since every formula is elementwise per component.
    Returns (params, trace, converged) of the best restart by final mean
    log-likelihood; ties keep the earliest restart.

    Distinct restarts therefore run in lockstep: one (n, R*K) pass per
    iteration instead of R separate loops.  Each restart keeps its own
    trace and convergence point (its parameters are snapshotted and held
    stationary once it converges).  A restart that triggers component
    pruning drops out of the batch and reruns alone, since pruning changes
    its width.  Duplicate initializations (different seeds often reach the
    same k-means labeling) are fitted once.
    """
    K = _effective_K(cfg, x)
    n = x.shape[0]
    inv_n = 1.0 / n

    def run(params):
        # reference single-restart loop; also the pruning path
        trace: list[float] = []
        converged = False
        prev = None
        for _ in range(cfg.max_iters):
            lp = log_joint(design, params)
            m = lp.max(axis=1, keepdims=True)
            np.subtract(lp, m, out=lp)
            np.exp(lp, out=lp)
            s = lp.sum(axis=1, keepdims=True)
            ll = float((np.log(s) + m).sum() * inv_n)
            trace.append(ll)
            if prev is not None and abs(ll - prev) <= cfg.tol * max(1.0, abs(prev)):
                converged = True
                break
            prev = ll
            np.divide(lp, s, out=lp)
            params = mstep(design, lp)
            if params[0].min() < PRUNE_WEIGHT:
                params = _prune_params(params)
        return params, trace, converged

    inits: list[np.ndarray] = []
    order: list[int] = []
    seen: dict[bytes, int] = {}
    for restart in range(cfg.restarts):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, restart]))
        resp0 = _init_resp(x, K, cfg, rng)
        key = resp0.tobytes()
        if key not in seen:
            seen[key] = len(inits)
            inits.append(resp0)
        order.append(seen[key])

    R = len(inits)
    results: list[tuple | None]
    if R == 1:
        results = [run(mstep(design, inits[0]))]
    else:
        results = [None] * R
        rerun = [False] * R
        params = mstep(design, np.concatenate(inits, axis=1))
        traces: list[list[float]] = [[] for _ in range(R)]
        active = np.ones(R, dtype=bool)

        def snapshot(r: int) -> tuple:
            return tuple(p[r * K:(r + 1) * K].copy() for p in params)

        def freeze(r: int, converged: bool) -> None:
            results[r] = (snapshot(r), traces[r], converged)
            active[r] = False

        for _ in range(cfg.max_iters):
            lp = log_joint(design, params)
            lp3 = lp.reshape(n, R, K)
            m = lp3.max(axis=2, keepdims=True)
            np.subtract(lp3, m, out=lp3)
            np.exp(lp3, out=lp3)
            s = lp3.sum(axis=2, keepdims=True)
            ll = (np.log(s) + m).sum(axis=(0, 2)) * inv_n
            for r in range(R):
                if not active[r]:
                    continue
                trace = traces[r]
                prev = trace[-1] if trace else None
                trace.append(float(ll[r]))
                if prev is not None and abs(trace[-1] - prev) <= cfg.tol * max(1.0, abs(prev)):
                    freeze(r, True)
            if not active.any():
                break
            np.divide(lp3, s, out=lp3)
            frozen = [(r, snapshot(r)) for r in range(R) if results[r] is not None]
            params = mstep(design, lp)
            w_blocks = params[0].reshape(R, K)
            for r in range(R):
                if active[r] and w_blocks[r].min() < PRUNE_WEIGHT:
                    # pruning changes this restart's width: redo it alone
                    rerun[r] = True
                    freeze(r, False)
                    frozen.append((r, results[r][0]))
            for r, vals in frozen:
                for p, v in zip(params, vals):
                    p[r * K:(r + 1) * K] = v
        for r in range(R):
            if results[r] is None:
                freeze(r, False)
            if rerun[r]:
                results[r] = run(mstep(design, inits[r]))

    best = None
    for idx in order:
        cand = results[idx]
        if best is None or cand[1][-1] > best[1][-1]:
            best = cand
    return best


def _effective_K(cfg: EmConfig, x: np.ndarray) -> int:
    n = x.shape[0]
    K = min(cfg.K, n)
    if K < cfg.K:
        logger.debug("reducing K from %d to %d (only %d samples)", cfg.K, K, n)
    return K


def _prune_params(params):
    w = params[0]
    keep = w >= PRUNE_WEIGHT
    if keep.all() or not keep.any():
        return params
    logger.warning("pruning %d mixture component(s) below weight %g",
                   int((~keep).sum()), PRUNE_WEIGHT)
    w = w[keep]
    return (w / w.sum(),) + tuple(p[keep] for p in params[1:])


def fit_gmm_1d(samples, cfg: EmConfig = EmConfig()) -> GmmModel1D:
    """Fit a univariate mixture.

    With K = 1 the result is the closed-form fixed point: the sample mean
    and population standard deviation.  K is reduced to the sample count
    when there are fewer samples than requested components.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ContractError("cannot fit a mixture to zero samples")
    if not np.all(np.isfinite(x)):
        raise ContractError("samples must be finite")
    floor = cfg.var_floor

    if min(cfg.K, x.size) == 1:
        std = float(np.sqrt(max(np.var(x), floor)))
        model = GmmModel1D(weights=np.ones(1), means=np.array([x.mean()]),
                           stds=np.array([std]), converged=True)
        model.ll_trace = [log_likelihood(model, x)]
        return model

    inv_n = 1.0 / x.size
    # design columns: 1, x, x^2
    design = np.column_stack([np.ones_like(x), x, x * x])

    def mstep(d, resp):
        stat = resp.T @ d  # (K, 3): counts, sums, squared sums
        nk = stat[:, 0]
        mu = stat[:, 1] / nk
        var = np.maximum(stat[:, 2] / nk - mu * mu, floor)
        return nk * inv_n, mu, var

    def log_joint(d, params):
        w, mu, var = params
        inv = 1.0 / var
        const = np.log(w) - 0.5 * (mu * mu * inv + np.log(var) + LOG_2PI)
        coef = np.empty((3, len(w)))
        coef[0] = const
        coef[1] = mu * inv
        coef[2] = -0.5 * inv
        return d @ coef

    (w, mu, var), trace, converged = _em(x[:, None], design, cfg, mstep, log_joint)
    order = np.argsort(mu, kind="stable")
    return GmmModel1D(weights=w[order], means=mu[order], stds=np.sqrt(var[order]),
                      ll_trace=trace, converged=converged)


def fit_gmm_2d(points, cfg: EmConfig = EmConfig()) -> GmmModel2D:
    """Fit a bivariate mixture to (scale, vertical) feature pairs."""
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ContractError("points must have shape (n, 2)")
    if x.shape[0] == 0:
        raise ContractError("cannot fit a mixture to zero samples")
    if not np.all(np.isfinite(x)):
        raise ContractError("points must be finite")

    floor = cfg.var_floor
    eye_floor = floor * np.eye(2)

    if min(cfg.K, x.shape[0]) == 1:
        mean = x.mean(axis=0)
        dx = x - mean
        cov = dx.T @ dx / x.shape[0] + eye_floor
        model = GmmModel2D(weights=np.ones(1), means=mean[None, :],
                           covs=cov[None, :, :], converged=True)
        model.ll_trace = [log_likelihood(model, x)]
        return model

    inv_n = 1.0 / x.shape[0]
    x0, x1 = x[:, 0], x[:, 1]
    # design columns: 1, x0, x1, x0^2, x0*x1, x1^2
    design = np.column_stack([np.ones_like(x0), x0, x1, x0 * x0, x0 * x1, x1 * x1])

    def mstep(d, resp):
        stat = resp.T @ d  # (K, 6) sufficient statistics
        nk = stat[:, 0]
        mu0 = stat[:, 1] / nk
        mu1 = stat[:, 2] / nk
        c00 = np.maximum(stat[:, 3] / nk - mu0 * mu0, 0.0) + floor
        c01 = stat[:, 4] / nk - mu0 * mu1
        c11 = np.maximum(stat[:, 5] / nk - mu1 * mu1, 0.0) + floor
        return nk * inv_n, mu0, mu1, c00, c01, c11

    def log_joint(d, params):
        w, mu0, mu1, c00, c01, c11 = params
        det = c00 * c11 - c01 * c01
        ia = c11 / det
        ib = -c01 / det
        id_ = c00 / det
        lin0 = ia * mu0 + ib * mu1
        lin1 = ib * mu0 + id_ * mu1
        const = (np.log(w) - 0.5 * (mu0 * lin0 + mu1 * lin1 + np.log(det))
                 - LOG_2PI)
        coef = np.empty((6, len(w)))
        coef[0] = const
        coef[1] = lin0
        coef[2] = lin1
        coef[3] = -0.5 * ia
        coef[4] = -ib
        coef[5] = -0.5 * id_
        return d @ coef

    (w, mu0, mu1, c00, c01, c11), trace, converged = _em(x, design, cfg, mstep, log_joint)
    order = np.argsort(mu1, kind="stable")
    means = np.column_stack([mu0, mu1])[order]
    covs = np.empty((len(w), 2, 2))
    covs[:, 0, 0] = c00[order]
    covs[:, 0, 1] = covs[:, 1, 0] = c01[order]
    covs[:, 1, 1] = c11[order]
    return GmmModel2D(weights=w[order], means=means, covs=covs,
                      ll_trace=trace, converged=converged)
