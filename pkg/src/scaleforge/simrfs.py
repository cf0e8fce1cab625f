"""Random-finite-set scene simulator with controllable scale laws.

A scene draws a Poisson number of objects; each object gets an i.i.d.
horizontal position, a vertical position from a configurable law, and a
box area ("scale") from a configurable scale law with multiplicative
lognormal jitter.  Boxes are squares of side sqrt(scale) clamped to the
frame.  Every scene records generating truth (band ids, true scales) in a
sidecar, and all sampling is driven by splittable seeds so corpora are
bit-reproducible and scenes are independent.

Draw order per scene: scene multiplier, object count, horizontal
positions, vertical positions, scale-law values, jitter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import poisson as poisson_dist

from .annot import BoxAnnotation, DatasetBundle, ImageRecord, SCHEMA_VERSION, clamp_box, scale_of
from .errors import ContractError


@dataclass(frozen=True)
class ConstantScale:
    c0: float

    def __post_init__(self):
        if self.c0 <= 0:
            raise ContractError("constant scale must be positive")

    def base_scales(self, rng: np.random.Generator, y_frac: np.ndarray) -> np.ndarray:
        return np.full(y_frac.shape, float(self.c0))

    def to_record(self) -> dict:
        return {"kind": "constant", "c0": self.c0}


@dataclass(frozen=True)
class LinearScale:
    """Scale grows linearly with normalized vertical position: a*y + b."""

    a: float
    b: float

    def __post_init__(self):
        if self.b <= 0 or self.a + self.b <= 0:
            raise ContractError("linear scale law must stay positive on [0, 1]")

    def base_scales(self, rng: np.random.Generator, y_frac: np.ndarray) -> np.ndarray:
        return self.a * y_frac + self.b

    def to_record(self) -> dict:
        return {"kind": "linear_in_y", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class LognormalScale:
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ContractError("lognormal sigma must be >= 0")

    def base_scales(self, rng: np.random.Generator, y_frac: np.ndarray) -> np.ndarray:
        return rng.lognormal(self.mu, self.sigma, y_frac.shape[0])

    def to_record(self) -> dict:
        return {"kind": "lognormal", "mu": self.mu, "sigma": self.sigma}


def scale_law_from_record(rec: dict):
    kind = rec.get("kind")
    if kind == "constant":
        return ConstantScale(float(rec["c0"]))
    if kind == "linear_in_y":
        return LinearScale(float(rec["a"]), float(rec["b"]))
    if kind == "lognormal":
        return LognormalScale(float(rec["mu"]), float(rec["sigma"]))
    raise ContractError(f"unknown scale law kind {kind!r}")


@dataclass(frozen=True)
class UniformVertical:
    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        return rng.random(n), np.zeros(n, dtype=int)

    def to_record(self) -> dict:
        return {"kind": "uniform"}


@dataclass(frozen=True)
class Band:
    center: float
    width: float
    weight: float

    def __post_init__(self):
        if not (0.0 <= self.center <= 1.0 and self.width > 0 and self.weight > 0):
            raise ContractError("band needs center in [0,1], width > 0, weight > 0")


@dataclass(frozen=True)
class BandedVertical:
    bands: tuple[Band, ...]

    def __post_init__(self):
        if not self.bands:
            raise ContractError("at least one band is required")
        total = sum(b.weight for b in self.bands)
        if abs(total - 1.0) > 1e-9:
            raise ContractError(f"band weights must sum to 1, got {total}")

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        w = np.array([b.weight for b in self.bands])
        ids = rng.choice(len(self.bands), size=n, p=w / w.sum())
        centers = np.array([b.center for b in self.bands])[ids]
        widths = np.array([b.width for b in self.bands])[ids]
        y = centers + (rng.random(n) - 0.5) * widths
        return np.clip(y, 0.0, 1.0 - 1e-9), ids

    def to_record(self) -> dict:
        return {
            "kind": "banded",
            "bands": [{"center": b.center, "width": b.width, "weight": b.weight}
                      for b in self.bands],
        }


def vertical_law_from_record(rec: dict):
    kind = rec.get("kind")
    if kind == "uniform":
        return UniformVertical()
    if kind == "banded":
        return BandedVertical(tuple(
            Band(float(b["center"]), float(b["width"]), float(b["weight"]))
            for b in rec["bands"]
        ))
    raise ContractError(f"unknown vertical law kind {kind!r}")


@dataclass(frozen=True)
class SceneConfig:
    """Generating law of one scene family.

    ``jitter`` is the log-space standard deviation of per-object
    multiplicative scale noise.  ``scene_scale_spread`` (log-space std of a
    per-scene multiplier) and ``count_inverse`` (expected count inversely
    proportional to that multiplier) couple count to scale across scenes,
    which makes label conditionals scale-dependent.
    """

    width: int = 1024
    height: int = 768
    lam: float = 80.0
    scale_law: object = field(default_factory=lambda: LognormalScale(math.log(1600.0), 0.5))
    vertical_law: object = field(default_factory=UniformVertical)
    jitter: float = 0.1
    scene_scale_spread: float = 0.0
    count_inverse: bool = False

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ContractError("scene dimensions must be positive")
        if self.lam <= 0:
            raise ContractError("lam must be positive")
        if self.jitter < 0 or self.scene_scale_spread < 0:
            raise ContractError("noise levels must be >= 0")

    def to_record(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "lam": self.lam,
            "scale_law": self.scale_law.to_record(),
            "vertical_law": self.vertical_law.to_record(),
            "jitter": self.jitter,
            "scene_scale_spread": self.scene_scale_spread,
            "count_inverse": self.count_inverse,
        }


@dataclass
class SceneTruth:
    image_id: str
    n: int
    lam: float
    multiplier: float
    band_ids: np.ndarray
    true_scales: np.ndarray
    target_scale: float | None = None

    def to_record(self) -> dict:
        return {
            "image_id": self.image_id,
            "n": self.n,
            "lam": self.lam,
            "multiplier": self.multiplier,
            "band_ids": [int(b) for b in self.band_ids],
            "true_scales": [float(s) for s in self.true_scales],
            "target_scale": self.target_scale,
        }


@dataclass
class SyntheticBundle:
    bundle: DatasetBundle
    truths: dict[str, SceneTruth] = field(default_factory=dict)

    def write_oracle(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"kind": "oracle", "name": self.bundle.name,
                                 "schema_version": SCHEMA_VERSION}, sort_keys=True) + "\n")
            for img in self.bundle.images:
                fh.write(json.dumps(self.truths[img.id].to_record(), sort_keys=True) + "\n")


def sample_scene(cfg: SceneConfig, seed, image_id: str = "scene_00000") -> tuple[ImageRecord, SceneTruth]:
    """Draw one scene; ``seed`` may be an int or a SeedSequence."""
    rng = np.random.default_rng(seed)
    multiplier = float(np.exp(rng.normal(0.0, cfg.scene_scale_spread)))
    lam = cfg.lam / multiplier if cfg.count_inverse else cfg.lam
    n = int(rng.poisson(lam))
    xs = rng.uniform(0.0, float(cfg.width), n)
    y_frac, band_ids = cfg.vertical_law.sample(rng, n)
    base = cfg.scale_law.base_scales(rng, y_frac)
    true_scales = base * multiplier * np.exp(rng.normal(0.0, cfg.jitter, n))

    ys = y_frac * float(cfg.height)
    sides = np.sqrt(true_scales)
    boxes = []
    for x, y, s in zip(xs, ys, sides):
        box, _ = clamp_box(
            BoxAnnotation(float(x - s / 2), float(y - s / 2), float(s), float(s)),
            cfg.width, cfg.height,
        )
        boxes.append(box)
    img = ImageRecord(id=image_id, width=cfg.width, height=cfg.height, boxes=boxes)
    truth = SceneTruth(image_id=image_id, n=n, lam=float(lam), multiplier=multiplier,
                       band_ids=band_ids, true_scales=true_scales)
    return img, truth


def make_bundle(
    cfg: SceneConfig, n_scenes: int, seed: int = 0, name: str = "synth", stream: int = 0
) -> SyntheticBundle:
    """Generate ``n_scenes`` independent scenes under one config.

    Scene i draws from SeedSequence([seed, stream, i]), so bundles are
    reproducible and distinct streams never collide.
    """
    if n_scenes < 1:
        raise ContractError("n_scenes must be >= 1")
    out = SyntheticBundle(bundle=DatasetBundle(name=name))
    for i in range(n_scenes):
        img, truth = sample_scene(cfg, np.random.SeedSequence([seed, stream, i]),
                                  image_id=f"{name}_{i:05d}")
        out.bundle.images.append(img)
        out.truths[img.id] = truth
    return out


def make_domain_pair(
    cfg_a: SceneConfig, cfg_b: SceneConfig, n_scenes: int, seed: int = 0,
    names: tuple[str, str] = ("A", "B"),
) -> tuple[SyntheticBundle, SyntheticBundle]:
    """Two bundles whose generating laws differ only in the scale law."""
    if replace(cfg_a, scale_law=cfg_b.scale_law) != cfg_b:
        raise ContractError("domain pair configs must differ only in scale_law")
    a = make_bundle(cfg_a, n_scenes, seed=seed, name=names[0], stream=0)
    b = make_bundle(cfg_b, n_scenes, seed=seed, name=names[1], stream=1)
    return a, b


@dataclass(frozen=True)
class CorpusConfig:
    """Benchmark corpus: mean scale sweeps a range, count runs inversely.

    Scene i targets mean scale t_i on a geometric sweep from ``scale_min``
    to ``scale_max``; its scale law is linear in y from ``span_low * t_i``
    to ``span_high * t_i``.  Expected count follows
    lam * (geometric-mid / t_i)^count_exponent with lognormal noise, so
    count and scale are negatively rank-correlated without being
    deterministic.  A ``noisy_fraction`` of scenes is contaminated: each
    object independently has its scale multiplied by a factor in
    [``contam_lo``, ``contam_hi``] with probability ``contam_rate``,
    mimicking images that mix crowds at wildly different scales.  A single
    such outlier pushes a patch's scale std past three times its mean, so
    these patches exist for the patch filter to remove.
    """

    base: SceneConfig = field(default_factory=lambda: SceneConfig(lam=40.0))
    scale_min: float = 50.0
    scale_max: float = 5000.0
    span_low: float = 0.2
    span_high: float = 1.8
    count_exponent: float = 0.5
    count_noise: float = 0.5
    lam_min: float = 10.0
    lam_max: float = 400.0
    noisy_fraction: float = 0.12
    contam_rate: float = 0.04
    contam_lo: float = 50.0
    contam_hi: float = 200.0

    def __post_init__(self):
        if not 0 < self.scale_min < self.scale_max:
            raise ContractError("need 0 < scale_min < scale_max")
        if not 0 < self.span_low < self.span_high:
            raise ContractError("need 0 < span_low < span_high")
        if not 0 < self.lam_min <= self.lam_max:
            raise ContractError("need 0 < lam_min <= lam_max")
        if not 0.0 <= self.noisy_fraction <= 1.0:
            raise ContractError("noisy_fraction must be in [0, 1]")
        if not 0.0 <= self.contam_rate <= 1.0:
            raise ContractError("contam_rate must be in [0, 1]")
        if not 1.0 < self.contam_lo <= self.contam_hi:
            raise ContractError("need 1 < contam_lo <= contam_hi")

    def to_record(self) -> dict:
        return {
            "base": self.base.to_record(),
            "scale_min": self.scale_min,
            "scale_max": self.scale_max,
            "span_low": self.span_low,
            "span_high": self.span_high,
            "count_exponent": self.count_exponent,
            "count_noise": self.count_noise,
            "lam_min": self.lam_min,
            "lam_max": self.lam_max,
            "noisy_fraction": self.noisy_fraction,
            "contam_rate": self.contam_rate,
            "contam_lo": self.contam_lo,
            "contam_hi": self.contam_hi,
        }


def make_benchmark_corpus(
    cfg: CorpusConfig, n_scenes: int, seed: int = 0, name: str = "corpus"
) -> SyntheticBundle:
    """Generate the scale-sweep corpus used for benchmark construction."""
    if n_scenes < 1:
        raise ContractError("n_scenes must be >= 1")
    targets = np.geomspace(cfg.scale_min, cfg.scale_max, n_scenes)
    s_mid = math.sqrt(cfg.scale_min * cfg.scale_max)
    corpus_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    count_noise = corpus_rng.normal(0.0, cfg.count_noise, n_scenes)
    noisy = corpus_rng.random(n_scenes) < cfg.noisy_fraction

    out = SyntheticBundle(bundle=DatasetBundle(name=name))
    for i, t in enumerate(targets):
        lam = cfg.base.lam * (s_mid / t) ** cfg.count_exponent * math.exp(count_noise[i])
        lam = float(np.clip(lam, cfg.lam_min, cfg.lam_max))
        scene_cfg = replace(
            cfg.base,
            lam=lam,
            scale_law=LinearScale(a=float(t * (cfg.span_high - cfg.span_low)),
                                  b=float(t * cfg.span_low)),
        )
        img, truth = sample_scene(scene_cfg, np.random.SeedSequence([seed, 0, i]),
                                  image_id=f"{name}_{i:05d}")
        truth.target_scale = float(t)
        if noisy[i] and truth.n:
            _contaminate_scene(img, truth, cfg,
                               np.random.SeedSequence([seed, 2, i]))
        out.bundle.images.append(img)
        out.truths[img.id] = truth
    return out


def _contaminate_scene(img: ImageRecord, truth: SceneTruth, cfg: CorpusConfig,
                       seed: np.random.SeedSequence) -> None:
    """Blow up a random subset of a scene's objects in place.

    Each object's scale is multiplied, with probability ``cfg.contam_rate``,
    by a log-uniform factor in [contam_lo, contam_hi]; its box is rebuilt
    around the same center and re-clamped.
    """
    rng = np.random.default_rng(seed)
    mask = rng.random(truth.n) < cfg.contam_rate
    factors = np.exp(rng.uniform(math.log(cfg.contam_lo), math.log(cfg.contam_hi),
                                 truth.n))
    for j in np.flatnonzero(mask):
        old = img.boxes[j]
        cx, cy = old.x + old.w / 2.0, old.y + old.h / 2.0
        truth.true_scales[j] *= factors[j]
        side = math.sqrt(truth.true_scales[j])
        img.boxes[j], _ = clamp_box(
            BoxAnnotation(cx - side / 2.0, cy - side / 2.0, side, side),
            img.width, img.height,
        )


def scene_summary(sb: SyntheticBundle) -> tuple[np.ndarray, np.ndarray]:
    """(count, measured mean scale) per non-empty scene, in scene order."""
    counts, means = [], []
    for img in sb.bundle.images:
        if img.boxes:
            counts.append(len(img.boxes))
            means.append(float(np.mean([scale_of(b) for b in img.boxes])))
    return np.asarray(counts, dtype=float), np.asarray(means, dtype=float)


def poisson_gof(counts, lam: float, min_expected: float = 5.0) -> tuple[float, float, int]:
    """Chi-square goodness-of-fit of observed counts against Poisson(lam).

    Count values are pooled greedily into consecutive groups with expected
    frequency >= ``min_expected`` (the right tail folds into the last
    group).  Returns (chi2, p_value, degrees_of_freedom); lam is taken as
    known, so dof = groups - 1.
    """
    counts = np.asarray(counts, dtype=int).ravel()
    if counts.size == 0:
        raise ContractError("poisson_gof needs at least one count")
    if lam <= 0:
        raise ContractError("lam must be positive")
    hi = int(counts.max())
    probs = poisson_dist.pmf(np.arange(hi + 1), lam)
    probs[-1] += poisson_dist.sf(hi, lam)
    observed = np.bincount(counts, minlength=hi + 1).astype(float)

    groups_obs, groups_exp = [], []
    acc_o = acc_e = 0.0
    n = counts.size
    for o, p in zip(observed, probs):
        acc_o += o
        acc_e += p * n
        if acc_e >= min_expected:
            groups_obs.append(acc_o)
            groups_exp.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and groups_exp:
        groups_obs[-1] += acc_o
        groups_exp[-1] += acc_e
    if len(groups_exp) < 2:
        raise ContractError("too few count groups for a goodness-of-fit test")
    obs = np.asarray(groups_obs)
    exp = np.asarray(groups_exp)
    exp *= obs.sum() / exp.sum()  # guard tiny truncation drift
    chi2 = float(((obs - exp) ** 2 / exp).sum())
    from scipy.stats import chi2 as chi2_dist

    dof = len(obs) - 1
    return chi2, float(chi2_dist.sf(chi2, dof)), dof
