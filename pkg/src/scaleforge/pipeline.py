"""End-to-end orchestration shared by the library surface and the CLI.

The heavy stage is per-image mixture fitting; it parallelizes over a
process pool when asked.  Each image draws its own seed from the run seed
and a hash of the image id, so results are identical regardless of worker
count or completion order.
"""

from __future__ import annotations

import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .annot import DatasetBundle, ImageRecord
from .errors import ContractError
from .mixture import EmConfig, GmmModel2D, fit_gmm_2d
from .partition import BenchmarkManifest
from .regularize import FilterConfig, Patch, filter_patches, normalize_features, segment_image
from .shift import ShiftReport, labeled_pair_from_patches, object_scale_kl, shift_report

logger = logging.getLogger(__name__)


def image_seed(base_seed: int, image_id: str) -> int:
    """Stable per-image seed derived from the run seed and the image id."""
    ss = np.random.SeedSequence([base_seed, zlib.crc32(image_id.encode("utf-8"))])
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass
class RegularizeResult:
    """Outcome of segmenting and filtering a whole dataset."""

    patches: list[Patch]
    rejected: list[tuple[Patch, str]]
    models: dict[str, GmmModel2D]
    n_images: int
    n_empty: int  # images yielding no patch before filtering

    @property
    def n_rejected(self) -> int:
        return len(self.rejected)


def _regularize_one(
    img: ImageRecord, em_cfg: EmConfig, filter_cfg: FilterConfig, apply_filter: bool
) -> tuple[str, GmmModel2D | None, list[Patch], list[tuple[Patch, str]]]:
    feats = normalize_features(img)
    if feats.shape[0] == 0:
        return img.id, None, [], []
    cfg = replace(em_cfg, seed=image_seed(em_cfg.seed, img.id))
    model = fit_gmm_2d(feats, cfg)
    patches = segment_image(img, model, filter_cfg)
    if apply_filter:
        kept, rejected = filter_patches(patches, filter_cfg)
    else:
        kept, rejected = patches, []
    return img.id, model, kept, rejected


def _star(args):
    return _regularize_one(*args)


def regularize_bundle(
    bundle: DatasetBundle,
    em_cfg: EmConfig | None = None,
    filter_cfg: FilterConfig | None = None,
    apply_filter: bool = True,
    threads: int = 1,
) -> RegularizeResult:
    """Segment every image of a dataset into patches and filter them.

    ``threads`` > 1 fans images out to a process pool; outputs are
    identical to the sequential run.
    """
    em_cfg = em_cfg or EmConfig()
    filter_cfg = filter_cfg or FilterConfig()
    if threads < 1:
        raise ContractError("threads must be >= 1")
    jobs = [(img, em_cfg, filter_cfg, apply_filter) for img in bundle.images]
    if threads == 1 or len(jobs) < 2:
        outputs = [_regularize_one(*job) for job in jobs]
    else:
        chunk = max(1, len(jobs) // (threads * 8))
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(_star, jobs, chunksize=chunk))
    patches: list[Patch] = []
    rejected: list[tuple[Patch, str]] = []
    models: dict[str, GmmModel2D] = {}
    n_empty = 0
    for image_id, model, kept, rej in outputs:
        if model is not None:
            models[image_id] = model
        if model is None or (not kept and not rej):
            n_empty += 1
        patches.extend(kept)
        rejected.extend(rej)
    logger.info(
        "regularized %d images: %d patches kept, %d rejected, %d empty",
        len(bundle.images), len(patches), len(rejected), n_empty,
    )
    return RegularizeResult(
        patches=patches, rejected=rejected, models=models,
        n_images=len(bundle.images), n_empty=n_empty,
    )


def patches_by_id(patches: list[Patch]) -> dict[str, Patch]:
    index: dict[str, Patch] = {}
    for p in patches:
        if p.pid in index:
            raise ContractError(f"duplicate patch id {p.pid!r}")
        index[p.pid] = p
    return index


def domain_patches(manifest: BenchmarkManifest, patches: list[Patch]) -> dict[str, list[Patch]]:
    """Resolve each domain's patch ids against a patch list."""
    index = patches_by_id(patches)
    resolved: dict[str, list[Patch]] = {}
    for dom in manifest.domains:
        missing = [pid for pid in dom.patch_ids if pid not in index]
        if missing:
            raise ContractError(
                f"domain {dom.name!r} references unknown patch ids: {missing[:5]}"
            )
        resolved[dom.name] = [index[pid] for pid in dom.patch_ids]
    return resolved


@dataclass
class ShiftMatrix:
    """Pairwise shift reports between the domains of one manifest."""

    names: list[str]
    reports: list[ShiftReport] = field(default_factory=list)

    def matrix(self, attr: str) -> np.ndarray:
        n = len(self.names)
        out = np.zeros((n, n))
        pos = {name: i for i, name in enumerate(self.names)}
        for rep in self.reports:
            i, j = pos[rep.name1], pos[rep.name2]
            value = getattr(rep, attr)
            out[i, j] = out[j, i] = value if value is not None else np.nan
        return out

    def adjacent(self, attr: str) -> list[float]:
        pos = {name: i for i, name in enumerate(self.names)}
        wanted = {(i, i + 1) for i in range(len(self.names) - 1)}
        values = {}
        for rep in self.reports:
            key = (pos[rep.name1], pos[rep.name2])
            if key in wanted:
                values[key] = getattr(rep, attr)
        return [values[(i, i + 1)] for i in range(len(self.names) - 1)]


def benchmark_shift_matrix(
    manifest: BenchmarkManifest,
    patches: list[Patch],
    bins: int = 256,
) -> ShiftMatrix:
    """Shift reports for every unordered domain pair of a benchmark."""
    resolved = domain_patches(manifest, patches)
    names = [dom.name for dom in manifest.domains]
    out = ShiftMatrix(names=names)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            p1, p2 = resolved[names[i]], resolved[names[j]]
            samples1, samples2 = labeled_pair_from_patches(p1, p2, names[i], names[j])
            rep = shift_report(samples1, samples2, bins=bins)
            rep.kl_objects = object_scale_kl(p1, p2, bins=bins)
            out.reports.append(rep)
    return out
