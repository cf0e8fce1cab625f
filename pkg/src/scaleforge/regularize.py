"""Image-level scale regularization: segmentation into vertical patches.

Objects in an image are clustered in (normalized scale, normalized
vertical position) space by a bivariate mixture; each surviving component
yields one horizontal strip ("patch") of the image.  Patches whose scale
statistics look degenerate are filtered before benchmark construction.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .annot import ImageRecord, SCHEMA_VERSION, scale_of
from .errors import ContractError, ParseError
from .mixture import GmmModel2D, responsibilities

logger = logging.getLogger(__name__)

FILTER_PRESETS = ("main-text", "appendix")


@dataclass(frozen=True)
class FilterConfig:
    """Patch acceptance rules.

    ``spread_rule`` selects how scale spread disqualifies a patch:
    ``"std"`` rejects when std > ratio * mean, ``"var"`` when
    variance > ratio * mean.  ``weight_floor`` and ``min_objects`` govern
    which mixture components survive segmentation.  ``min_object_height``
    optionally drops individual objects below a pixel height before the
    patch rules run (off by default).
    """

    min_height: float = 100.0
    spread_rule: str = "std"
    spread_ratio: float = 3.0
    weight_floor: float = 0.05
    min_objects: int = 10
    min_object_height: float | None = None

    def __post_init__(self):
        if self.spread_rule not in ("std", "var"):
            raise ContractError("spread_rule must be 'std' or 'var'")
        if self.min_height < 0 or self.spread_ratio <= 0:
            raise ContractError("min_height must be >= 0 and spread_ratio > 0")

    @classmethod
    def preset(cls, name: str, **overrides) -> "FilterConfig":
        if name == "main-text":
            return cls(**overrides)
        if name == "appendix":
            overrides.setdefault("spread_rule", "var")
            overrides.setdefault("spread_ratio", 2.0)
            return cls(**overrides)
        raise ContractError(f"unknown filter preset {name!r}; expected one of {FILTER_PRESETS}")

    def to_record(self) -> dict:
        return {
            "min_height": self.min_height,
            "spread_rule": self.spread_rule,
            "spread_ratio": self.spread_ratio,
            "weight_floor": self.weight_floor,
            "min_objects": self.min_objects,
            "min_object_height": self.min_object_height,
        }


@dataclass(eq=False)
class Patch:
    """A horizontal strip of one image and the objects inside it."""

    pid: str
    image_id: str
    component: int
    y_top: float
    y_bottom: float
    object_indices: np.ndarray
    scales: np.ndarray
    heights: np.ndarray

    @property
    def n_objects(self) -> int:
        return int(self.scales.size)

    @property
    def height(self) -> float:
        return float(self.y_bottom - self.y_top)

    @property
    def mean_scale(self) -> float:
        return float(self.scales.mean())

    @property
    def std_scale(self) -> float:
        return float(self.scales.std())

    def to_record(self) -> dict:
        return {
            "pid": self.pid,
            "image_id": self.image_id,
            "component": self.component,
            "y_top": self.y_top,
            "y_bottom": self.y_bottom,
            "object_indices": [int(i) for i in self.object_indices],
            "scales": [float(s) for s in self.scales],
            "heights": [float(h) for h in self.heights],
            "n_objects": self.n_objects,
            "mean_scale": self.mean_scale,
            "std_scale": self.std_scale,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Patch":
        return cls(
            pid=rec["pid"],
            image_id=rec["image_id"],
            component=int(rec["component"]),
            y_top=float(rec["y_top"]),
            y_bottom=float(rec["y_bottom"]),
            object_indices=np.asarray(rec["object_indices"], dtype=int),
            scales=np.asarray(rec["scales"], dtype=float),
            heights=np.asarray(rec["heights"], dtype=float),
        )


def normalize_features(img: ImageRecord) -> np.ndarray:
    """Per-object (scale, vertical) features normalized into [0, 1].

    Scale is divided by the image's maximum object scale and the vertical
    coordinate (box center) by the image height.
    """
    if not img.boxes:
        return np.empty((0, 2))
    scales = np.array([scale_of(b) for b in img.boxes], dtype=float)
    cy = np.array([b.y + b.h / 2.0 for b in img.boxes], dtype=float)
    return np.column_stack([scales / scales.max(), cy / float(img.height)])


def segment_image(img: ImageRecord, model: GmmModel2D, cfg: FilterConfig) -> list[Patch]:
    """Split an image into vertical patches from a fitted mixture.

    Objects take their argmax-responsibility component; components below
    ``cfg.weight_floor`` or with fewer than ``cfg.min_objects`` members are
    dropped and their objects move to the vertically nearest surviving
    component.  Each surviving component spans its members' vertical range
    expanded by one mean object height; overlapping spans of vertically
    adjacent components are separated at the midpoint of their vertical
    means.  Objects are finally binned by the disjoint spans (right-open),
    so a patch may shed objects cut off by a midpoint; patches cover a
    subset of the objects and never share one.

    Returns patches ordered top to bottom; empty when no component
    survives.
    """
    feats = normalize_features(img)
    n = feats.shape[0]
    if n == 0:
        return []
    resp = responsibilities(model, feats)
    labels = np.argmax(resp, axis=1)
    counts = np.bincount(labels, minlength=model.K)
    surviving = [
        k for k in range(model.K)
        if model.weights[k] >= cfg.weight_floor and counts[k] >= cfg.min_objects
    ]
    if not surviving:
        logger.debug("image %s: no surviving components", img.id)
        return []

    mu_y = model.means[:, 1]
    surviving = sorted(surviving, key=lambda k: (mu_y[k], k))
    dropped = ~np.isin(labels, surviving)
    if dropped.any():
        dist = np.abs(feats[dropped, 1][:, None] - mu_y[surviving][None, :])
        labels[dropped] = np.asarray(surviving)[np.argmin(dist, axis=1)]

    cy = feats[:, 1] * float(img.height)
    obj_h = np.array([b.h for b in img.boxes], dtype=float)

    spans: list[list] = []  # [component, top, bottom]
    for k in surviving:
        sel = labels == k
        if not sel.any():
            continue
        margin = float(obj_h[sel].mean())
        top = max(0.0, float(cy[sel].min()) - margin)
        bottom = min(float(img.height), float(cy[sel].max()) + margin)
        spans.append([k, top, bottom])

    for a, b in zip(spans, spans[1:]):
        if a[2] > b[1]:  # overlap: cut at the midpoint of the vertical means
            cut = (mu_y[a[0]] + mu_y[b[0]]) / 2.0 * float(img.height)
            a[2] = min(a[2], cut)
            b[1] = max(b[1], cut)

    patches: list[Patch] = []
    floor = -np.inf
    scales = np.array([scale_of(b) for b in img.boxes], dtype=float)
    for k, top, bottom in spans:
        top = max(top, floor)
        if bottom <= top:
            continue
        floor = bottom
        sel = (cy >= top) & (cy < bottom)
        if not sel.any():
            continue
        idx = np.flatnonzero(sel)
        patches.append(
            Patch(
                pid=f"{img.id}#p{len(patches)}",
                image_id=img.id,
                component=int(k),
                y_top=float(top),
                y_bottom=float(bottom),
                object_indices=idx,
                scales=scales[idx],
                heights=obj_h[idx],
            )
        )
    return patches


def filter_patches(
    patches: list[Patch], cfg: FilterConfig
) -> tuple[list[Patch], list[tuple[Patch, str]]]:
    """Apply the patch acceptance rules.

    Returns (kept, rejected) where each rejected entry carries its reason:
    ``"empty"`` (all objects removed by the object-height floor),
    ``"height"`` (patch shorter than ``min_height``), or ``"spread"``
    (scale spread beyond the configured rule).
    """
    kept: list[Patch] = []
    rejected: list[tuple[Patch, str]] = []
    for patch in patches:
        p = patch
        if cfg.min_object_height is not None:
            keep = p.heights >= cfg.min_object_height
            if not keep.any():
                rejected.append((patch, "empty"))
                continue
            if not keep.all():
                p = replace(
                    patch,
                    object_indices=p.object_indices[keep],
                    scales=p.scales[keep],
                    heights=p.heights[keep],
                )
        if p.height < cfg.min_height:
            rejected.append((p, "height"))
            continue
        mean, std = p.mean_scale, p.std_scale
        spread = std if cfg.spread_rule == "std" else std * std
        if spread > cfg.spread_ratio * mean:
            rejected.append((p, "spread"))
            continue
        kept.append(p)
    return kept, rejected


def write_patches(patches: list[Patch], path: str | Path, name: str = "patches") -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"kind": "patches", "name": name,
                             "schema_version": SCHEMA_VERSION}, sort_keys=True) + "\n")
        for p in patches:
            fh.write(json.dumps(p.to_record(), sort_keys=True) + "\n")


def read_patches(path: str | Path) -> list[Patch]:
    path = Path(path)
    patches: list[Patch] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=lineno) from exc
            if rec.get("kind") == "patches":
                continue
            try:
                patches.append(Patch.from_record(rec))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad patch record: {exc}", path=str(path), line=lineno) from exc
    return patches
