"""Annotation data model and manifest I/O.

The native manifest is UTF-8 line-delimited JSON: a header object with an
explicit schema version followed by one image record per line::

    {"kind": "dataset", "name": "...", "schema_version": 1}
    {"id": "img_0", "width": 1024, "height": 768, "boxes": [{"x": 1.0, ...}], "meta": {}}

Floats round-trip at full precision.  Prediction files use the same layout
with ``{"id": ..., "points": [{"x", "y", "conf"}]}`` records.

A CSV importer (`csv-points-boxes`) accepts one box or point per row;
point rows receive a square pseudo-box (16 px side by default) flagged
``synthetic`` so scale statistics can exclude them.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_POINT_BOX_SIDE = 16.0

DATASET_FORMATS = ("native-json", "csv-points-boxes")
_CSV_COLUMNS = ("image_id", "width", "height", "x", "y", "w", "h")


@dataclass(frozen=True)
class BoxAnnotation:
    """Axis-aligned box, top-left corner plus extent, in pixels."""

    x: float
    y: float
    w: float
    h: float
    synthetic: bool = False

    def to_record(self) -> dict:
        rec = {"x": self.x, "y": self.y, "w": self.w, "h": self.h}
        if self.synthetic:
            rec["synthetic"] = True
        return rec


@dataclass
class ImageRecord:
    id: str
    width: int
    height: int
    boxes: list[BoxAnnotation] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "width": self.width,
            "height": self.height,
            "boxes": [b.to_record() for b in self.boxes],
            "meta": self.meta,
        }


@dataclass
class DatasetBundle:
    name: str
    images: list[ImageRecord] = field(default_factory=list)

    def __iter__(self):
        return iter(self.images)

    def __len__(self) -> int:
        return len(self.images)


@dataclass(frozen=True)
class PredictedPoint:
    x: float
    y: float
    conf: float

    def to_record(self) -> dict:
        return {"x": self.x, "y": self.y, "conf": self.conf}


@dataclass
class PredictionSet:
    """Predicted point sets keyed by image id."""

    name: str
    points: dict[str, list[PredictedPoint]] = field(default_factory=dict)


@dataclass(frozen=True)
class Violation:
    image_id: str
    rule: str
    detail: str

    def __str__(self) -> str:
        return f"{self.image_id}: {self.rule} ({self.detail})"

    def to_record(self) -> dict:
        return {"image_id": self.image_id, "rule": self.rule, "detail": self.detail}


def scale_of(box: BoxAnnotation) -> float:
    """Scale of an object: box area in px^2."""
    return box.w * box.h


def diagonal_of(box: BoxAnnotation) -> float:
    """Box diagonal length; used as the localization match threshold."""
    return math.hypot(box.w, box.h)


def center_of(box: BoxAnnotation) -> tuple[float, float]:
    return box.x + box.w / 2.0, box.y + box.h / 2.0


def pseudo_box(x: float, y: float, side: float = DEFAULT_POINT_BOX_SIDE) -> BoxAnnotation:
    """Square box centered on a point, for point-only annotations."""
    return BoxAnnotation(x - side / 2.0, y - side / 2.0, side, side, synthetic=True)


def clamp_box(box: BoxAnnotation, width: float, height: float) -> tuple[BoxAnnotation, bool]:
    """Intersect a box with the image frame.

    Returns the clamped box and whether anything changed.  A box entirely
    outside the frame comes back with non-positive extent; validation
    reports it rather than silently dropping the object.
    """
    if box.x >= 0.0 and box.y >= 0.0 and box.x + box.w <= width and box.y + box.h <= height:
        return box, False
    x0 = max(box.x, 0.0)
    y0 = max(box.y, 0.0)
    x1 = min(box.x + box.w, float(width))
    y1 = min(box.y + box.h, float(height))
    return BoxAnnotation(x0, y0, x1 - x0, y1 - y0, synthetic=box.synthetic), True


def clamp_bundle(bundle: DatasetBundle) -> int:
    """Clamp every box in place; returns the number of boxes touched."""
    n_clamped = 0
    for img in bundle.images:
        new_boxes = []
        for box in img.boxes:
            clamped, changed = clamp_box(box, img.width, img.height)
            n_clamped += changed
            new_boxes.append(clamped if changed else box)
        img.boxes = new_boxes
    if n_clamped:
        logger.warning("clamped %d box(es) straddling image borders", n_clamped)
    return n_clamped


def validate_bundle(bundle: DatasetBundle) -> list[Violation]:
    """Check the data model invariants; returns every violation found."""
    violations: list[Violation] = []
    seen: set[str] = set()
    for img in bundle.images:
        if img.id in seen:
            violations.append(Violation(img.id, "unique-id", "duplicate image id"))
        seen.add(img.id)
        if not (img.width > 0 and img.height > 0):
            violations.append(
                Violation(img.id, "image-size", f"width={img.width} height={img.height}")
            )
            continue
        for i, box in enumerate(img.boxes):
            values = (box.x, box.y, box.w, box.h)
            if not all(math.isfinite(v) for v in values):
                violations.append(Violation(img.id, "finite", f"box {i}: {values}"))
                continue
            if box.w <= 0 or box.h <= 0:
                violations.append(
                    Violation(img.id, "box-size", f"box {i}: w={box.w} h={box.h}")
                )
            if box.x < 0 or box.y < 0 or box.x + box.w > img.width or box.y + box.h > img.height:
                violations.append(
                    Violation(img.id, "box-bounds", f"box {i}: {values} outside frame")
                )
    return violations


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_dataset(bundle: DatasetBundle, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(_dump({"kind": "dataset", "name": bundle.name,
                        "schema_version": SCHEMA_VERSION}) + "\n")
        for img in bundle.images:
            fh.write(_dump(img.to_record()) + "\n")


def _parse_json_line(raw: str, path: str, lineno: int) -> dict:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=lineno) from exc
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", path=path, line=lineno)
    return obj


def _box_from_record(rec: dict, path: str, lineno: int) -> BoxAnnotation:
    try:
        return BoxAnnotation(
            float(rec["x"]), float(rec["y"]), float(rec["w"]), float(rec["h"]),
            synthetic=bool(rec.get("synthetic", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad box record {rec!r}", path=path, line=lineno) from exc


def _parse_native(path: Path, validate: bool) -> DatasetBundle:
    name = path.stem
    images: list[ImageRecord] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            obj = _parse_json_line(raw, str(path), lineno)
            if "schema_version" in obj and "id" not in obj:
                if obj["schema_version"] != SCHEMA_VERSION:
                    raise ParseError(
                        f"unsupported schema_version {obj['schema_version']}",
                        path=str(path), line=lineno,
                    )
                name = obj.get("name", name)
                continue
            for key in ("id", "width", "height"):
                if key not in obj:
                    raise ParseError(f"record missing field {key!r}", path=str(path), line=lineno)
            boxes = [_box_from_record(b, str(path), lineno) for b in obj.get("boxes", [])]
            images.append(
                ImageRecord(
                    id=str(obj["id"]),
                    width=int(obj["width"]),
                    height=int(obj["height"]),
                    boxes=boxes,
                    meta=obj.get("meta", {}),
                )
            )
    return _finish_bundle(DatasetBundle(name=name, images=images), validate)


def _parse_csv(path: Path, point_box_side: float, validate: bool) -> DatasetBundle:
    images: dict[str, ImageRecord] = {}
    n_points = 0
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(_CSV_COLUMNS[:3]).issubset(reader.fieldnames):
            raise ParseError(
                f"csv-points-boxes needs columns {_CSV_COLUMNS[:3]}", path=str(path), line=1
            )
        for lineno, row in enumerate(reader, start=2):
            img_id = (row.get("image_id") or "").strip()
            if not img_id:
                raise ParseError("empty image_id", path=str(path), line=lineno)
            try:
                if img_id not in images:
                    images[img_id] = ImageRecord(
                        id=img_id, width=int(row["width"]), height=int(row["height"])
                    )
                img = images[img_id]
                xs, ys = (row.get("x") or "").strip(), (row.get("y") or "").strip()
                ws, hs = (row.get("w") or "").strip(), (row.get("h") or "").strip()
                if not xs and not ys:
                    continue  # image declaration without objects
                x, y = float(xs), float(ys)
                if ws or hs:
                    img.boxes.append(BoxAnnotation(x, y, float(ws), float(hs)))
                else:
                    img.boxes.append(pseudo_box(x, y, point_box_side))
                    n_points += 1
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad row: {exc}", path=str(path), line=lineno) from exc
    if n_points:
        logger.info("converted %d point annotation(s) to synthetic boxes", n_points)
    return _finish_bundle(DatasetBundle(name=path.stem, images=list(images.values())), validate)


def _finish_bundle(bundle: DatasetBundle, validate: bool) -> DatasetBundle:
    clamp_bundle(bundle)
    if validate:
        violations = validate_bundle(bundle)
        if violations:
            raise ValidationError(violations)
    return bundle


def parse_dataset(
    path: str | Path,
    fmt: str = "native-json",
    point_box_side: float = DEFAULT_POINT_BOX_SIDE,
    validate: bool = True,
) -> DatasetBundle:
    """Read a dataset manifest.

    ``fmt`` is one of ``native-json`` or ``csv-points-boxes``.  Boxes that
    straddle the image border are clamped (with a warning).  When
    ``validate`` is set, any remaining invariant violations raise
    :class:`~scaleforge.errors.ValidationError` listing all of them.
    """
    path = Path(path)
    if fmt == "native-json":
        return _parse_native(path, validate)
    if fmt == "csv-points-boxes":
        return _parse_csv(path, point_box_side, validate)
    raise ParseError(f"unknown dataset format {fmt!r}; expected one of {DATASET_FORMATS}")


def write_predictions(preds: PredictionSet, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(_dump({"kind": "predictions", "name": preds.name,
                        "schema_version": SCHEMA_VERSION}) + "\n")
        for img_id in preds.points:
            fh.write(_dump({"id": img_id,
                            "points": [p.to_record() for p in preds.points[img_id]]}) + "\n")


def parse_predictions(path: str | Path) -> PredictionSet:
    """Read a prediction file: one ``{id, points: [{x, y, conf}]}`` per line."""
    path = Path(path)
    name = path.stem
    points: dict[str, list[PredictedPoint]] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            obj = _parse_json_line(raw, str(path), lineno)
            if "schema_version" in obj and "id" not in obj:
                name = obj.get("name", name)
                continue
            if "id" not in obj:
                raise ParseError("record missing field 'id'", path=str(path), line=lineno)
            img_id = str(obj["id"])
            if img_id in points:
                raise ParseError(f"duplicate prediction record for {img_id!r}",
                                 path=str(path), line=lineno)
            try:
                points[img_id] = [
                    PredictedPoint(float(p["x"]), float(p["y"]), float(p["conf"]))
                    for p in obj.get("points", [])
                ]
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad point record: {exc}", path=str(path), line=lineno) from exc
    return PredictionSet(name=name, points=points)
