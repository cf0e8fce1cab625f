"""Deterministic report serialization.

Every artifact embeds the tool name, version, and the configuration that
produced it, and is written with sorted keys and fixed line endings so
that identical runs produce byte-identical files.  No timestamps.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from . import __version__

TOOL_NAME = "scaleforge"


def make_report(kind: str, config: dict, payload: dict) -> dict:
    """Wrap a payload with provenance fields common to all artifacts."""
    record = {
        "kind": kind,
        "tool": TOOL_NAME,
        "version": __version__,
        "config": config,
    }
    overlap = set(record) & set(payload)
    if overlap:
        raise ValueError(f"payload shadows reserved report fields: {sorted(overlap)}")
    record.update(payload)
    return record


def write_report(path: str | Path, record: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(record, fh, sort_keys=True, indent=1, ensure_ascii=False)
        fh.write("\n")
    return path


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> Path:
    """Write a delimited table with deterministic formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def fmt(value, digits: int = 10) -> str:
    """Format a scalar for delimited output: full repr for ints and
    strings, fixed significant digits for floats, empty for None/NaN."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        if value != value:
            return ""
        return format(value, f".{digits}g")
    return str(value)
