"""Plain-text outputs: tab-separated tables and sorted JSON documents.

Every file carries ``schema_version``.  Floats are written with ``repr`` so
a rerun with the same seed reproduces the bytes exactly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(path: Path, data: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": SCHEMA_VERSION, **_plain(data)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: Path) -> dict:
    doc = json.loads(Path(path).read_text())
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema_version {version!r}")
    return doc


def _cell(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ",".join(_cell(x) for x in v)
    return str(v)


def write_table(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]], comments: Sequence[str] = ()) -> Path:
    """Tab-separated table with ``#`` header lines and one column-name row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# schema_version: {SCHEMA_VERSION}"]
    lines += [f"# {c}" for c in comments]
    lines.append("\t".join(columns))
    for row in rows:
        lines.append("\t".join(_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    """Column names and raw string cells of a table written by :func:`write_table`."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"# schema_version: {SCHEMA_VERSION}":
        raise ValueError(f"{path}: missing or unsupported schema_version header")
    body = [ln for ln in lines if not ln.startswith("#")]
    if not body:
        raise ValueError(f"{path}: no column header")
    return body[0].split("\t"), [ln.split("\t") for ln in body[1:]]
