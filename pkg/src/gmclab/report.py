"""CSV and JSON writers with a stable layout and 17-significant-digit floats."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def fmt_float(x: float) -> str:
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    return str(v)


def to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    if not rows:
        raise ValueError("no results to report")
    columns = list(rows[0]) if columns is None else columns
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_cell(row.get(c, "")) for c in columns))
    return "\n".join(lines) + "\n"


def _json(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        return "[" + ", ".join(_json(v, indent, level + 1) for v in obj) + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no inf/nan; encode them as strings
        return fmt_float(x) if math.isfinite(x) else json.dumps(fmt_float(x))
    return json.dumps(str(obj))


def to_json(results: dict, indent: int = 2) -> str:
    if not results:
        raise ValueError("no results to report")
    body = {"schema_version": SCHEMA_VERSION}
    body.update(results)
    return _json(body, indent, 0) + "\n"


def emit_report(results, fmt: str, path, columns: list[str] | None = None) -> Path:
    """Write ``results`` (rows for csv, a mapping for json) to ``path``."""
    if fmt == "csv":
        text = to_csv(list(results), columns)
    elif fmt == "json":
        text = to_json(dict(results))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ValueError(f"cannot write report to {path}: {exc}") from exc
    return path
