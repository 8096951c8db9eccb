"""Report serialization: deterministic JSON, aligned text tables, CSV.

JSON files are written atomically (temp file in the target directory,
then rename) and with sorted keys so identical runs produce identical
bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Sequence

from .errors import ValidationError


def dumps_deterministic(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json_atomic(doc: dict, path: str | Path) -> Path:
    """Serialize to a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = dumps_deterministic(doc)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_text_atomic(text: str, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def format_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """Left-aligned fixed-width columns; numbers rendered as given."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for r, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if r == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _csv_escape(value: object) -> str:
    s = str(value)
    if any(ch in s for ch in (",", '"', "\n", "\r")):
        s = '"' + s.replace('"', '""') + '"'
    return s


def detail_rows_to_csv(per_instance: list[dict]) -> str:
    """Flatten detail rows to CSV: id, template index, totals, predicted, gold.

    The totals arity may vary across rows (e.g. multiple choice); columns
    are sized by the widest row and short rows leave trailing cells empty.
    """
    if not per_instance:
        raise ValidationError("report has no per-instance rows to export")
    width = max(len(row["totals"]) for row in per_instance)
    headers = ["id", "template_index"] + [f"total_{i}" for i in range(width)]
    headers += ["predicted", "gold"]
    lines = [",".join(headers)]
    for row in per_instance:
        totals = [repr(float(v)) for v in row["totals"]]
        totals += [""] * (width - len(totals))
        cells = [row["id"], row["template_index"], *totals, row["predicted"], row["gold"]]
        lines.append(",".join(_csv_escape(c) for c in cells))
    return "\n".join(lines) + "\n"
