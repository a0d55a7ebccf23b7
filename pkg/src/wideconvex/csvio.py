"""CSV emission with provenance comment lines and round-trip float text."""

from __future__ import annotations

import io
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


def format_value(v) -> str:
    """17 significant digits for floats, plain text for everything else."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v == 0.0:
            return "0"
        return f"{v:.17g}"
    if v is None:
        return ""
    return str(v)


def render_csv(
    header: Sequence[str],
    rows: Iterable[Sequence],
    provenance: Optional[Mapping[str, object]] = None,
) -> str:
    buf = io.StringIO()
    for key, value in (provenance or {}).items():
        buf.write(f"# {key} = {_provenance_text(value)}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        buf.write(",".join(format_value(v) for v in row) + "\n")
    return buf.getvalue()


def _provenance_text(value) -> str:
    if isinstance(value, (list, tuple)):
        return " ".join(format_value(v) for v in value)
    return format_value(value)


def write_csv(path, header, rows, provenance=None) -> None:
    text = render_csv(header, rows, provenance)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def read_csv(path):
    """Return ``(comments, header, rows)`` with rows as lists of strings."""
    comments, header, rows = [], None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif header is None:
                header = line.split(",")
            elif line:
                rows.append(line.split(","))
    return comments, header, rows
