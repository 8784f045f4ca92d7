"""CSV output with commented provenance headers.

Every file starts with ``# key=value`` lines (at least ``config_hash`` and
``seed``), followed by an RFC 4180 table. Reals are written with 17
significant digits so that values survive a round trip unchanged.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence


def format_value(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int,)) and not isinstance(value, bool):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return f"{v:.17g}"
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], header: Mapping | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for key, val in (header or {}).items():
        buf.write(f"# {key}={val}\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_value(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> tuple[dict, list[dict]]:
    """Return ``(header, rows)``; row values are left as strings."""
    header = {}
    body = []
    for line in Path(path).read_text().splitlines(keepends=True):
        if line.startswith("# "):
            key, _, val = line[2:].rstrip("\r\n").partition("=")
            header[key] = val
        else:
            body.append(line)
    rows = list(csv.DictReader(io.StringIO("".join(body))))
    return header, rows


def csv_body(path) -> str:
    """File content without the ``#`` header lines."""
    return "".join(l for l in Path(path).read_text().splitlines(keepends=True) if not l.startswith("# "))
