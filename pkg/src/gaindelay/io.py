"""Deterministic CSV/JSON writers and strict readers.

All numbers are written in round-trip ``repr`` precision so that repeated
runs produce byte-identical files.  Readers report line and column of the
first malformed entry.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputDataError


def _fmt(x) -> str:
    x = float(x)
    if x == 0.0:
        return "0"  # also folds -0.0
    return repr(x)


def _plain(obj):
    """Convert numpy scalars/arrays into JSON-native types."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not np.isfinite(x):
            return None if np.isnan(x) else ("inf" if x > 0 else "-inf")
        return x
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def atomic_write_text(path, text: str) -> Path:
    """Write via a temporary file and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputDataError(f"cannot read file ({exc.strerror})", path) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputDataError(exc.msg, path, exc.lineno, exc.colno) from None


def csv_text(rows: Iterable[Sequence], header: Sequence[str] = (),
             columns: Sequence[str] | None = None) -> str:
    lines = [f"# {h}" for h in header]
    if columns is not None:
        lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else _fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, rows, header=(), columns=None) -> Path:
    return atomic_write_text(path, csv_text(rows, header, columns))


def write_matrix(path, matrix, header=()) -> Path:
    return write_csv(path, np.asarray(matrix, dtype=float), header)


def read_csv(path, n_columns: int | None = None):
    """Parse a numeric CSV.

    Returns ``(header_lines, column_names, data)`` where leading ``#`` lines
    are the header and an optional first non-numeric row names the columns.
    """
    path = Path(path)
    try:
        raw = path.read_text().splitlines()
    except OSError as exc:
        raise InputDataError(f"cannot read file ({exc.strerror})", path) from None
    header, names, rows = [], None, []
    width = n_columns
    for lineno, line in enumerate(raw, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if rows or names is not None:
                raise InputDataError("comment after data", path, lineno, 1)
            header.append(stripped[1:].strip())
            continue
        cells = [c.strip() for c in stripped.split(",")]
        if names is None and not rows and not _numeric(cells[0]):
            names = cells
            width = width or len(cells)
            continue
        if width is None:
            width = len(cells)
        if len(cells) != width:
            raise InputDataError(f"expected {width} columns, found {len(cells)}", path, lineno,
                                 len(line) + 1 if len(cells) < width else _col(line, width))
        vals = []
        for k, cell in enumerate(cells):
            try:
                vals.append(float(cell))
            except ValueError:
                raise InputDataError(f"not a number: {cell!r}", path, lineno, _col(line, k)) from None
        rows.append(vals)
    if not rows:
        raise InputDataError("no data rows", path)
    return header, names, np.array(rows)


def _numeric(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _col(line: str, k: int) -> int:
    """1-based character column where cell ``k`` starts."""
    pos = 0
    for _ in range(k):
        pos = line.index(",", pos) + 1
    return pos + 1


def header_values(header: Sequence[str]) -> dict:
    """Extract ``key = value`` pairs from CSV header lines."""
    out = {}
    for line in header:
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
