"""Versioned CSV/JSON files written atomically.

CSV files open with one comment line ``# format_version: 1, seed: N``
followed by a header row; floats are printed with 17 significant digits so
they round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import SchemaError

FORMAT_VERSION = 1


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], seed: int) -> None:
    buf = io.StringIO()
    buf.write(f"# format_version: {FORMAT_VERSION}, seed: {seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    atomic_write(path, buf.getvalue())


def read_csv(path: Path, expected_prefix: Sequence[str] | None = None) -> tuple[list[str], list[list[str]]]:
    """Return ``(header, rows)``; validates the version line and header prefix."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing file {path.name}")
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise SchemaError(f"{path.name}: missing version line")
    if f"format_version: {FORMAT_VERSION}" not in lines[0]:
        raise SchemaError(f"{path.name}: unsupported format version")
    reader = list(csv.reader(lines[1:]))
    if not reader:
        raise SchemaError(f"{path.name}: missing header")
    header, rows = reader[0], reader[1:]
    if expected_prefix is not None and header[: len(expected_prefix)] != list(expected_prefix):
        raise SchemaError(f"{path.name}: header {header} does not start with {list(expected_prefix)}")
    for r in rows:
        if len(r) != len(header):
            raise SchemaError(f"{path.name}: ragged row {r}")
    return header, rows


def write_json(path: Path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def read_json(path: Path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing file {path.name}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path.name}: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"{path.name}: missing or unsupported format_version")
    return obj
