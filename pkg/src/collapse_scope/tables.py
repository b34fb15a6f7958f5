"""Typed CSV helpers shared by all artifact writers.

Floats are written with ``repr`` (shortest round-trip form), booleans as
true/false and missing values as empty cells, so parse -> write reproduces a
file byte for byte.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def parse(token: str) -> Any:
    if token == "":
        return None
    if token in ("true", "false"):
        return token == "true"
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_rows(path: str | Path) -> tuple[list[str], list[list[Any]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [[parse(tok) for tok in row] for row in reader]


def read_records(path: str | Path) -> list[dict[str, Any]]:
    header, rows = read_rows(path)
    return [dict(zip(header, row)) for row in rows]
