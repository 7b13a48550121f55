"""CSV writing with a provenance comment line and full-precision floats."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__


def fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def config_hash(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance_line(config: Any = None, seed: Any = None) -> str:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return f"# sgsradar {__version__} config={config_hash(config)} seed={seed} written={stamp}"


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]],
              config: Any = None, seed: Any = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(provenance_line(config, seed) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Return ``(header, rows)`` skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]


def data_lines(path: str | Path) -> list[str]:
    with open(path) as fh:
        return [ln for ln in fh if not ln.startswith("#")]
