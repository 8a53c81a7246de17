"""Output writers: PGM field snapshots, CSV tables, JSON documents.

Everything here is deterministic: floats are rendered with repr (shortest
round-trip form), rows are written in the order given, and PGM output is
binary P5 with a fixed scaling, so identical runs produce byte-identical
files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import ScalarField
from .knowledge import LocalMap

__all__ = [
    "fmt_float",
    "write_pgm",
    "write_field_pgm",
    "write_map_pgm_pair",
    "write_csv",
    "write_json",
]


def fmt_float(x) -> str:
    """Shortest exact decimal form; NaN and infinities spelled out."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    return repr(x)


def write_pgm(path, values: np.ndarray, lo: float, hi: float):
    """8-bit binary PGM of a 2D array scaled from [lo, hi] to [0, 255].

    The array is laid out values[ix, iy] with y increasing upward; PGM rows
    run top to bottom, so the image matches a conventional plot of the field.
    """
    if hi <= lo:
        raise ValueError("need hi > lo for PGM scaling")
    scaled = np.clip((np.asarray(values, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    img = (scaled * 255.0).round().astype(np.uint8)
    img = img.T[::-1]  # (iy rows top-down, ix columns)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_field_pgm(path, field: ScalarField, lo: float, hi: float):
    write_pgm(path, field.values, lo, hi)


def write_map_pgm_pair(prefix, m: LocalMap, t_lo: float, t_hi: float):
    """Export one robot's belief as <prefix>_test.pgm / <prefix>_certainty.pgm."""
    write_pgm(f"{prefix}_test.pgm", m.t_est.values, t_lo, t_hi)
    write_pgm(f"{prefix}_certainty.pgm", m.certainty, 0.0, 1.0)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]):
    """Plain CSV with repr-formatted floats (ints and strings pass through)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(
                [
                    fmt_float(v)
                    if isinstance(v, (float, np.floating))
                    else v
                    for v in row
                ]
            )


def write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_coerce)
        fh.write("\n")


def _coerce(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")
