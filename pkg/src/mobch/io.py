"""Snapshot files and CSV series, written with 17 significant digits."""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

from .grid import Grid, GridFunction

_HEADER = re.compile(r"#\s*mobch-snapshot\s+dim=(\d+)\s+n=(\d+)\s+h=(\S+)\s+t=(\S+)")


def fmt(x) -> str:
    return format(float(x), ".17g") if not isinstance(x, (int, np.integer)) else str(int(x))


def write_snapshot(path, u: GridFunction, t: float) -> None:
    g = u.grid
    lines = [f"# mobch-snapshot dim={g.dim} n={g.n_cells} h={fmt(g.h)} t={fmt(t)}"]
    lines.extend(fmt(x) for x in u.flat)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_snapshot(path) -> tuple[GridFunction, float]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    match = _HEADER.match(text[0]) if text else None
    if match is None:
        raise ValueError(f"{path}: not a mobch snapshot")
    dim, n, h, t = int(match[1]), int(match[2]), float(match[3]), float(match[4])
    values = np.array([float(x) for x in text[1:] if x.strip()])
    grid = Grid(dim, n, h * n)
    if values.size != grid.size:
        raise ValueError(f"{path}: expected {grid.size} values, found {values.size}")
    return GridFunction(grid, values), t


def write_csv(path, columns: dict) -> None:
    names = list(columns)
    rows = zip(*(columns[k] for k in names))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in rows:
            writer.writerow([fmt(x) for x in row])


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        data = [[float(x) for x in row] for row in reader]
    arr = np.array(data, dtype=float).reshape(len(data), len(names))
    return {name: arr[:, k] for k, name in enumerate(names)}
