"""Plain-text grid exports: PGM (P2) heatmaps and CSV grids."""

from __future__ import annotations

import numpy as np


def write_pgm(path, array, maxval: int = 255, invalid_value: int = 0) -> None:
    """Write a 2D array as an ASCII PGM, linearly scaled to [0, maxval].

    Non-finite cells map to ``invalid_value``. Row 0 of the array is the
    bottom of the grid, so rows are flipped for image convention.
    """
    a = np.asarray(array, dtype=float)
    finite = np.isfinite(a)
    if finite.any():
        lo = float(a[finite].min())
        hi = float(a[finite].max())
        span = hi - lo if hi > lo else 1.0
        scaled = np.where(finite, np.round((a - lo) / span * maxval), invalid_value)
    else:
        scaled = np.full(a.shape, invalid_value)
    scaled = scaled.astype(int)[::-1]
    with open(path, "w") as fh:
        fh.write(f"P2\n{a.shape[1]} {a.shape[0]}\n{maxval}\n")
        for row in scaled:
            fh.write(" ".join(str(v) for v in row) + "\n")


def write_csv_grid(path, array, fmt: str = "%.6g") -> None:
    np.savetxt(path, np.asarray(array, dtype=float), delimiter=",", fmt=fmt)
