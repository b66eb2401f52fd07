"""Elevation grids, obstacle masks, and BFS distance-to-obstacle maps."""

from __future__ import annotations

import math
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError

#: default obstacle threshold: seafloor shallower than 150 m is unsafe
DEFAULT_THRESHOLD_M = -150.0

ELG1_MAGIC = b"ELG1"
_HEADER = struct.Struct("<4sII4d")


@dataclass(frozen=True)
class SpatialGrid:
    """Regular 2D grid (the spatial part of a space-time grid)."""

    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.dx <= 0 or self.dy <= 0:
            raise ParameterError("grid spacing must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ParameterError("grid must be non-empty")

    @property
    def x_max(self):
        return self.x0 + (self.nx - 1) * self.dx

    @property
    def y_max(self):
        return self.y0 + (self.ny - 1) * self.dy

    @property
    def xs(self):
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def ys(self):
        return self.y0 + self.dy * np.arange(self.ny)

    def nearest_cell(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the node closest to (x, y), clipped to the grid."""
        i = int(np.clip(round((x - self.x0) / self.dx), 0, self.nx - 1))
        j = int(np.clip(round((y - self.y0) / self.dy), 0, self.ny - 1))
        return j, i

    def _frac_index(self, x: float, y: float):
        fx = np.clip((x - self.x0) / self.dx, 0.0, self.nx - 1.0)
        fy = np.clip((y - self.y0) / self.dy, 0.0, self.ny - 1.0)
        return fx, fy


@dataclass(frozen=True)
class ElevationGrid:
    """Per-cell elevation in meters, negative below sea level."""

    grid: SpatialGrid
    elevation: np.ndarray = field(repr=False)  # (ny, nx)
    padded: bool = False

    def __post_init__(self):
        e = np.ascontiguousarray(
            np.asarray(self.elevation, dtype=np.float64).reshape(self.grid.ny, self.grid.nx)
        )
        if not np.all(np.isfinite(e)):
            raise ParameterError("elevation grid contains non-finite values")
        object.__setattr__(self, "elevation", e)


@dataclass(frozen=True)
class ObstacleMask:
    """Boolean obstacle grid: True where elevation exceeds the threshold."""

    grid: SpatialGrid
    mask: np.ndarray = field(repr=False)  # (ny, nx) bool
    threshold_elevation: float = DEFAULT_THRESHOLD_M

    def __post_init__(self):
        m = np.ascontiguousarray(
            np.asarray(self.mask, dtype=bool).reshape(self.grid.ny, self.grid.nx)
        )
        object.__setattr__(self, "mask", m)

    def contains(self, x: float, y: float) -> bool:
        """Obstacle membership by nearest-cell lookup."""
        j, i = self.grid.nearest_cell(x, y)
        return bool(self.mask[j, i])

    @classmethod
    def empty(cls, grid: SpatialGrid) -> "ObstacleMask":
        return cls(grid, np.zeros((grid.ny, grid.nx), dtype=bool))


@dataclass(frozen=True)
class DistanceMap:
    """Distance to the nearest obstacle cell, in meters (0 on obstacles)."""

    grid: SpatialGrid
    distance: np.ndarray = field(repr=False)  # (ny, nx), +inf if no obstacles

    def value_at(self, x: float, y: float) -> float:
        """Bilinearly interpolated distance at a continuous position."""
        fx, fy = self.grid._frac_index(x, y)
        i0 = min(int(fx), self.grid.nx - 2) if self.grid.nx > 1 else 0
        j0 = min(int(fy), self.grid.ny - 2) if self.grid.ny > 1 else 0
        wx = fx - i0
        wy = fy - j0
        d = self.distance
        return float(
            d[j0, i0] * (1 - wx) * (1 - wy)
            + d[j0, i0 + 1] * wx * (1 - wy)
            + d[j0 + 1, i0] * (1 - wx) * wy
            + d[j0 + 1, i0 + 1] * wx * wy
        )

    def gradient_at(self, x: float, y: float) -> tuple[float, float]:
        """Central-difference gradient of the distance field at (x, y)."""
        g = self.grid
        j, i = g.nearest_cell(x, y)
        d = self.distance
        im, ip = max(i - 1, 0), min(i + 1, g.nx - 1)
        jm, jp = max(j - 1, 0), min(j + 1, g.ny - 1)
        # an obstacle-free map is uniformly infinite: inf - inf has no
        # meaningful direction, report a flat gradient instead of NaN
        with np.errstate(invalid="ignore"):
            gx = (d[j, ip] - d[j, im]) / ((ip - im) * g.dx) if ip > im else 0.0
            gy = (d[jp, i] - d[jm, i]) / ((jp - jm) * g.dy) if jp > jm else 0.0
        if not (math.isfinite(gx) and math.isfinite(gy)):
            return 0.0, 0.0
        return float(gx), float(gy)


def coarsen_max(elev: ElevationGrid, factor: int) -> ElevationGrid:
    """Block-maximum coarsening; conservative for obstacle detection.

    Grids whose dimensions are not divisible by ``factor`` are padded by
    edge replication first; the output is flagged ``padded``.
    """
    if factor < 1:
        raise ParameterError("coarsening factor must be >= 1")
    if factor == 1:
        return elev
    e = elev.elevation
    ny, nx = e.shape
    pad_y = (-ny) % factor
    pad_x = (-nx) % factor
    padded = pad_x > 0 or pad_y > 0
    if padded:
        e = np.pad(e, ((0, pad_y), (0, pad_x)), mode="edge")
    NY, NX = e.shape
    blocks = e.reshape(NY // factor, factor, NX // factor, factor)
    out = blocks.max(axis=(1, 3))
    g = elev.grid
    new_grid = SpatialGrid(
        x0=g.x0, y0=g.y0, dx=g.dx * factor, dy=g.dy * factor,
        nx=out.shape[1], ny=out.shape[0],
    )
    return ElevationGrid(new_grid, out, padded=padded or elev.padded)


def obstacle_mask(elev: ElevationGrid, threshold: float = DEFAULT_THRESHOLD_M) -> ObstacleMask:
    """Cells strictly above the threshold elevation are obstacles."""
    return ObstacleMask(elev.grid, elev.elevation > threshold, threshold)


def distance_map(mask: ObstacleMask) -> DistanceMap:
    """Multi-source BFS over 4-connected cells from all obstacle cells.

    Distance = hop count x cell spacing; requires square cells. A mask
    with no obstacles yields +inf everywhere.
    """
    g = mask.grid
    if not math.isclose(g.dx, g.dy, rel_tol=1e-6):
        raise ParameterError("distance_map requires square cells (dx == dy)")
    spacing = g.dx
    m = mask.mask
    dist = np.full(m.shape, np.inf)
    if not m.any():
        return DistanceMap(g, dist)
    hops = np.full(m.shape, -1, dtype=np.int64)
    q = deque()
    src = np.argwhere(m)
    for j, i in src:
        hops[j, i] = 0
        q.append((int(j), int(i)))
    ny, nx = m.shape
    while q:
        j, i = q.popleft()
        h = hops[j, i] + 1
        for jj, ii in ((j - 1, i), (j + 1, i), (j, i - 1), (j, i + 1)):
            if 0 <= jj < ny and 0 <= ii < nx and hops[jj, ii] < 0:
                hops[jj, ii] = h
                q.append((jj, ii))
    return DistanceMap(g, hops * spacing)


def write_elevation_file(elev: ElevationGrid, path) -> None:
    """Write an ELG1 binary elevation file (little-endian, y-major)."""
    g = elev.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ELG1_MAGIC, g.nx, g.ny, g.x0, g.dx, g.y0, g.dy))
        fh.write(np.asarray(elev.elevation, dtype="<f4").tobytes())


def read_elevation_file(path) -> ElevationGrid:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError("truncated ELG1 header", offset=len(data))
    magic, nx, ny, x0, dx, y0, dy = _HEADER.unpack_from(data, 0)
    if magic != ELG1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {ELG1_MAGIC!r}", offset=0)
    count = ny * nx
    need = _HEADER.size + count * 4
    if len(data) < need:
        raise FormatError(
            f"truncated payload: need {need} bytes, have {len(data)}", offset=len(data)
        )
    vals = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size)
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise FormatError("non-finite elevation value", offset=_HEADER.size + bad * 4)
    try:
        grid = SpatialGrid(x0=x0, y0=y0, dx=dx, dy=dy, nx=nx, ny=ny)
    except ParameterError as exc:
        raise FormatError(f"invalid header: {exc}", offset=4) from exc
    return ElevationGrid(grid, vals.astype(np.float64).reshape(ny, nx))
