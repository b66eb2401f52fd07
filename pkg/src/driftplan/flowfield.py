"""Time-varying 2D velocity fields: analytical forms, gridded data, file I/O.

All fields are sampled in planar Cartesian meters and seconds. Gridded
fields interpolate bilinearly in space and linearly in time; analytical
fields evaluate their closed form. Every field object is immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ExtentError, FormatError, ParameterError

# meters per degree of latitude for the equirectangular adapter
M_PER_DEG = 111320.0

OFG1_MAGIC = b"OFG1"
_HEADER = struct.Struct("<4sIII6d")


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Regular space-time grid: origin, spacing, counts per axis."""

    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int
    t0: float = 0.0
    dt_snap: float = 1.0
    nt: int = 1

    def __post_init__(self):
        if self.dx <= 0 or self.dy <= 0 or self.dt_snap <= 0:
            raise ParameterError("grid spacings must be strictly positive")
        if self.nx < 2 or self.ny < 2:
            raise ParameterError("grid needs at least 2 nodes per spatial axis")
        if self.nt < 1:
            raise ParameterError("grid needs at least 1 snapshot")

    @property
    def x_max(self) -> float:
        return self.x0 + (self.nx - 1) * self.dx

    @property
    def y_max(self) -> float:
        return self.y0 + (self.ny - 1) * self.dy

    @property
    def t_max(self) -> float:
        return self.t0 + (self.nt - 1) * self.dt_snap

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    @property
    def ts(self) -> np.ndarray:
        return self.t0 + self.dt_snap * np.arange(self.nt)

    def meshgrid(self):
        return np.meshgrid(self.xs, self.ys)


class FlowSource:
    """Base class for velocity fields sampled at continuous (x, y, t)."""

    #: spatial/temporal extents; analytical fields default to unbounded
    x_min = -math.inf
    x_max = math.inf
    y_min = -math.inf
    y_max = math.inf
    t_min = -math.inf
    t_max = math.inf

    #: True when sample_many is independent of t, letting consumers reuse
    #: one sampled snapshot instead of resampling every step
    is_steady = False

    def _check_extent(self, x, y, t, clamp_time=False):
        xa = np.asarray(x, dtype=float)
        ya = np.asarray(y, dtype=float)
        ta = np.asarray(t, dtype=float)
        eps_x = 1e-9 * max(1.0, abs(self.x_max)) if math.isfinite(self.x_max) else 0.0
        eps_y = 1e-9 * max(1.0, abs(self.y_max)) if math.isfinite(self.y_max) else 0.0
        eps_t = 1e-6 * max(1.0, abs(self.t_max)) if math.isfinite(self.t_max) else 0.0
        if np.any(xa < self.x_min - eps_x) or np.any(xa > self.x_max + eps_x):
            bad = xa[(xa < self.x_min - eps_x) | (xa > self.x_max + eps_x)]
            raise ExtentError("x", float(np.atleast_1d(bad)[0]), self.x_min, self.x_max)
        if np.any(ya < self.y_min - eps_y) or np.any(ya > self.y_max + eps_y):
            bad = ya[(ya < self.y_min - eps_y) | (ya > self.y_max + eps_y)]
            raise ExtentError("y", float(np.atleast_1d(bad)[0]), self.y_min, self.y_max)
        if np.any(ta < self.t_min - eps_t) or np.any(ta > self.t_max + eps_t):
            if clamp_time:
                ta = np.clip(ta, self.t_min, self.t_max)
            else:
                bad = ta[(ta < self.t_min - eps_t) | (ta > self.t_max + eps_t)]
                raise ExtentError("t", float(np.atleast_1d(bad)[0]), self.t_min, self.t_max)
        return xa, ya, ta

    def sample(self, x: float, y: float, t: float, clamp_time: bool = False):
        """Velocity (u, v) in m/s at one point."""
        u, v = self.sample_many(x, y, t, clamp_time=clamp_time)
        return float(u), float(v)

    def sample_many(self, x, y, t, clamp_time: bool = False):
        """Vectorized sampling; x, y, t broadcast together."""
        raise NotImplementedError

    def covers(self, x_lo, x_hi, y_lo, y_hi, t_lo, t_hi) -> bool:
        eps = 1e-6
        return (
            self.x_min - eps <= x_lo
            and x_hi <= self.x_max + eps
            and self.y_min - eps <= y_lo
            and y_hi <= self.y_max + eps
            and self.t_min - eps * max(1.0, abs(t_lo)) <= t_lo
            and t_hi <= self.t_max + eps * max(1.0, abs(t_hi))
        )


@dataclass(frozen=True)
class UniformFlow(FlowSource):
    """Spatially and temporally constant velocity."""

    u: float
    v: float

    is_steady = True

    def sample_many(self, x, y, t, clamp_time=False):
        xa, ya, _ = self._check_extent(x, y, t, clamp_time)
        shape = np.broadcast(xa, ya).shape
        return np.full(shape, self.u), np.full(shape, self.v)


@dataclass(frozen=True)
class HighwayFlow(FlowSource):
    """Piecewise-constant band: ``band_velocity`` for y in [y1, y2], zero outside."""

    y1: float
    y2: float
    band_u: float
    band_v: float

    is_steady = True

    def __post_init__(self):
        if self.y1 >= self.y2:
            raise ParameterError("highway requires y1 < y2")

    def sample_many(self, x, y, t, clamp_time=False):
        xa, ya, _ = self._check_extent(x, y, t, clamp_time)
        xa, ya = np.broadcast_arrays(np.asarray(xa, float), np.asarray(ya, float))
        inside = (ya >= self.y1) & (ya <= self.y2)
        return np.where(inside, self.band_u, 0.0), np.where(inside, self.band_v, 0.0)


@dataclass(frozen=True)
class DoubleGyreFlow(FlowSource):
    """Periodically perturbed double gyre on [0, 2*scale] x [0, scale].

    Stream function psi = A sin(pi f(X, t)) sin(pi Y) with
    f = eps sin(omega t) X^2 + (1 - 2 eps sin(omega t)) X in normalized
    coordinates X = x/scale, Y = y/scale. Divergence-free by construction.
    """

    amplitude: float
    omega: float
    epsilon: float
    scale: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ParameterError("double gyre requires A >= 0")
        if self.scale <= 0:
            raise ParameterError("double gyre requires scale > 0")

    def sample_many(self, x, y, t, clamp_time=False):
        xa, ya, ta = self._check_extent(x, y, t, clamp_time)
        xa, ya, ta = np.broadcast_arrays(
            np.asarray(xa, float), np.asarray(ya, float), np.asarray(ta, float)
        )
        X = xa / self.scale
        Y = ya / self.scale
        b = self.epsilon * np.sin(self.omega * ta)
        a = 1.0 - 2.0 * b
        f = b * X**2 + a * X
        dfdx = 2.0 * b * X + a
        u = -math.pi * self.amplitude * np.sin(math.pi * f) * np.cos(math.pi * Y)
        v = math.pi * self.amplitude * np.cos(math.pi * f) * np.sin(math.pi * Y) * dfdx
        return u, v


@dataclass(frozen=True)
class GriddedFlow(FlowSource):
    """File- or array-backed field on a regular space-time grid.

    ``u`` and ``v`` are shaped (nt, ny, nx). Sampling interpolates
    bilinearly in space and linearly in time.
    """

    grid: SpaceTimeGrid
    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)

    def __post_init__(self):
        g = self.grid
        want = (g.nt, g.ny, g.nx)
        u = np.ascontiguousarray(np.asarray(self.u, dtype=np.float64).reshape(want))
        v = np.ascontiguousarray(np.asarray(self.v, dtype=np.float64).reshape(want))
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ParameterError("gridded flow contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def x_min(self):
        return self.grid.x0

    @property
    def x_max(self):
        return self.grid.x_max

    @property
    def y_min(self):
        return self.grid.y0

    @property
    def y_max(self):
        return self.grid.y_max

    @property
    def t_min(self):
        return self.grid.t0

    @property
    def t_max(self):
        return self.grid.t_max

    @property
    def is_steady(self):
        return self.grid.nt == 1

    def sample_many(self, x, y, t, clamp_time=False):
        g = self.grid
        xa, ya, ta = self._check_extent(x, y, t, clamp_time)
        xa, ya, ta = np.broadcast_arrays(
            np.asarray(xa, float), np.asarray(ya, float), np.asarray(ta, float)
        )
        fx = np.clip((xa - g.x0) / g.dx, 0.0, g.nx - 1.0)
        fy = np.clip((ya - g.y0) / g.dy, 0.0, g.ny - 1.0)
        ft = np.clip((ta - g.t0) / g.dt_snap, 0.0, max(g.nt - 1.0, 0.0))
        i0 = np.minimum(fx.astype(int), g.nx - 2)
        j0 = np.minimum(fy.astype(int), g.ny - 2)
        k0 = np.minimum(ft.astype(int), max(g.nt - 2, 0))
        wx = fx - i0
        wy = fy - j0
        wt = ft - k0 if g.nt > 1 else np.zeros_like(ft)
        k1 = np.minimum(k0 + 1, g.nt - 1)

        def interp(arr):
            c00 = arr[k0, j0, i0] * (1 - wt) + arr[k1, j0, i0] * wt
            c10 = arr[k0, j0, i0 + 1] * (1 - wt) + arr[k1, j0, i0 + 1] * wt
            c01 = arr[k0, j0 + 1, i0] * (1 - wt) + arr[k1, j0 + 1, i0] * wt
            c11 = arr[k0, j0 + 1, i0 + 1] * (1 - wt) + arr[k1, j0 + 1, i0 + 1] * wt
            return (
                c00 * (1 - wx) * (1 - wy)
                + c10 * wx * (1 - wy)
                + c01 * (1 - wx) * wy
                + c11 * wx * wy
            )

        return interp(self.u), interp(self.v)


def make_uniform(u: float, v: float) -> FlowSource:
    return UniformFlow(u, v)


def make_highway(y1: float, y2: float, band_velocity) -> FlowSource:
    """Constant-velocity band between y1 and y2, still water outside."""
    bu, bv = band_velocity
    return HighwayFlow(y1, y2, float(bu), float(bv))


def make_double_gyre(amplitude: float, omega: float, epsilon: float, scale: float) -> FlowSource:
    return DoubleGyreFlow(amplitude, omega, epsilon, scale)


def sample_flow(source: FlowSource, x, t, clamp_time: bool = False):
    """Sample velocity at position x = (x, y) and time t."""
    px, py = x
    return source.sample(px, py, t, clamp_time=clamp_time)


def degrees_to_meters_grid(
    lon0: float, lat0: float, dlon: float, dlat: float, nx: int, ny: int,
    t0: float = 0.0, dt_snap: float = 1.0, nt: int = 1,
) -> SpaceTimeGrid:
    """Equirectangular adapter: degree-gridded axes to planar meters.

    1 deg latitude = 111320 m; longitude scaled by cos of the grid
    mid-latitude.
    """
    lat_ref = lat0 + 0.5 * (ny - 1) * dlat
    mx = M_PER_DEG * math.cos(math.radians(lat_ref))
    return SpaceTimeGrid(
        x0=lon0 * mx, y0=lat0 * M_PER_DEG,
        dx=dlon * mx, dy=dlat * M_PER_DEG,
        nx=nx, ny=ny, t0=t0, dt_snap=dt_snap, nt=nt,
    )


def write_flow_file(flow: GriddedFlow, path) -> None:
    """Write a gridded field in the OFG1 binary format (little-endian)."""
    g = flow.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(
            OFG1_MAGIC, g.nx, g.ny, g.nt, g.x0, g.dx, g.y0, g.dy, g.t0, g.dt_snap
        ))
        fh.write(np.asarray(flow.u, dtype="<f4").tobytes())
        fh.write(np.asarray(flow.v, dtype="<f4").tobytes())


def read_flow_file(path) -> GriddedFlow:
    """Read an OFG1 file; errors carry the byte offset of the defect."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FormatError("truncated OFG1 header", offset=len(data))
    magic, nx, ny, nt, x0, dx, y0, dy, t0, dt_snap = _HEADER.unpack_from(data, 0)
    if magic != OFG1_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {OFG1_MAGIC!r}", offset=0)
    count = nt * ny * nx
    need = _HEADER.size + 2 * count * 4
    if len(data) < need:
        raise FormatError(
            f"truncated payload: need {need} bytes, have {len(data)}", offset=len(data)
        )
    payload = np.frombuffer(data, dtype="<f4", count=2 * count, offset=_HEADER.size)
    u = payload[:count].astype(np.float64)
    v = payload[count:].astype(np.float64)
    if not np.all(np.isfinite(u)):
        bad = int(np.flatnonzero(~np.isfinite(u))[0])
        raise FormatError("non-finite u value", offset=_HEADER.size + bad * 4)
    if not np.all(np.isfinite(v)):
        bad = int(np.flatnonzero(~np.isfinite(v))[0])
        raise FormatError("non-finite v value", offset=_HEADER.size + (count + bad) * 4)
    try:
        grid = SpaceTimeGrid(x0=x0, y0=y0, dx=dx, dy=dy, nx=nx, ny=ny,
                             t0=t0, dt_snap=dt_snap, nt=nt)
    except ParameterError as exc:
        raise FormatError(f"invalid header: {exc}", offset=4) from exc
    return GriddedFlow(grid, u.reshape(nt, ny, nx), v.reshape(nt, ny, nx))
