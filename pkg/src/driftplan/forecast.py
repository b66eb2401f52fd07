"""Imperfect forecasts: file-backed release series and a synthetic
structured-error generator.

The synthetic generator perturbs the true flow with a sum of random
Fourier modes per velocity component. Mode coefficients evolve between
releases as a stationary AR(1) process, so consecutive forecasts share
error structure, and amplitudes are calibrated analytically so the
expected vector RMSE equals the configured target.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HorizonError, ParameterError
from .flowfield import FlowSource, read_flow_file

DAY_S = 86400.0


@dataclass(frozen=True)
class ErrorModelConfig:
    """Calibration of the synthetic forecast-error field."""

    target_rmse: float
    spatial_correlation_length: float
    temporal_correlation: float
    n_modes: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.target_rmse < 0:
            raise ParameterError("target_rmse must be >= 0")
        if self.spatial_correlation_length <= 0 or self.temporal_correlation <= 0:
            raise ParameterError("correlation scales must be positive")
        if self.n_modes < 1:
            raise ParameterError("need at least one Fourier mode")


@dataclass(frozen=True)
class FourierPerturbedFlow(FlowSource):
    """Truth plus a frozen-in-time sum of Fourier modes per component."""

    truth: FlowSource
    kx: np.ndarray = field(repr=False)  # (2, n_modes): per component
    ky: np.ndarray = field(repr=False)
    coef_a: np.ndarray = field(repr=False)
    coef_b: np.ndarray = field(repr=False)
    amplitude: float = 0.0
    t_lo: float = -math.inf
    t_hi: float = math.inf

    @property
    def x_min(self):
        return self.truth.x_min

    @property
    def x_max(self):
        return self.truth.x_max

    @property
    def y_min(self):
        return self.truth.y_min

    @property
    def y_max(self):
        return self.truth.y_max

    @property
    def t_min(self):
        return self.t_lo

    @property
    def t_max(self):
        return self.t_hi

    @property
    def is_steady(self):
        # the perturbation coefficients are frozen within a release
        return self.truth.is_steady

    def _error(self, comp, xa, ya):
        phase = np.multiply.outer(xa, self.kx[comp]) + np.multiply.outer(ya, self.ky[comp])
        return self.amplitude * (
            np.cos(phase) @ self.coef_a[comp] + np.sin(phase) @ self.coef_b[comp]
        )

    def sample_many(self, x, y, t, clamp_time=False):
        xa, ya, ta = self._check_extent(x, y, t, clamp_time)
        xa, ya = np.broadcast_arrays(np.asarray(xa, float), np.asarray(ya, float))
        u, v = self.truth.sample_many(xa, ya, ta, clamp_time=True)
        if self.amplitude == 0.0:
            return u, v
        return u + self._error(0, xa, ya), v + self._error(1, xa, ya)


@dataclass(frozen=True)
class _WindowedFlow(FlowSource):
    """A flow restricted to a release's validity window."""

    inner: FlowSource
    t_lo: float
    t_hi: float

    @property
    def x_min(self):
        return self.inner.x_min

    @property
    def x_max(self):
        return self.inner.x_max

    @property
    def y_min(self):
        return self.inner.y_min

    @property
    def y_max(self):
        return self.inner.y_max

    @property
    def t_min(self):
        return self.t_lo

    @property
    def t_max(self):
        return self.t_hi

    @property
    def is_steady(self):
        return self.inner.is_steady

    def sample_many(self, x, y, t, clamp_time=False):
        self._check_extent(x, y, t, clamp_time)
        return self.inner.sample_many(x, y, np.clip(t, self.t_lo, self.t_hi),
                                      clamp_time=True)


@dataclass(frozen=True)
class ForecastSeries:
    """Ordered forecast releases, each valid over [release, release + horizon]."""

    releases: tuple  # of (release_time, FlowSource)
    horizon: float = 5 * DAY_S
    cadence: float = DAY_S

    def __post_init__(self):
        times = [t for t, _ in self.releases]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ParameterError("release times must be strictly increasing")

    @property
    def release_times(self):
        return [t for t, _ in self.releases]

    def current(self, t: float) -> FlowSource:
        """Latest release available at wall-clock time t."""
        times = self.release_times
        idx = bisect.bisect_right(times, t) - 1
        if idx < 0:
            raise HorizonError(f"no forecast released yet at t={t}")
        return self.releases[idx][1]

    def current_release_time(self, t: float) -> float:
        times = self.release_times
        idx = bisect.bisect_right(times, t) - 1
        if idx < 0:
            raise HorizonError(f"no forecast released yet at t={t}")
        return times[idx]


def current_forecast(series: ForecastSeries, t: float) -> FlowSource:
    return series.current(t)


def gen_forecast_series(
    truth: FlowSource,
    cfg: ErrorModelConfig,
    cadence: float,
    horizon: float,
    span: tuple[float, float],
) -> ForecastSeries:
    """Generate releases at ``cadence`` covering ``span = (t0, t1)``.

    Each release is truth plus a Fourier-mode error field whose expected
    vector RMSE equals cfg.target_rmse. Deterministic given cfg.seed.
    """
    t0, t1 = span
    if not truth.covers(truth.x_min, truth.x_max, truth.y_min, truth.y_max,
                        t0, min(t1 + horizon, truth.t_max)):
        raise HorizonError("truth flow does not cover the requested span")
    if math.isfinite(truth.t_max) and truth.t_max < t1:
        raise HorizonError("truth flow ends before the requested span")
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_modes
    # wavelengths at or above the correlation length, isotropic directions
    wavelengths = cfg.spatial_correlation_length * rng.uniform(1.0, 4.0, size=(2, n))
    angles = rng.uniform(0.0, 2.0 * math.pi, size=(2, n))
    kmag = 2.0 * math.pi / wavelengths
    kx = kmag * np.cos(angles)
    ky = kmag * np.sin(angles)
    # sum of squared amplitudes = target_rmse^2 / 2 per component
    amplitude = cfg.target_rmse / math.sqrt(2.0 * n)
    rho = math.exp(-cadence / cfg.temporal_correlation)
    coef_a = rng.standard_normal((2, n))
    coef_b = rng.standard_normal((2, n))
    releases = []
    rt = t0
    while rt <= t1 + 1e-9:
        t_hi = rt + horizon
        if math.isfinite(truth.t_max):
            t_hi = min(t_hi, truth.t_max)
        releases.append((rt, FourierPerturbedFlow(
            truth=truth, kx=kx, ky=ky,
            coef_a=coef_a.copy(), coef_b=coef_b.copy(),
            amplitude=amplitude, t_lo=rt, t_hi=t_hi,
        )))
        noise_a = rng.standard_normal((2, n))
        noise_b = rng.standard_normal((2, n))
        coef_a = rho * coef_a + math.sqrt(1.0 - rho * rho) * noise_a
        coef_b = rho * coef_b + math.sqrt(1.0 - rho * rho) * noise_b
        rt += cadence
    return ForecastSeries(tuple(releases), horizon=horizon, cadence=cadence)


def perfect_series(truth: FlowSource, t0: float, t1: float,
                   cadence: float, horizon: float) -> ForecastSeries:
    """Zero-error series: every release is the truth on its window."""
    releases = []
    rt = t0
    while rt <= t1 + 1e-9:
        t_hi = rt + horizon
        if math.isfinite(truth.t_max):
            t_hi = min(t_hi, truth.t_max)
        releases.append((rt, _WindowedFlow(truth, rt, t_hi)))
        rt += cadence
    return ForecastSeries(tuple(releases), horizon=horizon, cadence=cadence)


def load_forecast_series(entries, horizon: float, cadence: float = DAY_S) -> ForecastSeries:
    """Build a series from (release_time, OFG1 path) pairs."""
    times = [t for t, _ in entries]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ParameterError("release times must be strictly increasing")
    releases = []
    for rt, path in entries:
        flow = read_flow_file(path)
        if flow.t_min > rt + 1e-9 or flow.t_max < rt + horizon - 1e-9:
            raise HorizonError(
                f"file {path} covers [{flow.t_min}, {flow.t_max}], "
                f"release at {rt} needs horizon {horizon}"
            )
        releases.append((rt, flow))
    return ForecastSeries(tuple(releases), horizon=horizon, cadence=cadence)


def write_series_manifest(entries, horizon: float, path) -> None:
    with open(path, "w") as fh:
        json.dump(
            {"horizon_s": horizon,
             "releases": [{"t_s": t, "path": str(p)} for t, p in entries]},
            fh, indent=2,
        )


def read_series_manifest(path):
    with open(path) as fh:
        doc = json.load(fh)
    return [(e["t_s"], e["path"]) for e in doc["releases"]], doc["horizon_s"]
