"""Outcome rates, forecast-error metrics, and the one-sided two-sample
z proportion test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ParameterError


@dataclass(frozen=True)
class OutcomeTally:
    n_total: int
    n_success: int
    n_stranded: int
    n_timeout: int
    n_left_region: int

    def __post_init__(self):
        parts = self.n_success + self.n_stranded + self.n_timeout + self.n_left_region
        if parts != self.n_total:
            raise ParameterError(
                f"outcome counts sum to {parts}, expected n_total={self.n_total}"
            )


@dataclass(frozen=True)
class TestResult:
    z: float
    p: float


def rates(t: OutcomeTally) -> dict:
    if t.n_total < 1:
        raise DegenerateInputError("rates undefined for an empty tally")
    n = t.n_total
    return {
        "stranding_rate": t.n_stranded / n,
        "success_rate": t.n_success / n,
        "timeout_rate": t.n_timeout / n,
        "left_rate": t.n_left_region / n,
    }


def normal_sf(z: float) -> float:
    """Upper tail of the standard normal, accurate deep into the tail."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def z_prop_test(k_base: int, n_base: int, k_alt: int, n_alt: int) -> TestResult:
    """One-sided two-sample z proportion test.

    Tests whether the base proportion exceeds the alternative's; small p
    means the base rate is significantly larger.
    """
    if n_base < 1 or n_alt < 1:
        raise ParameterError("sample sizes must be >= 1")
    if not (0 <= k_base <= n_base and 0 <= k_alt <= n_alt):
        raise ParameterError("counts must satisfy 0 <= k <= n")
    pooled = (k_base + k_alt) / (n_base + n_alt)
    if pooled in (0.0, 1.0):
        raise DegenerateInputError("pooled proportion is degenerate (0 or 1)")
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n_base + 1.0 / n_alt))
    z = (k_base / n_base - k_alt / n_alt) / se
    return TestResult(z=z, p=normal_sf(z))


def vector_rmse(true_vels, forecast_vels) -> float:
    """Root mean squared magnitude of the vector difference, in m/s."""
    tv = np.asarray(true_vels, dtype=float)
    fv = np.asarray(forecast_vels, dtype=float)
    if tv.size == 0:
        raise DegenerateInputError("vector_rmse requires at least one sample")
    if tv.shape != fv.shape or tv.shape[-1] != 2:
        raise ParameterError("inputs must be matching (..., 2) arrays")
    d = (tv - fv).reshape(-1, 2)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def vector_correlation(true_vels, forecast_vels) -> float:
    """Generalized correlation between two 2D vector series, in [0, 2].

    trace(S11^-1 S12 S22^-1 S21) over the sample covariance blocks;
    2 means a perfect invertible linear dependence, 0 independence.
    """
    tv = np.asarray(true_vels, dtype=float).reshape(-1, 2)
    fv = np.asarray(forecast_vels, dtype=float).reshape(-1, 2)
    if tv.shape[0] < 3 or tv.shape != fv.shape:
        raise ParameterError("need >= 3 matching vector samples")
    joint = np.cov(np.hstack([tv, fv]).T)
    s11 = joint[:2, :2]
    s12 = joint[:2, 2:]
    s22 = joint[2:, 2:]
    if (
        abs(np.linalg.det(s11)) < 1e-300
        or abs(np.linalg.det(s22)) < 1e-300
    ):
        raise DegenerateInputError("singular covariance: a series is degenerate")
    m = np.linalg.solve(s11, s12) @ np.linalg.solve(s22, s12.T)
    return float(np.trace(m))
