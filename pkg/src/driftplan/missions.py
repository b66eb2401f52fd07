"""Mission-set generation: distance-constrained targets with
reachability-certified starts, plus JSON-lines manifests."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleConstraintsError, ParameterError
from .flowfield import FlowSource
from .hjsolver import SolverConfig, TargetSpec, safe_ttr, solve_mtr
from .simulator import Mission
from .terrain import DistanceMap, ObstacleMask


@dataclass(frozen=True)
class SamplingConstraints:
    """Acceptance rules for candidate targets and starts."""

    min_boundary_dist: float
    min_obstacle_dist: float
    max_obstacle_dist: float
    target_radius: float
    ttr_window: tuple[float, float]  # seconds, (lo, hi)
    final_time_horizon: tuple[float, float]  # window to sample t_T from

    def __post_init__(self):
        if not (0 <= self.min_obstacle_dist < self.max_obstacle_dist):
            raise ParameterError("need 0 <= min_obstacle_dist < max_obstacle_dist")
        lo, hi = self.ttr_window
        if not (0 < lo < hi):
            raise ParameterError("ttr_window must satisfy 0 < lo < hi")


def sample_missions(
    region: tuple[float, float, float, float],
    truth: FlowSource,
    obstacles: ObstacleMask,
    dmap: DistanceMap,
    n: int,
    constraints: SamplingConstraints,
    solver_config: SolverConfig,
    seed: int = 0,
    t_max: float | None = None,
    rejection_cap: float = 0.999,
) -> list[Mission]:
    """Rejection-sample n missions.

    Targets are drawn uniformly in the region and filtered by boundary and
    obstacle-distance constraints. Feasibility is certified with an
    obstacle-FREE solve backward from the target: starts are drawn
    uniformly among free grid cells whose time-to-reach falls inside the
    TTR window, and the start time is set so the arrival lands at the
    sampled final time.
    """
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = region
    c = constraints
    lo, hi = c.ttr_window
    if t_max is None:
        t_max = hi * (10.0 / 9.0)  # default slack mirrors a 9-day TTR / 240 h cap
    g = solver_config.grid
    missions: list[Mission] = []
    attempts = 0
    max_attempts = max(20, int(math.ceil(n / max(1e-3, 1.0 - rejection_cap))))
    Xg, Yg = np.meshgrid(g.xs, g.ys)
    while len(missions) < n:
        attempts += 1
        if attempts > max_attempts:
            raise InfeasibleConstraintsError(
                f"accepted {len(missions)}/{n} after {attempts} attempts"
            )
        cx = rng.uniform(xmin, xmax)
        cy = rng.uniform(ymin, ymax)
        boundary_dist = min(cx - xmin, xmax - cx, cy - ymin, ymax - cy)
        if boundary_dist < c.min_boundary_dist:
            continue
        d_obs = dmap.value_at(cx, cy)
        if d_obs < c.min_obstacle_dist or d_obs > c.max_obstacle_dist:
            continue
        t_T = rng.uniform(*c.final_time_horizon)
        target = TargetSpec(center=(cx, cy), radius=c.target_radius)
        vf = solve_mtr(truth, None, target, solver_config, t_T - hi, t_T)
        ttr = safe_ttr(vf, t_T - hi).ttr
        ok = (
            np.isfinite(ttr)
            & (ttr >= lo)
            & (ttr <= hi)
            & ~obstacles.mask
        )
        # keep starts inside the region bounds as well
        ok &= (Xg >= xmin) & (Xg <= xmax) & (Yg >= ymin) & (Yg <= ymax)
        idx = np.argwhere(ok)
        if len(idx) == 0:
            continue
        j, i = idx[rng.integers(len(idx))]
        start_ttr = float(ttr[j, i])
        missions.append(Mission(
            x0=float(Xg[j, i]), y0=float(Yg[j, i]),
            t0=t_T - start_ttr, target=target, t_max=t_max,
        ))
    return missions


def validate_missions(
    missions,
    region,
    dmap: DistanceMap,
    constraints: SamplingConstraints,
) -> list[str]:
    """Independent post-hoc re-check of the distance constraints.

    Returns a list of violation strings, empty when every mission passes.
    Feasibility is certified for the obstacle-free solve only, so this
    validator deliberately does not demand obstacle-aware feasibility.
    """
    xmin, xmax, ymin, ymax = region
    c = constraints
    problems = []
    for k, m in enumerate(missions):
        cx, cy = m.target.center
        bd = min(cx - xmin, xmax - cx, cy - ymin, ymax - cy)
        if bd < c.min_boundary_dist:
            problems.append(f"mission {k}: target too close to boundary ({bd:.1f} m)")
        d = dmap.value_at(cx, cy)
        if d < c.min_obstacle_dist:
            problems.append(f"mission {k}: target too close to obstacles ({d:.1f} m)")
        if d > c.max_obstacle_dist:
            problems.append(f"mission {k}: target too far from obstacles ({d:.1f} m)")
    return problems


def write_missions(missions, path) -> None:
    """One JSON object per line; round-trip exact."""
    with open(path, "w") as fh:
        for m in missions:
            fh.write(json.dumps({
                "x0_m": m.x0, "y0_m": m.y0, "t0_s": m.t0,
                "target_x_m": m.target.center[0],
                "target_y_m": m.target.center[1],
                "target_radius_m": m.target.radius,
                "t_max_s": m.t_max,
            }) + "\n")


_REQUIRED = ("x0_m", "y0_m", "t0_s", "target_x_m", "target_y_m",
             "target_radius_m", "t_max_s")


def read_missions(path) -> list[Mission]:
    missions = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParameterError(f"line {lineno}: malformed JSON: {exc}") from exc
            for key in _REQUIRED:
                if key not in doc:
                    raise ParameterError(f"line {lineno}: missing field {key!r}")
            missions.append(Mission(
                x0=doc["x0_m"], y0=doc["y0_m"], t0=doc["t0_s"],
                target=TargetSpec(
                    center=(doc["target_x_m"], doc["target_y_m"]),
                    radius=doc["target_radius_m"],
                ),
                t_max=doc["t_max_s"],
            ))
    return missions
