"""Safe time-optimal navigation for underactuated vehicles in strong
time-varying flow fields, with closed-loop replanning under imperfect
forecasts."""

from . import (
    controllers,
    errors,
    flowfield,
    forecast,
    gridio,
    hjsolver,
    missions,
    simulator,
    stats,
    terrain,
)

__version__ = "0.1.0"
