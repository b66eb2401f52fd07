import numpy as np
import pytest

from driftplan.flowfield import SpaceTimeGrid
from driftplan.terrain import ObstacleMask, SpatialGrid


@pytest.fixture
def small_grid():
    """51x51 desk-scale grid, 200 m spacing, 10 km square domain."""
    return SpaceTimeGrid(x0=0.0, y0=0.0, dx=200.0, dy=200.0,
                         nx=51, ny=51, t0=0.0, dt_snap=3000.0, nt=31)


@pytest.fixture
def island_mask(small_grid):
    """Rectangular island in the middle of the small grid."""
    g = small_grid
    X, Y = g.meshgrid()
    mask = (X >= 3000) & (X <= 7000) & (Y >= 4600) & (Y <= 5400)
    return ObstacleMask(
        grid=SpatialGrid(g.x0, g.y0, g.dx, g.dy, g.nx, g.ny), mask=mask
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
