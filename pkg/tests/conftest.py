import numpy as np
import pytest

from mobgail.core import ClientDataset, LocationGrid, SpatioTemporalPoint, State, Trajectory, make_rng
from mobgail.env import TransitionConfig


@pytest.fixture
def grid5():
    return LocationGrid(5, 5, cell_size=500.0)


@pytest.fixture
def env5(grid5):
    return TransitionConfig(grid5)


def random_state(grid, rng, max_len=12):
    """A state reached by a random walk of up to ``max_len`` points."""
    n = int(rng.integers(1, max_len + 1))
    locs = rng.integers(0, grid.num_locations, size=n)
    pts = tuple(SpatioTemporalPoint(i, int(l)) for i, l in enumerate(locs))
    return State(pts, int(rng.integers(0, grid.num_locations)))


def tiny_clients(grid, n_users=3, days=2, length=12, seed=0):
    """Clients with short random-walk days, for fast plumbing tests."""
    rng = make_rng(seed, "tiny")
    out = []
    for u in range(n_users):
        trajs = []
        for d in range(days):
            locs = rng.integers(0, grid.num_locations, size=length)
            trajs.append(Trajectory(u, tuple(SpatioTemporalPoint(d * 48 + i, int(l)) for i, l in enumerate(locs))))
        out.append(ClientDataset.from_trajectories(u, trajs))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_features():
    """Feature sizes small enough for exhaustive finite-difference checks."""
    from mobgail.features import FeatureConfig
    return FeatureConfig(window=4, loc_dim=4, slot_dim=3, action_dim=2, model_dim=5, hidden=6)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance criteria verdicts, one line each."""
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
