"""Ground-truth mobility from a fixed EPR behaviour policy, for desk-scale experiments."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import Action, ClientDataset, DomainError, SLOTS_PER_DAY, SpatioTemporalPoint, State, Trajectory
from .env import TransitionConfig, sample_next

# stay, home return, preferential return, explore
DEFAULT_BEHAVIOUR = (0.6, 0.1, 0.2, 0.1)


def synth_day(home: int, day: int, env_cfg: TransitionConfig, rng: np.random.Generator, user: int,
              behaviour: Sequence[float] = DEFAULT_BEHAVIOUR, slots_per_day: int = SLOTS_PER_DAY) -> Trajectory:
    """One day starting at home at the day's first slot, one point per slot."""
    probs = np.asarray(behaviour, dtype=float)
    cdf = np.cumsum(probs / probs.sum())
    state = State.start(SpatioTemporalPoint(day * slots_per_day, home), home)
    for _ in range(slots_per_day - 1):
        a = min(int(np.searchsorted(cdf, rng.random(), side="right")), 3)
        state = sample_next(state, Action(a), env_cfg, rng)
    return Trajectory(user, state.history)


def synth_ground_truth(num_users: int, days: int, env_cfg: TransitionConfig, rng: np.random.Generator,
                       behaviour: Sequence[float] = DEFAULT_BEHAVIOUR, slots_per_day: int = SLOTS_PER_DAY,
                       first_user: int = 0) -> list[ClientDataset]:
    """Per user: a uniformly random home, then ``days`` independent one-day episodes."""
    if num_users < 1 or days < 1:
        raise DomainError("num_users and days must be >= 1")
    if len(behaviour) != 4 or min(behaviour) < 0 or sum(behaviour) <= 0:
        raise DomainError(f"behaviour must be four non-negative weights, got {behaviour}")
    out = []
    for u in range(first_user, first_user + num_users):
        home = int(rng.integers(0, env_cfg.grid.num_locations))
        trajs = [synth_day(home, d, env_cfg, rng, u, behaviour, slots_per_day) for d in range(days)]
        out.append(ClientDataset.from_trajectories(u, trajs, slots_per_day))
    return out


def flatten(datasets: Sequence[ClientDataset]) -> list[Trajectory]:
    return [t for ds in datasets for t in ds.trajectories]
