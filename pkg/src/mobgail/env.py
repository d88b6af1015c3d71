"""EPR state-transition kernel: where a user goes next given the chosen action."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import Action, LocationGrid, State, DomainError

DEFAULT_ALPHA = 0.55


@dataclass(frozen=True)
class TransitionConfig:
    grid: LocationGrid
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class NextLocationDistribution:
    support: tuple[tuple[int, float], ...]
    fallback: bool = False

    def as_dict(self) -> dict[int, float]:
        return dict(self.support)

    @property
    def locations(self) -> np.ndarray:
        return np.fromiter((loc for loc, _ in self.support), dtype=np.int64, count=len(self.support))

    @property
    def probabilities(self) -> np.ndarray:
        return np.fromiter((p for _, p in self.support), dtype=float, count=len(self.support))


@lru_cache(maxsize=16)
def distance_order(grid: LocationGrid) -> np.ndarray:
    """Row i lists every location id sorted by distance from i, ties by id."""
    xy = grid.centers()
    d2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1)
    ids = np.broadcast_to(np.arange(grid.num_locations), d2.shape)
    return np.lexsort((ids, d2), axis=1)


@lru_cache(maxsize=16)
def _rank_weights(n: int, alpha: float) -> np.ndarray:
    """Unnormalised rank^-alpha weights for ranks 1..n."""
    w = np.arange(1, n + 1, dtype=float) ** -alpha
    w.flags.writeable = False
    return w


def _kernel(state: State, action: Action, cfg: TransitionConfig) -> tuple[np.ndarray, np.ndarray | None, bool]:
    """(candidate locations, unnormalised weights or None for a point mass, fallback flag)."""
    current = state.current.loc
    if action == Action.STAY:
        return np.array([current]), None, False
    if action == Action.HOME_RETURN:
        return np.array([state.home]), None, False
    if action == Action.PREFERENTIAL_RETURN:
        eligible = sorted(
            (loc, n) for loc, n in state.visit_counts.items() if loc != state.home and loc != current
        )
        if not eligible:
            return np.array([current]), None, True
        return np.array([loc for loc, _ in eligible]), np.array([n for _, n in eligible], dtype=float), False
    # explore: home counts as visited from the start
    n = cfg.grid.num_locations
    blocked = np.zeros(n, dtype=bool)
    blocked[list(state.visit_counts)] = True
    blocked[state.home] = True
    order = distance_order(cfg.grid)[current]
    candidates = order[~blocked[order]]
    if not len(candidates):
        return np.array([current]), None, True
    return candidates, _rank_weights(n, cfg.alpha)[:len(candidates)], False


def transition_distribution(state: State, action: Action, cfg: TransitionConfig) -> NextLocationDistribution:
    locs, weights, fallback = _kernel(state, Action(action), cfg)
    if weights is None:
        return NextLocationDistribution(((int(locs[0]), 1.0),), fallback)
    probs = weights / weights.sum()
    return NextLocationDistribution(tuple(zip(locs.tolist(), probs.tolist())), fallback)


def sample_next(state: State, action: Action, cfg: TransitionConfig, rng: np.random.Generator) -> State:
    """Advance one slot, drawing the next location from the transition kernel.

    Always consumes exactly one uniform draw so streams stay aligned across actions.
    """
    locs, weights, _ = _kernel(state, Action(action), cfg)
    u = rng.random()
    if weights is None:
        return state.advance(int(locs[0]))
    cdf = np.cumsum(weights)
    idx = min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(cdf) - 1)
    return state.advance(int(locs[idx]))
