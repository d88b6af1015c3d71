"""Domain types: the location grid, trajectories, MDP states and EPR actions."""

from __future__ import annotations

import enum
import math
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

SLOTS_PER_DAY = 48
NIGHT_START_HOUR = 22
NIGHT_END_HOUR = 6
EARTH_RADIUS_M = 6_371_000.0


class DomainError(ValueError):
    """Raised when an input violates an operation's precondition."""


@dataclass(frozen=True)
class LocationGrid:
    """Flat grid of square cells. Location id = row * width + col."""

    width: int
    height: int
    cell_size: float = 500.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DomainError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.cell_size > 0:
            raise DomainError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def num_locations(self) -> int:
        return self.width * self.height

    @property
    def diagonal(self) -> float:
        return self.cell_size * math.hypot(self.width - 1, self.height - 1)

    def check(self, loc: int) -> int:
        if not (0 <= loc < self.num_locations):
            raise DomainError(f"location id {loc} outside [0, {self.num_locations})")
        return loc

    def cell(self, loc: int) -> tuple[int, int]:
        self.check(loc)
        return loc % self.width, loc // self.width

    def center(self, loc: int) -> tuple[float, float]:
        """Cell center in meters relative to the origin cell's center."""
        col, row = self.cell(loc)
        return col * self.cell_size, row * self.cell_size

    def centers(self) -> np.ndarray:
        ids = np.arange(self.num_locations)
        return np.stack([ids % self.width, ids // self.width], axis=1) * float(self.cell_size)

    def locate(self, lat: float, lon: float) -> int:
        """Map a coordinate to a cell by equirectangular projection at the origin."""
        lat0, lon0 = self.origin
        y = math.radians(lat - lat0) * EARTH_RADIUS_M
        x = math.radians(lon - lon0) * EARTH_RADIUS_M * math.cos(math.radians(lat0))
        col = int(math.floor(x / self.cell_size + 0.5))
        row = int(math.floor(y / self.cell_size + 0.5))
        if not (0 <= col < self.width and 0 <= row < self.height):
            raise DomainError(f"coordinate ({lat}, {lon}) falls outside the grid")
        return row * self.width + col


def grid_distance(a: int, b: int, grid: LocationGrid) -> float:
    """Euclidean distance in meters between two cell centers."""
    ax, ay = grid.cell(a)
    bx, by = grid.cell(b)
    return grid.cell_size * math.hypot(ax - bx, ay - by)


@dataclass(frozen=True, order=True)
class SpatioTemporalPoint:
    slot: int
    loc: int

    def __post_init__(self):
        if self.slot < 0:
            raise DomainError(f"slot must be non-negative, got {self.slot}")
        if self.loc < 0:
            raise DomainError(f"location id must be non-negative, got {self.loc}")


@dataclass(frozen=True)
class Trajectory:
    user: int
    points: tuple[SpatioTemporalPoint, ...]

    def __post_init__(self):
        pts = tuple(p if isinstance(p, SpatioTemporalPoint) else SpatioTemporalPoint(*p) for p in self.points)
        object.__setattr__(self, "points", pts)
        for prev, nxt in zip(pts, pts[1:]):
            if nxt.slot <= prev.slot:
                raise DomainError(
                    f"user {self.user}: slots must be strictly increasing ({prev.slot} then {nxt.slot})"
                )

    def __len__(self):
        return len(self.points)

    @property
    def locations(self) -> list[int]:
        return [p.loc for p in self.points]

    def day_aligned(self, slots_per_day: int = SLOTS_PER_DAY) -> "Trajectory":
        """Shift slots so the first point falls on day 0 (keeps time of day)."""
        if not self.points:
            return self
        shift = (self.points[0].slot // slots_per_day) * slots_per_day
        return Trajectory(self.user, tuple(SpatioTemporalPoint(p.slot - shift, p.loc) for p in self.points))


class Action(enum.IntEnum):
    STAY = 0
    HOME_RETURN = 1
    PREFERENTIAL_RETURN = 2
    EXPLORE = 3


NUM_ACTIONS = len(Action)


def visit_histogram(history: Iterable[SpatioTemporalPoint]) -> dict[int, int]:
    return dict(Counter(p.loc for p in history))


@dataclass(frozen=True)
class State:
    """Visit history so far, with the user's home and per-location visit counts."""

    history: tuple[SpatioTemporalPoint, ...]
    home: int
    visit_counts: Mapping[int, int] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.history:
            raise DomainError("a state needs at least one point")
        if self.home < 0:
            raise DomainError(f"invalid home id {self.home}")
        if self.visit_counts is None:
            object.__setattr__(self, "visit_counts", visit_histogram(self.history))

    @classmethod
    def start(cls, point: SpatioTemporalPoint, home: int) -> "State":
        return cls((point,), home, {point.loc: 1})

    @property
    def current(self) -> SpatioTemporalPoint:
        return self.history[-1]

    def advance(self, loc: int) -> "State":
        """Append a point one slot after the current one."""
        counts = dict(self.visit_counts)
        counts[loc] = counts.get(loc, 0) + 1
        nxt = SpatioTemporalPoint(self.current.slot + 1, loc)
        return State(self.history + (nxt,), self.home, counts)

    def visited(self) -> set[int]:
        return set(self.visit_counts)


def is_night(slot: int, slots_per_day: int = SLOTS_PER_DAY) -> bool:
    hour = (slot % slots_per_day) * 24.0 / slots_per_day
    return hour >= NIGHT_START_HOUR or hour < NIGHT_END_HOUR


def _most_frequent(counts: Counter) -> int:
    # smallest id wins ties
    return min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def infer_home(trajectories: Sequence[Trajectory], slots_per_day: int = SLOTS_PER_DAY) -> int:
    """Most visited location during night slots; falls back to all slots."""
    points = [p for t in trajectories for p in t.points]
    if not points:
        raise DomainError("cannot infer a home from an empty trajectory set")
    night = Counter(p.loc for p in points if is_night(p.slot, slots_per_day))
    if night:
        return _most_frequent(night)
    return _most_frequent(Counter(p.loc for p in points))


@dataclass(frozen=True)
class ClientDataset:
    user: int
    trajectories: tuple[Trajectory, ...]
    home: int

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        for t in self.trajectories:
            if t.user != self.user:
                raise DomainError(f"trajectory of user {t.user} in dataset of user {self.user}")

    @classmethod
    def from_trajectories(cls, user: int, trajectories: Sequence[Trajectory],
                          slots_per_day: int = SLOTS_PER_DAY) -> "ClientDataset":
        return cls(user, tuple(trajectories), infer_home(trajectories, slots_per_day))

    def points(self) -> set[tuple[int, int]]:
        return {(p.slot, p.loc) for t in self.trajectories for p in t.points}


def make_rng(seed: int, *purpose: int | str) -> np.random.Generator:
    """Independent stream for (master seed, purpose...).

    Strings in ``purpose`` are hashed with CRC32 so the derivation is stable
    across processes; the resulting ints become the SeedSequence spawn key.
    """
    key = tuple(zlib.crc32(p.encode()) if isinstance(p, str) else int(p) for p in purpose)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
