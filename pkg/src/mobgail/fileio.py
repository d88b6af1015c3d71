"""Trajectory text files.

Layout (version 1)::

    # mobgail-trajectories v1 width=20 height=20 cell_size=500 slots_per_day=48
    user_id,slot,loc_id
    0,0,137
    0,1,137
    ...

One visit per line, sorted by user id then slot. Each user's visits are
split into one trajectory per calendar day (slot // slots_per_day).
"""

from __future__ import annotations

import re
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

from .core import ClientDataset, DomainError, LocationGrid, SLOTS_PER_DAY, SpatioTemporalPoint, Trajectory

TRAJ_FORMAT = "mobgail-trajectories"
TRAJ_VERSION = 1
COLUMNS = "user_id,slot,loc_id"
_HEADER = re.compile(
    rf"^# {TRAJ_FORMAT} v(\d+) width=(\d+) height=(\d+) cell_size=([0-9.eE+-]+) slots_per_day=(\d+)$"
)
_RECORD = re.compile(r"^(0|[1-9]\d*),(0|[1-9]\d*),(0|[1-9]\d*)$")


def header_line(grid: LocationGrid, slots_per_day: int = SLOTS_PER_DAY) -> str:
    return (f"# {TRAJ_FORMAT} v{TRAJ_VERSION} width={grid.width} height={grid.height} "
            f"cell_size={grid.cell_size:g} slots_per_day={slots_per_day}")


def save_trajectories(path, data: Iterable[ClientDataset | Trajectory], grid: LocationGrid,
                      slots_per_day: int = SLOTS_PER_DAY) -> Path:
    by_user: dict[int, list[SpatioTemporalPoint]] = defaultdict(list)
    for item in data:
        trajs = item.trajectories if isinstance(item, ClientDataset) else (item,)
        for t in trajs:
            by_user[t.user].extend(t.points)
    lines = [header_line(grid, slots_per_day), COLUMNS]
    for user in sorted(by_user):
        for p in sorted(by_user[user]):
            lines.append(f"{user},{p.slot},{p.loc}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_header(path) -> tuple[LocationGrid, int] | None:
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
    if not first:
        return None
    m = _HEADER.match(first)
    if not m:
        raise DomainError(f"{path}:1: not a {TRAJ_FORMAT} file")
    if int(m.group(1)) != TRAJ_VERSION:
        raise DomainError(f"{path}:1: unsupported version {m.group(1)}")
    grid = LocationGrid(int(m.group(2)), int(m.group(3)), float(m.group(4)))
    return grid, int(m.group(5))


def load_trajectories(path, grid: LocationGrid | None = None) -> list[ClientDataset]:
    """Parse a trajectory file strictly; every malformed line is reported."""
    path = Path(path)
    text = path.read_text()
    if text == "":
        return []
    lines = text.split("\n")
    if lines[-1] != "":
        raise DomainError(f"{path}: missing trailing newline")
    lines = lines[:-1]
    file_grid, spd = read_header(path)
    if grid is not None and (grid.width, grid.height, grid.cell_size) != (file_grid.width, file_grid.height,
                                                                         file_grid.cell_size):
        raise DomainError(f"{path}: file grid {file_grid} does not match expected {grid}")
    grid = grid or file_grid
    if len(lines) < 2 or lines[1] != COLUMNS:
        raise DomainError(f"{path}:2: expected column header {COLUMNS!r}")

    errors = []
    records: dict[int, dict[int, int]] = defaultdict(dict)
    order = []
    for lineno, line in enumerate(lines[2:], start=3):
        m = _RECORD.match(line)
        if not m:
            errors.append(f"{path}:{lineno}: malformed record {line!r}")
            continue
        user, slot, loc = (int(g) for g in m.groups())
        if not (0 <= loc < grid.num_locations):
            errors.append(f"{path}:{lineno}: unknown loc_id {loc}")
            continue
        if slot in records[user]:
            errors.append(f"{path}:{lineno}: duplicate (user {user}, slot {slot})")
            continue
        records[user][slot] = loc
        order.append((user, slot))
    if order != sorted(order):
        errors.append(f"{path}: records are not sorted by user then slot")
    if errors:
        raise DomainError("\n".join(errors))

    out = []
    for user in sorted(records):
        days: dict[int, list[SpatioTemporalPoint]] = defaultdict(list)
        for slot in sorted(records[user]):
            days[slot // spd].append(SpatioTemporalPoint(slot, records[user][slot]))
        trajs = [Trajectory(user, tuple(days[d])) for d in sorted(days)]
        out.append(ClientDataset.from_trajectories(user, trajs, spd))
    return out


def load_trajectory_list(path, grid: LocationGrid | None = None) -> list[Trajectory]:
    return [t for ds in load_trajectories(path, grid) for t in ds.trajectories]


def save_generated(path, trajectories: Sequence[Trajectory], grid: LocationGrid,
                   slots_per_day: int = SLOTS_PER_DAY) -> Path:
    """Generated trajectories get one user id each, in order."""
    renum = [Trajectory(i, t.points) for i, t in enumerate(trajectories)]
    return save_trajectories(path, renum, grid, slots_per_day)
