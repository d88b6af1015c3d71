"""Statistical fidelity of generated trajectories against real ones.

Five metrics are turned into probability distributions and compared with the
Jensen-Shannon divergence (natural log, so values lie in [0, ln 2]):

* radius   - radius of gyration per trajectory
* dailyloc - distinct locations per trajectory-day
* distance - jump length between consecutive records
* grank    - visit share of the globally top-ranked locations
* irank    - visit share of each user's own top-ranked locations, averaged
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DomainError, LocationGrid, SLOTS_PER_DAY, Trajectory, grid_distance

METRICS = ("radius", "dailyloc", "distance", "grank", "irank")


@dataclass(frozen=True)
class EvalConfig:
    slots_per_day: int = SLOTS_PER_DAY
    log_bins: int = 30
    daily_max: int = 30
    top_k: int = 100


@dataclass
class MetricDistribution:
    name: str
    edges: np.ndarray
    mass: np.ndarray

    def labels(self) -> list[str]:
        if self.name in ("grank", "irank"):
            return [str(i + 1) for i in range(len(self.mass))]
        if self.name == "dailyloc":
            return [str(i) for i in range(1, len(self.mass))] + [f">{len(self.mass) - 1}"]
        mids = [0.0] + [math.sqrt(a * b) for a, b in zip(self.edges[1:-1], self.edges[2:])]
        return [f"{m:.6g}" for m in mids]


@dataclass
class MetricReport:
    real: dict[str, MetricDistribution] = field(default_factory=dict)
    synthetic: dict[str, MetricDistribution] = field(default_factory=dict)
    jsd: dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = ["# mobgail-metrics v1", "metric\tjsd"]
        lines += [f"{m}\t{self.jsd[m]:.6f}" for m in METRICS if m in self.jsd]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "metrics.tsv"]
        paths[0].write_text(self.to_text())
        for m in self.jsd:
            for tag, dist in (("real", self.real[m]), ("synthetic", self.synthetic[m])):
                p = out / f"hist_{m}_{tag}.tsv"
                rows = [f"{lab}\t{mass:.10g}" for lab, mass in zip(dist.labels(), dist.mass)]
                p.write_text("\n".join(["bin\tmass"] + rows) + "\n")
                paths.append(p)
        return paths


# -- per-trajectory statistics ---------------------------------------------------


def radius_of_gyration(trajectory: Trajectory, grid: LocationGrid) -> float:
    if not trajectory.points:
        raise DomainError("radius of gyration of an empty trajectory")
    xy = np.array([grid.center(p.loc) for p in trajectory.points])
    centroid = xy.mean(axis=0)
    return float(np.sqrt(((xy - centroid) ** 2).sum(axis=1).mean()))


def daily_locations(trajectory: Trajectory, slots_per_day: int = SLOTS_PER_DAY) -> list[int]:
    days: dict[int, set[int]] = defaultdict(set)
    for p in trajectory.points:
        days[p.slot // slots_per_day].add(p.loc)
    return [len(days[d]) for d in sorted(days)]


def jump_distances(trajectory: Trajectory, grid: LocationGrid) -> list[float]:
    locs = trajectory.locations
    return [grid_distance(a, b, grid) for a, b in zip(locs, locs[1:])]


def _rank_vector(counts: Counter, top_k: int) -> np.ndarray:
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    vec = np.zeros(top_k)
    vec[:len(ranked)] = [c for _, c in ranked]
    total = vec.sum()
    return vec / total if total > 0 else vec


def g_rank(trajectories: Sequence[Trajectory], top_k: int) -> np.ndarray:
    if not trajectories:
        raise DomainError("g_rank of an empty trajectory set")
    return _rank_vector(Counter(p.loc for t in trajectories for p in t.points), top_k)


def i_rank(trajectories: Sequence[Trajectory], top_k: int) -> np.ndarray:
    if not trajectories:
        raise DomainError("i_rank of an empty trajectory set")
    per_user: dict[int, Counter] = defaultdict(Counter)
    for t in trajectories:
        per_user[t.user].update(p.loc for p in t.points)
    vecs = [_rank_vector(per_user[u], top_k) for u in sorted(per_user)]
    avg = np.mean(vecs, axis=0)
    return avg / avg.sum()


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in nats; 0 * log(0 / x) counts as 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DomainError(f"distributions differ in length: {p.shape} vs {q.shape}")
    total = p + q  # KL(a || m) with m = total / 2, written so subnormal masses cannot underflow m

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(2.0 * a[nz] / total[nz])))

    a, b = kl(p), kl(q)
    return min(max(0.5 * (a + b), 0.0), math.log(2.0))


# -- histograms -----------------------------------------------------------


def log_edges(grid: LocationGrid, bins: int) -> np.ndarray:
    lo = grid.cell_size / 2.0
    hi = max(grid.diagonal, grid.cell_size)
    return np.concatenate([[0.0], np.geomspace(lo, hi, bins + 1)])


def log_histogram(name: str, values: Sequence[float], edges: np.ndarray) -> MetricDistribution:
    """Bin 0 holds exact zeros; positive values are clipped into the log range."""
    v = np.asarray(values, dtype=float)
    mass = np.zeros(len(edges) - 1)
    if v.size:
        zero = v <= 0.0
        mass[0] = zero.sum()
        pos = np.clip(v[~zero], edges[1], edges[-1])
        mass[1:] = np.histogram(pos, bins=edges[1:])[0]
        mass /= v.size
    return MetricDistribution(name, edges, mass)


def daily_histogram(values: Sequence[int], daily_max: int) -> MetricDistribution:
    edges = np.concatenate([np.arange(daily_max + 1) + 0.5, [np.inf]])
    v = np.clip(np.asarray(values, dtype=float), 1, daily_max + 1)
    mass = np.histogram(v, bins=edges)[0].astype(float)
    if v.size:
        mass /= v.size
    return MetricDistribution("dailyloc", edges, mass)


def metric_distributions(trajectories: Sequence[Trajectory], grid: LocationGrid, cfg: EvalConfig,
                         top_k: int) -> dict[str, MetricDistribution]:
    edges = log_edges(grid, cfg.log_bins)
    radius = [radius_of_gyration(t, grid) for t in trajectories]
    daily = [n for t in trajectories for n in daily_locations(t, cfg.slots_per_day)]
    dist = [d for t in trajectories for d in jump_distances(t, grid)]
    rank_edges = np.arange(top_k + 1, dtype=float)
    return {
        "radius": log_histogram("radius", radius, edges),
        "dailyloc": daily_histogram(daily, cfg.daily_max),
        "distance": log_histogram("distance", dist, edges),
        "grank": MetricDistribution("grank", rank_edges, g_rank(trajectories, top_k)),
        "irank": MetricDistribution("irank", rank_edges, i_rank(trajectories, top_k)),
    }


def evaluate(real: Sequence[Trajectory], synthetic: Sequence[Trajectory], grid: LocationGrid,
             cfg: EvalConfig = EvalConfig()) -> MetricReport:
    """Per-metric JSD between the real and synthetic sets over shared bins.

    Bin layout depends on the grid and, for the rank metrics, on the number of
    distinct locations in the real set only.
    """
    if not real or not synthetic:
        raise DomainError("evaluate needs non-empty real and synthetic sets")
    distinct = len({p.loc for t in real for p in t.points})
    top_k = max(1, min(cfg.top_k, distinct))
    r = metric_distributions(real, grid, cfg, top_k)
    s = metric_distributions(synthetic, grid, cfg, top_k)
    return MetricReport(r, s, {m: jsd(r[m].mass, s[m].mass) for m in METRICS})
