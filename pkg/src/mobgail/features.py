"""State featurization and the attention encoder shared by policy and discriminators.

A batch of states is stored as a token table (one row per distinct visit
point, plus a padding token at row 0) and an (S, L) array of windows into
that table. A window holds the last L points of a state's history,
left-padded with the padding token.

Batches of whole-trajectory prefixes use a banded layout instead: every
trajectory owns M consecutive rows (L - 1 padding rows, its points, then
trailing padding), and each window is a run of L rows inside that block.
The encoder can then attend over each block at once with a band mask.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import neuro as nn
from .core import LocationGrid, SLOTS_PER_DAY, State, Trajectory


@dataclass(frozen=True)
class FeatureConfig:
    window: int = 24
    loc_dim: int = 32
    slot_dim: int = 8
    action_dim: int = 8
    model_dim: int = 48
    hidden: int = 64
    slots_per_day: int = SLOTS_PER_DAY


@dataclass
class StateBatch:
    locs: np.ndarray      # (P,) location ids, pad id at row 0
    slots: np.ndarray     # (P,) time-of-day slot ids, pad id at row 0
    home_dist: np.ndarray  # (P,) distance to home / grid scale
    windows: np.ndarray   # (S, L) rows into the token table
    contiguous: bool = False  # windows == arange(1, S*L + 1).reshape(S, L)
    band: tuple[int, int] | None = None  # (B, M) for the banded prefix layout

    def __len__(self):
        return len(self.windows)

    def subset(self, idx) -> "StateBatch":
        """Selected states, with the token table cut down to the rows they use.

        When the selected windows share few tokens, every window gets its own
        rows (``contiguous``), which lets the encoder skip gathers and scatters.
        The result is never banded: small selections are cheaper windowed.
        """
        windows = self.windows[idx]
        rows, inverse = np.unique(np.concatenate([[0], windows.reshape(-1)]), return_inverse=True)
        if windows.size <= 1.25 * len(rows):
            flat = np.concatenate([[0], windows.reshape(-1)])
            return StateBatch(self.locs[flat], self.slots[flat], self.home_dist[flat],
                              np.arange(1, windows.size + 1, dtype=np.int64).reshape(windows.shape), True)
        windows = inverse[1:].reshape(windows.shape)
        return StateBatch(self.locs[rows], self.slots[rows], self.home_dist[rows], windows.astype(np.int64))

    def _widen(self, M: int) -> "StateBatch":
        """Same banded batch with every block padded at its end to M rows."""
        B, M0 = self.band
        if M == M0:
            return self
        rows = np.zeros((B, M), dtype=np.int64)
        rows[:, :M0] = 1 + np.arange(B * M0).reshape(B, M0)
        rows = np.concatenate([[0], rows.reshape(-1)])
        block = (self.windows[:, 0] - 1) // M0
        return StateBatch(self.locs[rows], self.slots[rows], self.home_dist[rows],
                          self.windows + (block * (M - M0))[:, None], band=(B, M))

    @staticmethod
    def concat(batches: Sequence["StateBatch"]) -> "StateBatch":
        """Stack batches; banded inputs stay banded, with blocks widened to the largest."""
        band = None
        if all(b.band is not None for b in batches):
            M = max(b.band[1] for b in batches)
            batches = [b._widen(M) for b in batches]
            band = (sum(b.band[0] for b in batches), M)
        locs, slots, dist, windows = [], [], [], []
        offset = 0
        for b in batches:
            locs.append(b.locs[1:])
            slots.append(b.slots[1:])
            dist.append(b.home_dist[1:])
            w = b.windows.copy()
            w[w > 0] += offset
            windows.append(w)
            offset += len(b.locs) - 1
        first = batches[0]
        return StateBatch(
            np.concatenate([first.locs[:1]] + locs),
            np.concatenate([first.slots[:1]] + slots),
            np.concatenate([first.home_dist[:1]] + dist),
            np.concatenate(windows),
            band is None and all(b.contiguous for b in batches),
            band,
        )


class Featurizer:
    def __init__(self, grid: LocationGrid, cfg: FeatureConfig = FeatureConfig()):
        self.grid = grid
        self.cfg = cfg
        self.pad_loc = grid.num_locations
        self.pad_slot = cfg.slots_per_day
        self._xy = grid.centers()
        self._scale = max(grid.diagonal, grid.cell_size)

    def _dist(self, locs: np.ndarray, homes: np.ndarray) -> np.ndarray:
        d = self._xy[locs] - self._xy[homes]
        return np.hypot(d[:, 0], d[:, 1]) / self._scale

    def _tokens(self, seqs: Sequence[tuple[Sequence, int]]):
        """Token table for several (points, home) sequences; returns per-seq offsets and lengths."""
        lengths = np.array([len(points) for points, _ in seqs], dtype=np.int64)
        offsets = 1 + np.concatenate([[0], np.cumsum(lengths)[:-1]]) if len(seqs) else np.zeros(0, np.int64)
        locs = np.fromiter((p.loc for points, _ in seqs for p in points), dtype=np.int64, count=int(lengths.sum()))
        slots = np.fromiter((p.slot for points, _ in seqs for p in points), dtype=np.int64, count=len(locs))
        homes = np.repeat(np.array([h for _, h in seqs], dtype=np.int64), lengths)
        dist = np.concatenate([[0.0], self._dist(locs, homes)])
        locs = np.concatenate([[self.pad_loc], locs])
        slots = np.concatenate([[self.pad_slot], slots % self.cfg.slots_per_day])
        return locs, slots, dist, offsets.astype(np.int64), lengths

    def _windows(self, offsets: np.ndarray, ends: np.ndarray) -> np.ndarray:
        """(S, L) windows; row s ends at sequence position ends[s] of the sequence at offsets[s]."""
        back = np.arange(self.cfg.window - 1, -1, -1)
        pos = ends[:, None] - back[None, :]
        return np.where(pos >= 0, offsets[:, None] + pos, 0).astype(np.int64)

    def encode_states(self, states: Sequence[State]) -> StateBatch:
        L = self.cfg.window
        locs, slots, dist, offsets, lengths = self._tokens([(s.history[-L:], s.home) for s in states])
        return StateBatch(locs, slots, dist, self._windows(offsets, lengths - 1))

    def encode_prefixes(self, trajectories: Sequence[Trajectory], homes: Sequence[int]) -> StateBatch:
        """States for every prefix ending before the last point of each trajectory (banded layout)."""
        L = self.cfg.window
        locs, slots, dist, offsets, lengths = self._tokens([(t.points, h) for t, h in zip(trajectories, homes)])
        counts = np.maximum(lengths - 1, 0)
        if counts.sum() == 0:
            return StateBatch(locs[:1], slots[:1], dist[:1], np.zeros((0, L), dtype=np.int64))
        B, M = len(lengths), L - 1 + int(lengths.max())
        # row of sequence b, point t in the banded table
        seq = np.repeat(np.arange(B), lengths)
        pos = np.arange(len(seq)) - np.repeat(offsets - 1, lengths)
        dest = 1 + seq * M + (L - 1) + pos
        band_locs = np.full(1 + B * M, self.pad_loc, dtype=np.int64)
        band_slots = np.full(1 + B * M, self.pad_slot, dtype=np.int64)
        band_dist = np.zeros(1 + B * M)
        band_locs[dest], band_slots[dest], band_dist[dest] = locs[1:], slots[1:], dist[1:]
        q_seq = np.repeat(np.arange(B), counts)
        q_end = np.arange(int(counts.sum())) - np.repeat(np.cumsum(counts) - counts, counts)
        windows = 1 + (q_seq * M + q_end)[:, None] + np.arange(L)[None, :]
        return StateBatch(band_locs, band_slots, band_dist, windows.astype(np.int64), band=(B, M))


def init_encoder(params: nn.ParameterSet, grid: LocationGrid, cfg: FeatureConfig, rng: np.random.Generator):
    d_in = cfg.loc_dim + cfg.slot_dim + 1
    params.add("enc.loc_emb", rng.normal(0.0, 0.1, size=(grid.num_locations + 1, cfg.loc_dim)))
    params.add("enc.slot_emb", rng.normal(0.0, 0.1, size=(cfg.slots_per_day + 1, cfg.slot_dim)))
    params.add("enc.w_in", nn.glorot(rng, d_in, cfg.model_dim))
    params.add("enc.b_in", np.zeros(cfg.model_dim))
    for name in ("wq", "wk", "wv"):
        params.add(f"attn.{name}", nn.glorot(rng, cfg.model_dim, cfg.model_dim))


def token_inputs(params: nn.ParameterSet, batch: StateBatch) -> nn.Tensor:
    """Per-token model inputs: [location emb, slot emb, home distance] -> model dim."""
    x = nn.concat([
        nn.embed(batch.locs, params["enc.loc_emb"]),
        nn.embed(batch.slots, params["enc.slot_emb"]),
        nn.Tensor(batch.home_dist[:, None]),
    ], axis=-1)
    return nn.linear(x, params["enc.w_in"], params["enc.b_in"])


def encode(params: nn.ParameterSet, batch: StateBatch) -> nn.Tensor:
    """(S, model_dim) representation of each state's last position."""
    return nn.attend_last(token_inputs(params, batch), batch.windows, params, contiguous=batch.contiguous,
                          band=batch.band)
