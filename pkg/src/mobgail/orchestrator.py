"""Federated training loop: server policy, client discriminators, message contract.

Every message crosses a serialization boundary (JSON bytes) and is recorded
in a trace, so the data that leaves a client can be audited afterwards.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import neuro as nn
from .aggregation import DPBudget, Mode, aggregate_batch, noise_free
from .core import ClientDataset, DomainError, SpatioTemporalPoint, Trajectory, make_rng
from .discriminator import DISC_LR, PersonalDiscriminator, pairs_from_trajectories, train_local
from .env import TransitionConfig
from .features import FeatureConfig
from .policy import PolicyNet, PPOConfig, compute_advantages, ppo_update, random_starts, sample_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoundConfig:
    num_rounds: int = 60
    batch_trajectories: int = 32
    episode_length: int = 47
    local_iterations: int = 5
    disc_batch: int = 64
    beta: float = 0.0
    budget: DPBudget | None = None  # None: noise-free over the participating clients
    seed: int = 0
    checkpoint_every: int = 0

    def validate(self) -> list[str]:
        errors = []
        for name in ("batch_trajectories", "episode_length", "local_iterations", "disc_batch"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_rounds < 0:
            errors.append(f"num_rounds must be >= 0, got {self.num_rounds}")
        if self.beta < 0:
            errors.append(f"beta must be >= 0, got {self.beta}")
        if self.budget is not None and self.budget.mode == Mode.MEAN_ONLY and self.beta > 0:
            errors.append("beta > 0 needs a compensated budget (set kappa) or a noise-free run")
        if self.checkpoint_every < 0:
            errors.append(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        return errors


# -- messages -------------------------------------------------------------------


@dataclass
class ServerToClientMsg:
    round: int
    kind: str  # "train" or "query"
    trajectories: list[Trajectory]
    homes: list[int]
    _pairs: dict = field(default_factory=dict, repr=False, compare=False)

    def pairs(self, featurizer):
        """State-action pairs of the batch; cached per featurizer setup since every client derives the same."""
        key = (featurizer.grid, featurizer.cfg)
        if key not in self._pairs:
            self._pairs[key] = pairs_from_trajectories(featurizer, self.trajectories, self.homes)
        return self._pairs[key]

    def serialize(self) -> bytes:
        body = {
            "round": self.round,
            "kind": self.kind,
            "trajectories": [[t.user, [[p.slot, p.loc] for p in t.points]] for t in self.trajectories],
            "homes": list(self.homes),
        }
        return json.dumps(body, separators=(",", ":")).encode()

    @classmethod
    def deserialize(cls, raw: bytes) -> "ServerToClientMsg":
        body = json.loads(raw)
        trajs = [Trajectory(int(u), tuple(SpatioTemporalPoint(int(s), int(l)) for s, l in pts))
                 for u, pts in body["trajectories"]]
        return cls(int(body["round"]), str(body["kind"]), trajs, [int(h) for h in body["homes"]])


@dataclass
class ClientToServerMsg:
    """Only (round, pair index, score) ever leaves a client."""

    round: int
    scores: list[tuple[int, float]]

    def serialize(self) -> bytes:
        body = {"round": self.round, "scores": [[int(i), float(s)] for i, s in self.scores]}
        return json.dumps(body, separators=(",", ":")).encode()

    @classmethod
    def deserialize(cls, raw: bytes) -> "ClientToServerMsg":
        body = json.loads(raw)
        if set(body) != {"round", "scores"}:
            raise DomainError(f"unexpected upload fields {sorted(body)}")
        return cls(int(body["round"]), [(int(i), float(s)) for i, s in body["scores"]])


@dataclass
class TraceEntry:
    direction: str  # "down" or "up"
    client: int
    round: int
    payload: bytes


class Transport:
    """In-process channel that serializes and records every message."""

    def __init__(self):
        self.trace: list[TraceEntry] = []

    def down(self, client: int, msg: ServerToClientMsg) -> ServerToClientMsg:
        raw = msg.serialize()
        self.trace.append(TraceEntry("down", client, msg.round, raw))
        return ServerToClientMsg.deserialize(raw)

    def broadcast(self, clients: Sequence[int], msg: ServerToClientMsg) -> ServerToClientMsg:
        """Same payload to several clients: serialized and decoded once, recorded per client.

        The decoded message is immutable in practice, so sharing it is safe.
        """
        raw = msg.serialize()
        for c in clients:
            self.trace.append(TraceEntry("down", c, msg.round, raw))
        return ServerToClientMsg.deserialize(raw)

    def up(self, client: int, msg: ClientToServerMsg) -> ClientToServerMsg:
        raw = msg.serialize()
        self.trace.append(TraceEntry("up", client, msg.round, raw))
        return ClientToServerMsg.deserialize(raw)


# -- participants -----------------------------------------------------------------


class Client:
    def __init__(self, dataset: ClientDataset, disc: PersonalDiscriminator):
        self.dataset = dataset
        self.disc = disc

    @property
    def user(self) -> int:
        return self.dataset.user

    def local_train(self, msg: ServerToClientMsg, iterations: int, batch: int, rng: np.random.Generator):
        _, trace, status = train_local(self.disc, self.dataset, msg.trajectories, msg.homes, iterations, batch, rng,
                                       negatives=msg.pairs(self.disc.featurizer))
        return trace, status

    def score(self, msg: ServerToClientMsg) -> ClientToServerMsg:
        scores = self.disc.score_pairs(msg.pairs(self.disc.featurizer))
        return ClientToServerMsg(msg.round, list(enumerate(scores.tolist())))


@dataclass
class FederatedState:
    policy: PolicyNet
    clients: list[Client]
    env_cfg: TransitionConfig
    ppo_cfg: PPOConfig
    transport: Transport = field(default_factory=Transport)
    round: int = 0


@dataclass
class RoundReport:
    round: int
    active_users: int
    excluded: list[int]
    skipped: list[int]
    disc_loss: float
    mean_reward: float
    mean_compensated: float
    mean_xi: float
    lambda_mean: float
    lambda_var: float
    ppo: dict

    def to_dict(self) -> dict:
        return asdict(self)


def init_state(clients: Sequence[ClientDataset], env_cfg: TransitionConfig, seed: int,
               feat_cfg: FeatureConfig = FeatureConfig(), ppo_cfg: PPOConfig = PPOConfig(),
               disc_lr: float = DISC_LR) -> FederatedState:
    grid = env_cfg.grid
    policy = PolicyNet(grid, feat_cfg, make_rng(seed, "init", "policy"), lr=ppo_cfg.lr)
    parts = [Client(ds, PersonalDiscriminator(ds.user, grid, feat_cfg, make_rng(seed, "init", "disc", ds.user),
                                              lr=disc_lr))
             for ds in sorted(clients, key=lambda d: d.user)]
    return FederatedState(policy, parts, env_cfg, ppo_cfg)


def run_round(state: FederatedState, cfg: RoundConfig) -> RoundReport:
    """One pass of: sample, local discriminator training, reward query, aggregation, PPO."""
    r = state.round
    seed = cfg.seed
    grid = state.env_cfg.grid
    if len(state.clients) < 2:
        raise DomainError("a round needs at least two clients")

    # (a) synthetic batch for discriminator negatives
    rng_roll = make_rng(seed, "rollout", r)
    train_trajs, _ = sample_batch(state.policy, state.env_cfg,
                                  random_starts(grid, cfg.batch_trajectories, rng_roll),
                                  cfg.episode_length, rng_roll)
    train_homes = [t.points[0].loc for t in train_trajs]

    # (b) local training
    active, excluded, skipped, losses = [], [], [], []
    train_msg = state.transport.broadcast([c.user for c in state.clients],
                                          ServerToClientMsg(r, "train", train_trajs, train_homes))
    for c in state.clients:
        try:
            trace, status = c.local_train(train_msg, cfg.local_iterations, cfg.disc_batch, make_rng(seed, "client", c.user, r))
            if status == "skipped":
                skipped.append(c.user)
            losses.extend(trace[-1:])
            active.append(c)
        except Exception as exc:  # a failing device drops out of this round only
            log.warning("round %d: client %s failed during local training: %s", r, c.user, exc)
            excluded.append(c.user)

    # (c) fresh batch for reward queries
    query_trajs, rollout = sample_batch(state.policy, state.env_cfg,
                                        random_starts(grid, cfg.batch_trajectories, rng_roll),
                                        cfg.episode_length, rng_roll)
    query_homes = [t.points[0].loc for t in query_trajs]
    n_pairs = rollout.actions.size

    # (d) clients score every pair
    rows, users = [], []
    query_msg = state.transport.broadcast([c.user for c in active],
                                          ServerToClientMsg(r, "query", query_trajs, query_homes))
    for c in active:
        try:
            up = state.transport.up(c.user, c.score(query_msg))
            row = np.full(n_pairs, np.nan)
            for i, s in up.scores:
                row[i] = s
            if np.isnan(row).any():
                raise DomainError("incomplete score upload")
            rows.append(row)
            users.append(c.user)
        except Exception as exc:
            log.warning("round %d: client %s failed while scoring: %s", r, c.user, exc)
            excluded.append(c.user)
    if len(rows) < 2:
        raise DomainError(f"round {r}: fewer than two clients returned scores")

    # (e) private aggregation, budget sized to the clients that answered
    budget = cfg.budget.with_users(len(rows)) if cfg.budget is not None else noise_free(len(rows))
    if cfg.budget is None and len(rows) != len(state.clients):
        log.warning("round %d: aggregating over %d of %d clients", r, len(rows), len(state.clients))
    agg = aggregate_batch(np.stack(rows), cfg.beta, budget, make_rng(seed, "noise", r))
    rollout.rewards = agg.compensated.reshape(rollout.shape)

    # (f) policy update
    compute_advantages(rollout, state.ppo_cfg.gamma, state.ppo_cfg.gae_lambda)
    _, stats = ppo_update(state.policy, rollout, state.ppo_cfg, make_rng(seed, "ppo", r))

    state.round += 1
    return RoundReport(
        round=r,
        active_users=len(rows),
        excluded=sorted(set(excluded)),
        skipped=skipped,
        disc_loss=float(np.mean(losses)) if losses else math.nan,
        mean_reward=float(agg.reward.mean()),
        mean_compensated=float(agg.compensated.mean()),
        mean_xi=float(agg.xi.mean()),
        lambda_mean=budget.lambda_mean,
        lambda_var=budget.lambda_var,
        ppo=stats,
    )


@dataclass
class TrainResult:
    policy: PolicyNet
    history: list[RoundReport]
    state: FederatedState


def train(cfg: RoundConfig, clients: Sequence[ClientDataset], env_cfg: TransitionConfig,
          feat_cfg: FeatureConfig = FeatureConfig(), ppo_cfg: PPOConfig = PPOConfig(), disc_lr: float = DISC_LR,
          out_dir: str | Path | None = None, state: FederatedState | None = None) -> TrainResult:
    errors = cfg.validate()
    if errors:
        raise DomainError("invalid round config: " + "; ".join(errors))
    if state is None:
        state = init_state(clients, env_cfg, cfg.seed, feat_cfg, ppo_cfg, disc_lr)
    if cfg.budget is not None and cfg.budget.num_users != len(state.clients):
        raise DomainError(f"budget sized for {cfg.budget.num_users} users but {len(state.clients)} clients given")
    out = Path(out_dir) if out_dir is not None else None
    history = []
    for _ in range(cfg.num_rounds):
        report = run_round(state, cfg)
        history.append(report)
        log.info("round %d: reward %.4f disc loss %.4f", report.round, report.mean_compensated, report.disc_loss)
        if out is not None:
            with open(out / "history.jsonl", "a") as fh:
                fh.write(json.dumps(report.to_dict()) + "\n")
            if cfg.checkpoint_every and state.round % cfg.checkpoint_every == 0:
                nn.save_params(state.policy.params, out / f"policy_round{state.round:04d}.npz",
                               {"round": str(state.round)})
    return TrainResult(state.policy, history, state)


# -- audit ----------------------------------------------------------------------


@dataclass
class AuditVerdict:
    passed: bool
    uploads: int
    violations: list[str]

    def __str__(self):
        head = "PASS" if self.passed else "FAIL"
        return "\n".join([f"{head} ({self.uploads} uploads checked)"] + self.violations)


def real_point_registry(clients: Sequence[ClientDataset]) -> set[tuple[int, int]]:
    """Every (slot, loc) held in a client's private store, tagged at ingestion."""
    tagged = set()
    for ds in clients:
        tagged |= ds.points()
    return tagged


def _int_pairs(obj):
    if isinstance(obj, list):
        if len(obj) == 2 and all(isinstance(v, int) and not isinstance(v, bool) for v in obj):
            yield tuple(obj)
        for v in obj:
            yield from _int_pairs(v)
    elif isinstance(obj, dict):
        for v in obj.values():
            yield from _int_pairs(v)


def message_audit(trace: Sequence[TraceEntry], real_points: set[tuple[int, int]]) -> AuditVerdict:
    """PASS iff every upload is exactly {round, [[pair index, score], ...]} and carries no real point."""
    violations = []
    uploads = [e for e in trace if e.direction == "up"]
    for e in uploads:
        where = f"round {e.round} client {e.client}"
        try:
            body = json.loads(e.payload)
        except ValueError:
            violations.append(f"{where}: payload is not valid JSON")
            continue
        if not isinstance(body, dict) or set(body) != {"round", "scores"}:
            keys = sorted(body) if isinstance(body, dict) else type(body).__name__
            violations.append(f"{where}: unexpected fields {keys}")
        elif not isinstance(body["round"], int) or not isinstance(body["scores"], list):
            violations.append(f"{where}: malformed round/scores")
        else:
            for entry in body["scores"]:
                ok = (isinstance(entry, list) and len(entry) == 2 and isinstance(entry[0], int)
                      and isinstance(entry[1], float) and 0.0 < entry[1] < 1.0)
                if not ok:
                    violations.append(f"{where}: malformed score entry {entry!r}")
                    break
        leaked = [p for p in _int_pairs(body) if p in real_points]
        if leaked:
            violations.append(f"{where}: contains {len(leaked)} real (slot, loc) point(s), e.g. {leaked[0]}")
    return AuditVerdict(not violations, len(uploads), violations)
