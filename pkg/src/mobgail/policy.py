"""The generator: a stochastic policy over EPR actions, rollouts, and PPO."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import neuro as nn
from .core import NUM_ACTIONS, Action, LocationGrid, SpatioTemporalPoint, State, Trajectory
from .env import TransitionConfig, sample_next
from .features import FeatureConfig, Featurizer, StateBatch, encode, init_encoder


@dataclass(frozen=True)
class PPOConfig:
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 3e-4


class PolicyNet:
    """pi(a|s) with a value head; both read the shared attention encoder."""

    def __init__(self, grid: LocationGrid, feat_cfg: FeatureConfig = FeatureConfig(),
                 rng: np.random.Generator | None = None, params: nn.ParameterSet | None = None,
                 lr: float = PPOConfig.lr):
        self.grid = grid
        self.feat_cfg = feat_cfg
        self.featurizer = Featurizer(grid, feat_cfg)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = nn.ParameterSet()
            init_encoder(params, grid, feat_cfg, rng)
            d, h = feat_cfg.model_dim, feat_cfg.hidden
            params.add("pi.w1", nn.glorot(rng, d, h))
            params.add("pi.b1", np.zeros(h))
            params.add("pi.wa", np.zeros((h, NUM_ACTIONS)))
            params.add("pi.ba", np.zeros(NUM_ACTIONS))
            params.add("v.w1", nn.glorot(rng, d, h))
            params.add("v.b1", np.zeros(h))
            params.add("v.wo", np.zeros((h, 1)))
            params.add("v.bo", np.zeros(1))
        self.params = params
        self.opt = nn.OptimizerState(lr=lr)

    def forward(self, batch: StateBatch) -> tuple[nn.Tensor, nn.Tensor]:
        """Action logits (S, 4) and value estimates (S,)."""
        p = self.params
        rep = encode(p, batch)
        hid = nn.tanh(nn.linear(rep, p["pi.w1"], p["pi.b1"]))
        logits = nn.linear(hid, p["pi.wa"], p["pi.ba"])
        vhid = nn.tanh(nn.linear(rep, p["v.w1"], p["v.b1"]))
        value = nn.reshape(nn.linear(vhid, p["v.wo"], p["v.bo"]), (len(batch),))
        return logits, value

    def probs(self, batch: StateBatch) -> np.ndarray:
        logits, _ = self.forward(batch)
        return np.exp(nn.log_softmax(logits).data)


def action_distribution(policy: PolicyNet, state: State) -> np.ndarray:
    return policy.probs(policy.featurizer.encode_states([state]))[0]


@dataclass
class Rollout:
    """Per-step records for E episodes of T steps each, stored as (E, T) arrays."""

    states: StateBatch | None
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.actions.shape

    @staticmethod
    def concat(rollouts: Sequence["Rollout"]) -> "Rollout":
        def cat(name):
            parts = [getattr(r, name) for r in rollouts]
            return None if any(p is None for p in parts) else np.concatenate(parts)

        return Rollout(StateBatch.concat([r.states for r in rollouts]), cat("actions"), cat("logp"),
                       cat("values"), cat("rewards"), cat("advantages"), cat("returns"))


def _draw(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row of ``probs`` with one uniform per row."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf <= (u * cdf[:, -1])[:, None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def sample_batch(policy: PolicyNet, env_cfg: TransitionConfig, starts: Sequence[State], length: int,
                 rng: np.random.Generator, users: Sequence[int] | None = None) -> tuple[list[Trajectory], Rollout]:
    """Roll out one episode per start state in lockstep.

    Each step draws one uniform for the action of every episode, then the
    environment draws for every episode, in episode order.
    """
    if length < 1:
        raise ValueError(f"episode length must be >= 1, got {length}")
    states = list(starts)
    E = len(states)
    actions = np.zeros((E, length), dtype=np.int64)
    logp = np.zeros((E, length))
    values = np.zeros((E, length))
    for t in range(length):
        batch = policy.featurizer.encode_states(states)
        logits, value = policy.forward(batch)
        lp = nn.log_softmax(logits).data
        actions[:, t] = _draw(np.exp(lp), rng.random(E))
        logp[:, t] = lp[np.arange(E), actions[:, t]]
        values[:, t] = value.data
        states = [sample_next(s, Action(int(actions[e, t])), env_cfg, rng) for e, s in enumerate(states)]
    users = list(range(E)) if users is None else list(users)
    trajs = [Trajectory(u, s.history) for u, s in zip(users, states)]
    homes = [s.home for s in states]
    rollout = Rollout(policy.featurizer.encode_prefixes(trajs, homes), actions, logp, values)
    return trajs, rollout


def sample_trajectory(policy: PolicyNet, env_cfg: TransitionConfig, start: State, length: int,
                      rng: np.random.Generator) -> tuple[Trajectory, Rollout]:
    trajs, rollout = sample_batch(policy, env_cfg, [start], length, rng)
    return trajs[0], rollout


def random_starts(grid: LocationGrid, n: int, rng: np.random.Generator, slot: int = 0) -> list[State]:
    """Start states at uniformly random homes; the server never sees real homes."""
    homes = rng.integers(0, grid.num_locations, size=n)
    return [State.start(SpatioTemporalPoint(slot, int(h)), int(h)) for h in homes]


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    rewards = np.atleast_2d(rewards)
    out = np.zeros_like(rewards, dtype=float)
    acc = np.zeros(rewards.shape[0])
    for t in range(rewards.shape[1] - 1, -1, -1):
        acc = rewards[:, t] + gamma * acc
        out[:, t] = acc
    return out


def compute_advantages(rollout: Rollout, gamma: float = PPOConfig.gamma, gae_lambda: float = PPOConfig.gae_lambda,
                       normalize: bool = True) -> Rollout:
    """Discounted returns and GAE advantages; episodes end without bootstrapping."""
    if rollout.rewards is None:
        raise ValueError("rollout has no rewards")
    rewards = np.atleast_2d(np.asarray(rollout.rewards, dtype=float))
    values = np.atleast_2d(np.asarray(rollout.values, dtype=float))
    E, T = rewards.shape
    next_values = np.concatenate([values[:, 1:], np.zeros((E, 1))], axis=1)
    deltas = rewards + gamma * next_values - values
    adv = np.zeros_like(rewards)
    acc = np.zeros(E)
    for t in range(T - 1, -1, -1):
        acc = deltas[:, t] + gamma * gae_lambda * acc
        adv[:, t] = acc
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    rollout.returns = discounted_returns(rewards, gamma)
    rollout.advantages = adv
    return rollout


def clipped_surrogate(logp_new: nn.Tensor, logp_old: np.ndarray, adv: np.ndarray, clip: float) -> nn.Tensor:
    """Per-sample min(r A, clip(r, 1-c, 1+c) A) with r = exp(logp_new - logp_old)."""
    ratio = nn.exp(nn.sub(logp_new, logp_old))
    return nn.minimum(nn.mul(ratio, adv), nn.mul(nn.clip(ratio, 1.0 - clip, 1.0 + clip), adv))


def ppo_loss(policy: PolicyNet, states: StateBatch, actions: np.ndarray, logp_old: np.ndarray,
             adv: np.ndarray, returns: np.ndarray, cfg: PPOConfig) -> tuple[nn.Tensor, dict]:
    logits, value = policy.forward(states)
    lp_all = nn.log_softmax(logits)
    onehot = np.eye(NUM_ACTIONS)[actions]
    logp = nn.sum(nn.mul(lp_all, onehot), axis=-1)
    surr = nn.mean(clipped_surrogate(logp, logp_old, adv, cfg.clip))
    value_loss = nn.mean(nn.square(nn.sub(value, returns)))
    entropy = nn.mean(nn.mul(nn.sum(nn.mul(nn.exp(lp_all), lp_all), axis=-1), -1.0))
    loss = nn.sub(nn.add(nn.mul(surr, -1.0), nn.mul(value_loss, cfg.vf_coef)), nn.mul(entropy, cfg.ent_coef))
    ratio = np.exp(logp.data - logp_old)
    stats = {
        "surrogate": surr.item(),
        "value_loss": value_loss.item(),
        "entropy": entropy.item(),
        "approx_kl": float(np.mean(logp_old - logp.data)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip)),
    }
    return loss, stats


def ppo_update(policy: PolicyNet, rollout: Rollout, cfg: PPOConfig, rng: np.random.Generator) -> tuple[PolicyNet, dict]:
    """Clipped-surrogate PPO epochs over shuffled minibatches; updates ``policy`` in place."""
    if rollout.advantages is None or rollout.returns is None:
        raise ValueError("compute_advantages must run before ppo_update")
    actions = rollout.actions.reshape(-1)
    logp_old = rollout.logp.reshape(-1)
    adv = rollout.advantages.reshape(-1)
    returns = rollout.returns.reshape(-1)
    n = len(actions)
    policy.opt.lr = cfg.lr
    history: list[dict] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch):
            idx = order[lo:lo + cfg.minibatch]
            loss, stats = ppo_loss(policy, rollout.states.subset(idx), actions[idx], logp_old[idx],
                                   adv[idx], returns[idx], cfg)
            stats["loss"] = loss.item()
            grads = nn.backward(loss, policy.params)
            nn.optimizer_step(policy.params, grads, policy.opt)
            history.append(stats)
    if not history:
        return policy, {}
    summary = {k: float(np.mean([h[k] for h in history])) for k in history[0]}
    summary["updates"] = len(history)
    return policy, summary
