"""Per-client discriminators that score how plausible a (state, action) pair is."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import neuro as nn
from .core import NUM_ACTIONS, Action, ClientDataset, DomainError, LocationGrid, State, Trajectory
from .features import FeatureConfig, Featurizer, StateBatch, encode, init_encoder

log = logging.getLogger(__name__)

DISC_LR = 1e-3


@dataclass
class PairSet:
    """A batch of (state, action) pairs."""

    states: StateBatch
    actions: np.ndarray

    def __len__(self):
        return len(self.actions)

    def subset(self, idx) -> "PairSet":
        return PairSet(self.states.subset(idx), self.actions[idx])


def label_actions(trajectory: Trajectory, home: int) -> np.ndarray:
    """EPR action explaining each consecutive move. Precedence: stay, home, return, explore."""
    locs = trajectory.locations
    out = np.zeros(max(len(locs) - 1, 0), dtype=np.int64)
    seen: set[int] = set()
    for t in range(len(locs) - 1):
        cur, nxt = locs[t], locs[t + 1]
        seen.add(cur)
        if nxt == cur:
            out[t] = Action.STAY
        elif nxt == home:
            out[t] = Action.HOME_RETURN
        elif nxt in seen:
            out[t] = Action.PREFERENTIAL_RETURN
        else:
            out[t] = Action.EXPLORE
    return out


def extract_pairs(trajectory: Trajectory, home: int) -> list[tuple[State, Action]]:
    if len(trajectory) < 2:
        return []
    labels = label_actions(trajectory, home)
    state = State.start(trajectory.points[0], home)
    pairs = []
    for t, a in enumerate(labels):
        pairs.append((state, Action(int(a))))
        state = State(state.history + (trajectory.points[t + 1],), home)
    return pairs


def pairs_from_trajectories(featurizer: Featurizer, trajectories: Sequence[Trajectory],
                            homes: Sequence[int]) -> PairSet:
    actions = [label_actions(t, h) for t, h in zip(trajectories, homes)]
    acts = np.concatenate(actions) if actions else np.zeros(0, dtype=np.int64)
    return PairSet(featurizer.encode_prefixes(trajectories, homes), acts.astype(np.int64))


def bce_loss(pos_logits: nn.Tensor, neg_logits: nn.Tensor) -> nn.Tensor:
    """mean(-log D) over positives + mean(-log(1 - D)) over negatives, from logits."""
    return nn.add(nn.mean(nn.softplus(nn.mul(pos_logits, -1.0))), nn.mean(nn.softplus(neg_logits)))


class PersonalDiscriminator:
    def __init__(self, user: int, grid: LocationGrid, feat_cfg: FeatureConfig = FeatureConfig(),
                 rng: np.random.Generator | None = None, params: nn.ParameterSet | None = None,
                 lr: float = DISC_LR):
        self.user = user
        self.grid = grid
        self.feat_cfg = feat_cfg
        self.featurizer = Featurizer(grid, feat_cfg)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = nn.ParameterSet()
            init_encoder(params, grid, feat_cfg, rng)
            width = feat_cfg.model_dim + feat_cfg.action_dim
            params.add("d.act_emb", rng.normal(0.0, 0.1, size=(NUM_ACTIONS, feat_cfg.action_dim)))
            params.add("d.w1", nn.glorot(rng, width, feat_cfg.hidden))
            params.add("d.b1", np.zeros(feat_cfg.hidden))
            params.add("d.wo", np.zeros((feat_cfg.hidden, 1)))
            params.add("d.bo", np.zeros(1))
        self.params = params
        self.opt = nn.OptimizerState(lr=lr)
        self._positives: PairSet | None = None

    def logits(self, pairs: PairSet) -> nn.Tensor:
        p = self.params
        rep = encode(p, pairs.states)
        x = nn.concat([rep, nn.embed(pairs.actions, p["d.act_emb"])], axis=-1)
        hid = nn.tanh(nn.linear(x, p["d.w1"], p["d.b1"]))
        return nn.reshape(nn.linear(hid, p["d.wo"], p["d.bo"]), (len(pairs),))

    def score_pairs(self, pairs: PairSet) -> np.ndarray:
        """Plausibility in (0, 1) for each pair."""
        if len(pairs) == 0:
            return np.zeros(0)
        z = self.logits(pairs).data
        # keep strictly inside (0, 1) even when the logit saturates
        return np.clip(nn._sigmoid(z), 1e-12, 1.0 - 1e-12)


def score(disc: PersonalDiscriminator, state: State, action: Action) -> float:
    pairs = PairSet(disc.featurizer.encode_states([state]), np.array([int(action)]))
    return float(disc.score_pairs(pairs)[0])


def discriminator_loss(disc: PersonalDiscriminator, positives: PairSet, negatives: PairSet) -> nn.Tensor:
    if len(positives) == 0 or len(negatives) == 0:
        raise DomainError("discriminator loss needs non-empty positive and negative sets")
    # one pass over both sets: half the graph nodes of two separate passes
    both = PairSet(StateBatch.concat([positives.states, negatives.states]),
                   np.concatenate([positives.actions, negatives.actions]))
    z = disc.logits(both)
    n = len(positives)
    return bce_loss(nn.index(z, slice(0, n)), nn.index(z, slice(n, None)))


def _minibatch(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(n, size=min(size, n), replace=False)


def train_local(disc: PersonalDiscriminator, client: ClientDataset, synthetic: Sequence[Trajectory],
                synthetic_homes: Sequence[int], iterations: int, batch_size: int,
                rng: np.random.Generator, negatives: PairSet | None = None
                ) -> tuple[PersonalDiscriminator, list[float], str]:
    """k Adam steps on the personal loss. Returns (disc, loss trace, status).

    ``negatives`` may carry the already-extracted pairs of ``synthetic``.
    """
    if disc._positives is None:
        disc._positives = pairs_from_trajectories(
            disc.featurizer, client.trajectories, [client.home] * len(client.trajectories))
    positives = disc._positives
    if len(positives) == 0:
        log.warning("client %s has no extractable state-action pair; skipping local training", client.user)
        return disc, [], "skipped"
    if negatives is None:
        negatives = pairs_from_trajectories(disc.featurizer, synthetic, synthetic_homes)
    if len(negatives) == 0:
        raise DomainError("synthetic batch yields no state-action pairs")
    trace = []
    for _ in range(iterations):
        pos = positives.subset(_minibatch(len(positives), batch_size, rng))
        neg = negatives.subset(_minibatch(len(negatives), batch_size, rng))
        loss = discriminator_loss(disc, pos, neg)
        grads = nn.backward(loss, disc.params)
        nn.optimizer_step(disc.params, grads, disc.opt)
        trace.append(loss.item())
    return disc, trace, "ok"
