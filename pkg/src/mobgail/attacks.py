"""Privacy-risk harness: white-box membership inference and the uniqueness test."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import neuro as nn
from .aggregation import DPBudget, aggregate_batch
from .core import DomainError, Trajectory
from .discriminator import PairSet, pairs_from_trajectories
from .features import Featurizer

N_FOLDS = 5
QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
FEATURE_NAMES = ("mean", "std", "min", "max") + tuple(f"q{int(q * 100)}" for q in QUANTILES)
CLASSIFIER_NOTE = "l2-regularised logistic regression on 9 reward summary features (not a random forest)"

RewardOracle = Callable[[PairSet], np.ndarray]


# -- uniqueness -----------------------------------------------------------------


def overlap_rate(a: Trajectory, b: Trajectory) -> float:
    """Share of a's points whose (slot, loc) also appears in b."""
    if not a.points:
        raise DomainError("overlap rate of an empty trajectory")
    b_at = {p.slot: p.loc for p in b.points}
    hits = sum(1 for p in a.points if b_at.get(p.slot) == p.loc)
    return hits / len(a.points)


@dataclass
class UniquenessResult:
    best_match: np.ndarray   # index into the synthetic set, per real trajectory
    rates: np.ndarray        # highest overlap rate, per real trajectory

    @property
    def mean(self) -> float:
        return float(self.rates.mean())

    @property
    def max(self) -> float:
        return float(self.rates.max())


def _dense(trajs: Sequence[Trajectory], lo: int, width: int) -> np.ndarray:
    out = np.full((len(trajs), width), -1, dtype=np.int64)
    for i, t in enumerate(trajs):
        for p in t.points:
            out[i, p.slot - lo] = p.loc
    return out


def uniqueness_test(real: Sequence[Trajectory], synthetic: Sequence[Trajectory], chunk: int = 64) -> UniquenessResult:
    """Exhaustive best match of every real trajectory against the synthetic set.

    Ties go to the lowest synthetic index, so the rates do not depend on order.
    """
    if not real or not synthetic:
        raise DomainError("uniqueness test needs non-empty sets")
    slots = [p.slot for t in list(real) + list(synthetic) for p in t.points]
    lo, width = min(slots), max(slots) - min(slots) + 1
    R, S = _dense(real, lo, width), _dense(synthetic, lo, width)
    lengths = (R >= 0).sum(axis=1)
    if np.any(lengths == 0):
        raise DomainError("real trajectories must be non-empty")
    best = np.zeros(len(real), dtype=np.int64)
    rates = np.zeros(len(real))
    for start in range(0, len(real), chunk):
        r = R[start:start + chunk]
        hits = ((r[:, None, :] == S[None, :, :]) & (r[:, None, :] >= 0)).sum(axis=2)
        best[start:start + chunk] = hits.argmax(axis=1)
        rates[start:start + chunk] = hits.max(axis=1) / lengths[start:start + chunk]
    return UniquenessResult(best, rates)


# -- membership inference -------------------------------------------------------


def summarize_rewards(rewards: np.ndarray) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    return np.concatenate([[r.mean(), r.std(), r.min(), r.max()], np.quantile(r, QUANTILES)])


def mia_features(trajectory: Trajectory, home: int, oracle: RewardOracle, featurizer: Featurizer) -> np.ndarray:
    if len(trajectory) < 2:
        raise DomainError("membership features need at least two points")
    return summarize_rewards(oracle(pairs_from_trajectories(featurizer, [trajectory], [home])))


def mia_feature_matrix(trajectories: Sequence[Trajectory], homes: Sequence[int], oracle: RewardOracle,
                       featurizer: Featurizer) -> np.ndarray:
    """Same as stacking ``mia_features`` rows, with one oracle call for the whole set."""
    if any(len(t) < 2 for t in trajectories):
        raise DomainError("membership features need at least two points per trajectory")
    pairs = pairs_from_trajectories(featurizer, trajectories, homes)
    rewards = oracle(pairs)
    bounds = np.cumsum([0] + [len(t) - 1 for t in trajectories])
    return np.stack([summarize_rewards(rewards[a:b]) for a, b in zip(bounds[:-1], bounds[1:])])


def aggregated_reward_oracle(discriminators: Sequence, beta: float, budget: DPBudget,
                             rng: np.random.Generator) -> RewardOracle:
    """What the attacker sees: the released (noised, compensated) reward."""
    def oracle(pairs: PairSet) -> np.ndarray:
        scores = np.stack([d.score_pairs(pairs) for d in discriminators])
        return aggregate_batch(scores, beta, budget, rng).compensated
    return oracle


def logistic_loss(params: nn.ParameterSet, x: np.ndarray, y: np.ndarray, l2: float) -> nn.Tensor:
    """Mean binary cross-entropy with labels in {0, 1} plus an L2 penalty on the weights."""
    z = nn.reshape(nn.linear(x, params["w"], params["b"]), (len(y),))
    sign = 2.0 * np.asarray(y, dtype=float) - 1.0
    data = nn.mean(nn.softplus(nn.mul(z, -sign)))
    return nn.add(data, nn.mul(nn.sum(nn.square(params["w"])), l2))


def fit_logistic(x: np.ndarray, y: np.ndarray, l2: float = 1e-3, steps: int = 300, lr: float = 0.05,
                 seed: int = 0) -> nn.ParameterSet:
    rng = np.random.default_rng(seed)
    params = nn.ParameterSet({"w": rng.normal(0.0, 0.01, size=(x.shape[1], 1)), "b": np.zeros(1)})
    opt = nn.OptimizerState(lr=lr)
    for _ in range(steps):
        grads = nn.backward(logistic_loss(params, x, y, l2), params)
        nn.optimizer_step(params, grads, opt)
    return params


def stratified_folds(y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per sample; each class is spread round-robin after shuffling."""
    fold = np.zeros(len(y), dtype=np.int64)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = np.arange(len(idx)) % k
    return fold


@dataclass
class MIAResult:
    fold_accuracies: list[float]
    features: str = ", ".join(FEATURE_NAMES)
    classifier: str = CLASSIFIER_NOTE

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std_error(self) -> float:
        return float(np.std(self.fold_accuracies, ddof=1) / np.sqrt(len(self.fold_accuracies)))


def cross_validate(x: np.ndarray, y: np.ndarray, seed: int = 0, folds: int = N_FOLDS) -> MIAResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    fold = stratified_folds(y, folds, np.random.default_rng(seed))
    accs = []
    for f in range(folds):
        tr, te = fold != f, fold == f
        mu, sd = x[tr].mean(axis=0), x[tr].std(axis=0)
        sd[sd < 1e-12] = 1.0
        params = fit_logistic((x[tr] - mu) / sd, y[tr], seed=seed + f)
        z = ((x[te] - mu) / sd) @ params["w"].data[:, 0] + params["b"].data[0]
        accs.append(float(np.mean((z > 0).astype(int) == y[te])))
    return MIAResult(accs)


def membership_inference(members: Sequence[Trajectory], member_homes: Sequence[int],
                         non_members: Sequence[Trajectory], non_member_homes: Sequence[int],
                         oracle: RewardOracle, featurizer: Featurizer, seed: int = 0) -> MIAResult:
    """Balanced members vs non-members, 5-fold stratified cross-validation."""
    if len(members) != len(non_members):
        raise DomainError(f"need equally many members and non-members, got {len(members)} vs {len(non_members)}")
    if len(members) < 10:
        raise DomainError("need at least 10 members")
    x = np.concatenate([mia_feature_matrix(members, member_homes, oracle, featurizer),
                        mia_feature_matrix(non_members, non_member_homes, oracle, featurizer)])
    y = np.concatenate([np.ones(len(members), dtype=int), np.zeros(len(non_members), dtype=int)])
    return cross_validate(x, y, seed)


@dataclass
class AttackReport:
    epsilon: float
    mia: MIAResult
    uniqueness: UniquenessResult
    notes: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            "# mobgail-attack v1",
            f"# classifier: {self.mia.classifier}",
            f"epsilon\t{self.epsilon:g}",
        ]
        lines += [f"fold{i + 1}_accuracy\t{a:.6f}" for i, a in enumerate(self.mia.fold_accuracies)]
        lines += [
            f"mia_mean_accuracy\t{self.mia.mean_accuracy:.6f}",
            f"uniqueness_mean\t{self.uniqueness.mean:.6f}",
            f"uniqueness_max\t{self.uniqueness.max:.6f}",
        ]
        lines += [f"# {n}" for n in self.notes]
        return "\n".join(lines) + "\n"
