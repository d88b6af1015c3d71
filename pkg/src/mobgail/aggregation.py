"""Private reward aggregation over client discriminator scores.

The server sees, for every queried (state, action) pair, one score per
client. It releases the Laplace-noised mean of those scores and, in the
compensated mode, subtracts beta times a noised standard deviation so the
reward tracks a lower bound on any single client's reward.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .core import DomainError
from .env import TransitionConfig


class Mode(str, enum.Enum):
    NOISE_FREE = "noise-free"
    MEAN_ONLY = "mean-only"
    COMPENSATED = "compensated"


@dataclass(frozen=True)
class DPBudget:
    epsilon: float
    num_users: int
    mode: Mode
    kappa: float | None = None
    lambda_mean: float = 0.0
    lambda_var: float = 0.0
    delta: float = 0.0

    def with_users(self, num_users: int) -> "DPBudget":
        if self.mode == Mode.NOISE_FREE:
            return noise_free(num_users)
        return budget_for(self.epsilon, num_users, self.kappa)

    def report(self) -> str:
        kappa = "-" if self.kappa is None else f"{self.kappa:g}"
        lines = [
            f"mode\t{self.mode.value}",
            f"epsilon\t{self.epsilon:g}",
            f"delta\t{self.delta:g}",
            f"kappa\t{kappa}",
            f"users\t{self.num_users}",
            f"lambda\t{self.lambda_mean:.12g}",
            f"lambda_c\t{self.lambda_var:.12g}" if self.mode == Mode.COMPENSATED else "lambda_c\t-",
        ]
        return "\n".join(lines)


def budget_for(epsilon: float, num_users: int, kappa: float | None = None) -> DPBudget:
    """Laplace scales for a per-query (epsilon, 0)-DP release.

    Mean only: lambda = 1 / (eps |U|). With the variance term and a split
    kappa > 1: lambda = kappa / (eps |U|), lambda_c = 3 kappa / (eps (kappa - 1) |U|).
    An infinite epsilon means no noise.
    """
    if num_users < 2:
        raise DomainError(f"need at least 2 users, got {num_users}")
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    if kappa is not None and not kappa > 1:
        raise DomainError(f"kappa must exceed 1, got {kappa}")
    if math.isinf(epsilon):
        return noise_free(num_users)
    if kappa is None:
        return DPBudget(epsilon, num_users, Mode.MEAN_ONLY, None, 1.0 / (epsilon * num_users))
    return DPBudget(epsilon, num_users, Mode.COMPENSATED, kappa,
                    kappa / (epsilon * num_users),
                    3.0 * kappa / (epsilon * (kappa - 1.0) * num_users))


def noise_free(num_users: int) -> DPBudget:
    return DPBudget(math.inf, num_users, Mode.NOISE_FREE)


def laplace_noise(scale: float, size, rng: np.random.Generator) -> np.ndarray:
    """Laplace(0, scale) draws by inverse CDF."""
    if scale < 0:
        raise DomainError(f"Laplace scale must be non-negative, got {scale}")
    if scale == 0:
        return np.zeros(size)
    n = int(np.prod(size))
    u = rng.random(n)
    while np.any(u == 0.0):  # keeps log1p away from -inf
        bad = u == 0.0
        u[bad] = rng.random(int(bad.sum()))
    u = u - 0.5
    return (-scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))).reshape(size)


def laplace_sample(scale: float, rng: np.random.Generator) -> float:
    return float(laplace_noise(scale, 1, rng)[0])


def _check_scores(scores: np.ndarray, budget: DPBudget) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if scores.shape[0] != budget.num_users:
        raise DomainError(f"got {scores.shape[0]} client scores for a budget over {budget.num_users} users")
    if np.any(scores <= 0.0) or np.any(scores >= 1.0):
        raise DomainError("client scores must lie strictly inside (0, 1)")
    return scores


def _mean(scores: np.ndarray) -> np.ndarray:
    # left-to-right over users so results are bit-reproducible
    acc = np.zeros(scores.shape[1:]) if scores.ndim > 1 else 0.0
    for row in scores:
        acc = acc + row
    return acc / scores.shape[0]


def _population_variance(scores: np.ndarray) -> np.ndarray:
    mu = _mean(scores)
    acc = np.zeros(scores.shape[1:]) if scores.ndim > 1 else 0.0
    for row in scores:
        acc = acc + (row - mu) ** 2
    # identical scores must give exactly zero, not a rounding residue of the mean
    return np.where(np.all(scores == scores[0], axis=0), 0.0, acc / scores.shape[0])


def aggregate_mean(scores, budget: DPBudget, rng: np.random.Generator) -> float:
    scores = _check_scores(scores, budget)
    return float(_mean(scores)) + laplace_sample(budget.lambda_mean, rng)


def dynamics_term(scores, budget: DPBudget, rng: np.random.Generator) -> float:
    scores = _check_scores(scores, budget)
    noisy = float(_population_variance(scores)) + laplace_sample(budget.lambda_var, rng)
    return math.sqrt(max(0.0, noisy))


def compensated_reward(scores, beta: float, budget: DPBudget, rng: np.random.Generator) -> float:
    if beta < 0:
        raise DomainError(f"beta must be non-negative, got {beta}")
    if beta > 0 and budget.mode == Mode.MEAN_ONLY:
        raise DomainError("a mean-only budget does not cover the variance release; use kappa or beta=0")
    r = aggregate_mean(scores, budget, rng)
    if beta == 0:
        return r
    return r - beta * dynamics_term(scores, budget, rng)


@dataclass
class RewardBatch:
    """Aggregation results for N queried pairs from U clients."""

    scores: np.ndarray    # (U, N)
    reward: np.ndarray    # (N,) noised mean
    xi: np.ndarray        # (N,) noised dispersion
    compensated: np.ndarray  # (N,) reward - beta * xi
    beta: float = 0.0
    budget: DPBudget | None = field(default=None, repr=False)


def aggregate_batch(scores: np.ndarray, beta: float, budget: DPBudget, rng: np.random.Generator) -> RewardBatch:
    """Vectorised aggregation: fresh independent noise for every query."""
    if beta < 0:
        raise DomainError(f"beta must be non-negative, got {beta}")
    if beta > 0 and budget.mode == Mode.MEAN_ONLY:
        raise DomainError("a mean-only budget does not cover the variance release; use kappa or beta=0")
    scores = _check_scores(np.atleast_2d(scores), budget)
    n = scores.shape[1]
    reward = _mean(scores) + laplace_noise(budget.lambda_mean, n, rng)
    if beta > 0:
        var = _population_variance(scores) + laplace_noise(budget.lambda_var, n, rng)
        xi = np.sqrt(np.maximum(0.0, var))
    else:
        xi = np.zeros(n)
    return RewardBatch(scores, reward, xi, reward - beta * xi, beta, budget)


# -- lower-bound check --------------------------------------------------------


class PairScorer(Protocol):
    def score_pairs(self, pairs) -> np.ndarray: ...


@dataclass(frozen=True)
class BoundCheck:
    fraction: float
    trials: int
    beta: float
    bound: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.fraction >= self.bound - self.slack


def theorem1_fraction(client_scores: np.ndarray, beta: float, gamma: float, users: np.ndarray) -> np.ndarray:
    """Per-episode indicator J(pi, R_u) >= J(pi, R_hat) with noise-free R_hat.

    ``client_scores`` is (U, E, T): every client's reward for each step of E
    episodes; ``users`` picks one client per episode.
    """
    U, E, T = client_scores.shape
    disc = gamma ** np.arange(T)
    mean = _mean(client_scores)
    xi = np.sqrt(_population_variance(client_scores))
    j_hat = (mean - beta * xi) @ disc
    j_user = client_scores[users, np.arange(E)] @ disc
    return j_user >= j_hat


def check_theorem1_bounds(policy, env_cfg: TransitionConfig, discriminators: Sequence[PairScorer],
                          betas: Sequence[float], trials: int, rng: np.random.Generator, length: int = 47,
                          gamma: float = 0.99, chunk: int = 100) -> list[BoundCheck]:
    """Empirical Pr(J(pi, R_u) >= J(pi, R_hat)) over sampled episodes and random users.

    All betas are judged on the same episodes and users, so the clients
    score each episode once.
    """
    from .discriminator import PairSet
    from .policy import random_starts, sample_batch

    if len(discriminators) < 2:
        raise DomainError("need at least two clients")
    if trials < 100:
        raise DomainError("need at least 100 trials")
    hits = {b: [] for b in betas}
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        starts = random_starts(env_cfg.grid, n, rng)
        _, rollout = sample_batch(policy, env_cfg, starts, length, rng)
        pairs = PairSet(rollout.states, rollout.actions.reshape(-1))
        scores = np.stack([d.score_pairs(pairs).reshape(n, length) for d in discriminators])
        users = rng.integers(0, len(discriminators), size=n)
        for b in betas:
            hits[b].append(theorem1_fraction(scores, b, gamma, users))
        done += n
    out = []
    for b in betas:
        bound = max(0.0, 1.0 - 1.0 / b**2) if b > 0 else 0.0
        slack = 3.0 * math.sqrt(bound * (1.0 - bound) / trials)
        out.append(BoundCheck(float(np.concatenate(hits[b]).mean()), trials, b, bound, slack))
    return out


def check_theorem1_bound(policy, env_cfg: TransitionConfig, discriminators: Sequence[PairScorer], beta: float,
                         trials: int, rng: np.random.Generator, length: int = 47, gamma: float = 0.99,
                         chunk: int = 100) -> BoundCheck:
    return check_theorem1_bounds(policy, env_cfg, discriminators, [beta], trials, rng, length, gamma, chunk)[0]
