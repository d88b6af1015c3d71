"""Desk-scale pipelines: synthesize data, train, generate, evaluate, attack, sweep epsilon."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import neuro as nn
from .attacks import AttackReport, aggregated_reward_oracle, membership_inference, uniqueness_test
from .config import RunConfig
from .core import ClientDataset, DomainError, Trajectory, make_rng
from .discriminator import PersonalDiscriminator
from .env import TransitionConfig
from .evaluation import METRICS, MetricReport, evaluate
from .fileio import save_generated, save_trajectories
from .orchestrator import FederatedState, RoundReport, init_state, train
from .policy import PolicyNet, random_starts, sample_batch
from .synth import flatten, synth_ground_truth

log = logging.getLogger(__name__)

HELDOUT_FIRST_USER = 1_000_000


@dataclass
class Corpus:
    clients: list[ClientDataset]
    heldout: list[ClientDataset]

    @property
    def heldout_trajectories(self) -> list[Trajectory]:
        return flatten(self.heldout)


def make_corpus(cfg: RunConfig) -> Corpus:
    """Training clients plus an independent held-out population (one day each)."""
    env = cfg.env_config()
    behaviour = tuple(cfg.data.behaviour)
    clients = synth_ground_truth(cfg.data.num_users, cfg.data.days, env, make_rng(cfg.seed, "data"), behaviour,
                                 cfg.slots_per_day)
    heldout = synth_ground_truth(cfg.data.heldout_users, 1, env, make_rng(cfg.seed, "heldout"), behaviour,
                                 cfg.slots_per_day, first_user=HELDOUT_FIRST_USER)
    return Corpus(clients, heldout)


def generate(policy: PolicyNet, env_cfg: TransitionConfig, n: int, length: int, rng: np.random.Generator,
             chunk: int = 250) -> list[Trajectory]:
    """``n`` trajectories from random homes, numbered 0..n-1."""
    if n < 1:
        raise DomainError(f"need at least one trajectory, got {n}")
    out: list[Trajectory] = []
    while len(out) < n:
        k = min(chunk, n - len(out))
        starts = random_starts(env_cfg.grid, k, rng)
        trajs, _ = sample_batch(policy, env_cfg, starts, length, rng, users=range(len(out), len(out) + k))
        out.extend(trajs)
    return out


def evaluate_policy(policy: PolicyNet, cfg: RunConfig, real: Sequence[Trajectory], n: int | None = None,
                    ) -> tuple[MetricReport, list[Trajectory]]:
    """Fixed-seed sample from ``policy`` compared against ``real``."""
    n = n or len(real)
    synthetic = generate(policy, cfg.env_config(), n, cfg.rounds.episode_length, make_rng(cfg.seed, "eval"))
    return evaluate(real, synthetic, cfg.location_grid(), cfg.eval_config()), synthetic


@dataclass
class DeskRun:
    cfg: RunConfig
    untrained: MetricReport
    trained: MetricReport
    history: list[RoundReport]
    state: FederatedState
    synthetic: list[Trajectory] = field(default_factory=list)

    def improvement(self, metric: str) -> float:
        """Relative JSD reduction versus the untrained policy (positive is better)."""
        before = self.untrained.jsd[metric]
        if before <= 0:
            return 0.0
        return (before - self.trained.jsd[metric]) / before


def desk_run(cfg: RunConfig, corpus: Corpus | None = None, out_dir: str | Path | None = None) -> DeskRun:
    """Train from scratch and score the policy before and after on held-out data."""
    cfg.check()
    corpus = corpus or make_corpus(cfg)
    real = corpus.heldout_trajectories
    state = init_state(corpus.clients, cfg.env_config(), cfg.seed, cfg.feature_config(), cfg.ppo_config(),
                       cfg.model.disc_lr)
    untrained, _ = evaluate_policy(state.policy, cfg, real)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.write(out / "config.json")
        (out / "history.jsonl").write_text("")
    result = train(cfg.round_config(), corpus.clients, cfg.env_config(), out_dir=out, state=state)
    trained, synthetic = evaluate_policy(result.policy, cfg, real)
    run = DeskRun(cfg, untrained, trained, result.history, result.state, synthetic)
    if out is not None:
        save_run(run, corpus, out)
    return run


# -- run directories --------------------------------------------------------------


def save_run(run: DeskRun, corpus: Corpus, out: Path):
    grid = run.cfg.location_grid()
    spd = run.cfg.slots_per_day
    nn.save_params(run.state.policy.params, out / "policy.npz", {"round": str(run.state.round)})
    disc_dir = out / "discriminators"
    disc_dir.mkdir(exist_ok=True)
    for c in run.state.clients:
        nn.save_params(c.disc.params, disc_dir / f"user{c.user}.npz", {"user": str(c.user)})
    save_trajectories(out / "train.txt", corpus.clients, grid, spd)
    save_trajectories(out / "heldout.txt", corpus.heldout, grid, spd)
    save_generated(out / "generated.txt", run.synthetic, grid, spd)
    run.untrained.write(out / "metrics_untrained")
    run.trained.write(out / "metrics")


def load_policy(run_dir, cfg: RunConfig | None = None) -> tuple[PolicyNet, RunConfig]:
    run_dir = Path(run_dir)
    cfg = cfg or RunConfig.load(run_dir / "config.json")
    params, _ = nn.load_params(run_dir / "policy.npz")
    return PolicyNet(cfg.location_grid(), cfg.feature_config(), params=params), cfg


def load_discriminators(run_dir, cfg: RunConfig) -> list[PersonalDiscriminator]:
    paths = sorted((Path(run_dir) / "discriminators").glob("user*.npz"), key=lambda p: int(p.stem[4:]))
    if not paths:
        raise DomainError(f"{run_dir}: no discriminator checkpoints")
    out = []
    for p in paths:
        params, meta = nn.load_params(p)
        out.append(PersonalDiscriminator(int(meta.get("user", p.stem[4:])), cfg.location_grid(),
                                         cfg.feature_config(), params=params))
    return out


# -- privacy attacks ---------------------------------------------------------------


def attack(cfg: RunConfig, discriminators: Sequence[PersonalDiscriminator], members: Sequence[ClientDataset],
           nonmembers: Sequence[ClientDataset], synthetic: Sequence[Trajectory], n: int = 250) -> AttackReport:
    """Membership inference through the released reward, plus the uniqueness test.

    Members are training-day trajectories spread evenly over the clients,
    non-members come from the held-out population. Real days are shifted to
    day 0 before matching against the generated set.
    """
    rng = make_rng(cfg.seed, "attack")
    mem = _one_per_user(members, n, rng)
    non = _one_per_user(nonmembers, n, rng)
    k = min(len(mem), len(non))
    mem, non = mem[:k], non[:k]
    budget = cfg.budget().with_users(len(discriminators))
    oracle = aggregated_reward_oracle(discriminators, cfg.privacy.beta, budget, make_rng(cfg.seed, "attack-noise"))
    featurizer = discriminators[0].featurizer
    mia = membership_inference([t for t, _ in mem], [h for _, h in mem], [t for t, _ in non], [h for _, h in non],
                               oracle, featurizer, cfg.seed)
    uniq = uniqueness_test([t.day_aligned(cfg.slots_per_day) for t, _ in mem], list(synthetic))
    notes = [f"members {k}, non-members {k}, synthetic {len(synthetic)}", f"budget mode {budget.mode.value}"]
    return AttackReport(cfg.privacy.epsilon, mia, uniq, notes)


def _one_per_user(datasets: Sequence[ClientDataset], n: int, rng: np.random.Generator
                  ) -> list[tuple[Trajectory, int]]:
    pool = []
    order = rng.permutation(len(datasets))
    depth = 0
    while len(pool) < n:
        added = False
        for i in order:
            ds = datasets[i]
            if depth < len(ds.trajectories):
                pool.append((ds.trajectories[depth], ds.home))
                added = True
                if len(pool) == n:
                    break
        if not added:
            break
        depth += 1
    return pool


# -- epsilon sweep --------------------------------------------------------------------


@dataclass
class SweepRow:
    epsilon: float
    seed: int
    jsd: dict[str, float]
    untrained: dict[str, float]
    mia_accuracy: float
    uniqueness: float


def sweep(base: RunConfig, epsilons: Sequence[float], seeds: Sequence[int], out_dir: str | Path | None = None,
          with_attack: bool = True) -> list[SweepRow]:
    """One desk run per (epsilon, seed); data depends on the seed only."""
    rows = []
    for seed in seeds:
        cfg_seed = replace(base, seed=seed)
        corpus = make_corpus(cfg_seed)
        for eps in epsilons:
            cfg = replace(cfg_seed, privacy=replace(base.privacy, epsilon=eps))
            sub = None if out_dir is None else Path(out_dir) / f"eps{eps:g}_seed{seed}"
            run = desk_run(cfg, corpus, sub)
            mia, uniq = math.nan, math.nan
            if with_attack:
                rep = attack(cfg, [c.disc for c in run.state.clients], corpus.clients, corpus.heldout, run.synthetic)
                mia, uniq = rep.mia.mean_accuracy, rep.uniqueness.mean
                if sub is not None:
                    (sub / "attack.tsv").write_text(rep.to_text())
            log.info("eps %g seed %d: %s", eps, seed, run.trained.jsd)
            rows.append(SweepRow(eps, seed, dict(run.trained.jsd), dict(run.untrained.jsd), mia, uniq))
    return rows


def sweep_table(rows: Sequence[SweepRow]) -> str:
    head = ["epsilon", "seed"] + [f"jsd_{m}" for m in METRICS] + ["mia_accuracy", "uniqueness"]
    lines = ["# mobgail-sweep v1", "\t".join(head)]
    for r in rows:
        vals = [f"{r.epsilon:g}", str(r.seed)] + [f"{r.jsd[m]:.6f}" for m in METRICS]
        vals += [f"{r.mia_accuracy:.6f}", f"{r.uniqueness:.6f}"]
        lines.append("\t".join(vals))
    return "\n".join(lines) + "\n"
