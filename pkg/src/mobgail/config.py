"""Run configuration: one JSON document holding every tunable of a run.

Missing keys take their defaults; unknown keys are rejected. The fully
resolved document is written next to every run's outputs so the run can be
repeated from it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .aggregation import DPBudget, budget_for, noise_free
from .core import DomainError, LocationGrid, SLOTS_PER_DAY
from .discriminator import DISC_LR
from .env import DEFAULT_ALPHA, TransitionConfig
from .evaluation import EvalConfig
from .features import FeatureConfig
from .orchestrator import RoundConfig
from .policy import PPOConfig
from .synth import DEFAULT_BEHAVIOUR

CONFIG_FORMAT = "mobgail-config v1"


@dataclass
class GridSection:
    width: int = 20
    height: int = 20
    cell_size: float = 500.0


@dataclass
class DataSection:
    num_users: int = 50
    days: int = 20
    heldout_users: int = 500
    behaviour: list[float] = field(default_factory=lambda: list(DEFAULT_BEHAVIOUR))


@dataclass
class ModelSection:
    window: int = 24
    loc_dim: int = 32
    slot_dim: int = 8
    action_dim: int = 8
    model_dim: int = 48
    hidden: int = 64
    disc_lr: float = 1e-4  # slower than DISC_LR; keeps the discriminators from winning outright in 60 rounds


@dataclass
class PPOSection:
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 1e-3


@dataclass
class RoundSection:
    num_rounds: int = 60
    batch_trajectories: int = 32
    episode_length: int = SLOTS_PER_DAY - 1
    local_iterations: int = 2
    disc_batch: int = 64
    checkpoint_every: int = 0


@dataclass
class PrivacySection:
    epsilon: float = math.inf  # inf: no noise
    kappa: float | None = None  # None: mean-only noise; > 1 adds the noised variance term
    beta: float = 0.0


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    slots_per_day: int = SLOTS_PER_DAY
    alpha: float = DEFAULT_ALPHA
    grid: GridSection = field(default_factory=GridSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    ppo: PPOSection = field(default_factory=PPOSection)
    rounds: RoundSection = field(default_factory=RoundSection)
    privacy: PrivacySection = field(default_factory=PrivacySection)

    # -- derived module configs ---------------------------------------------

    def location_grid(self) -> LocationGrid:
        return LocationGrid(self.grid.width, self.grid.height, float(self.grid.cell_size))

    def env_config(self) -> TransitionConfig:
        return TransitionConfig(self.location_grid(), self.alpha)

    def feature_config(self) -> FeatureConfig:
        m = self.model
        return FeatureConfig(m.window, m.loc_dim, m.slot_dim, m.action_dim, m.model_dim, m.hidden,
                             self.slots_per_day)

    def ppo_config(self) -> PPOConfig:
        return PPOConfig(**asdict(self.ppo))

    def budget(self) -> DPBudget:
        p = self.privacy
        if math.isinf(p.epsilon):
            return noise_free(self.data.num_users)
        return budget_for(p.epsilon, self.data.num_users, p.kappa)

    def round_config(self) -> RoundConfig:
        r = self.rounds
        budget = None if math.isinf(self.privacy.epsilon) else self.budget()
        return RoundConfig(r.num_rounds, r.batch_trajectories, r.episode_length, r.local_iterations, r.disc_batch,
                           self.privacy.beta, budget, self.seed, r.checkpoint_every)

    def eval_config(self) -> EvalConfig:
        return EvalConfig(slots_per_day=self.slots_per_day)

    # -- validation ---------------------------------------------------------

    def validate(self) -> list[str]:
        """Every violated constraint, not just the first."""
        errors = []

        def positive(section: str, obj, names, strict=True):
            for n in names:
                v = getattr(obj, n)
                if not isinstance(v, (int, float)) or isinstance(v, bool) or (v <= 0 if strict else v < 0):
                    errors.append(f"{section}.{n} must be {'>' if strict else '>='} 0, got {v!r}")

        positive("grid", self.grid, ("width", "height", "cell_size"))
        positive("data", self.data, ("num_users", "days", "heldout_users"))
        positive("model", self.model, ("window", "loc_dim", "slot_dim", "action_dim", "model_dim", "hidden",
                                       "disc_lr"))
        positive("ppo", self.ppo, ("clip", "epochs", "minibatch", "lr"))
        positive("ppo", self.ppo, ("ent_coef", "vf_coef"), strict=False)
        positive("rounds", self.rounds, ("batch_trajectories", "episode_length", "local_iterations", "disc_batch"))
        positive("rounds", self.rounds, ("num_rounds", "checkpoint_every"), strict=False)
        if not isinstance(self.seed, int) or self.seed < 0:
            errors.append(f"seed must be a non-negative integer, got {self.seed!r}")
        if not isinstance(self.slots_per_day, int) or self.slots_per_day < 2:
            errors.append(f"slots_per_day must be an integer >= 2, got {self.slots_per_day!r}")
        if not (isinstance(self.alpha, (int, float)) and self.alpha > 0):
            errors.append(f"alpha must be > 0, got {self.alpha!r}")
        if self.data.num_users < 2:
            errors.append(f"data.num_users must be >= 2 for federated training, got {self.data.num_users}")
        b = self.data.behaviour
        if len(b) != 4 or any(not isinstance(x, (int, float)) or x < 0 for x in b) or sum(b) <= 0:
            errors.append(f"data.behaviour must be four non-negative weights with a positive sum, got {b!r}")
        for n in ("gamma", "gae_lambda"):
            v = getattr(self.ppo, n)
            if not 0 <= v <= 1:
                errors.append(f"ppo.{n} must lie in [0, 1], got {v}")
        p = self.privacy
        if not (isinstance(p.epsilon, (int, float)) and p.epsilon > 0):
            errors.append(f"privacy.epsilon must be > 0 (or inf), got {p.epsilon!r}")
        if p.kappa is not None and not p.kappa > 1:
            errors.append(f"privacy.kappa must exceed 1, got {p.kappa}")
        if p.beta < 0:
            errors.append(f"privacy.beta must be >= 0, got {p.beta}")
        if not math.isinf(p.epsilon) and p.kappa is None and p.beta > 0:
            errors.append("privacy.beta > 0 with finite epsilon needs privacy.kappa (noised variance term)")
        if self.rounds.episode_length > self.slots_per_day - 1:
            errors.append(f"rounds.episode_length must be <= slots_per_day - 1 ({self.slots_per_day - 1}), "
                          f"got {self.rounds.episode_length}")
        return errors

    def check(self) -> "RunConfig":
        errors = self.validate()
        if errors:
            raise DomainError("invalid run config:\n  " + "\n  ".join(errors))
        return self

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        body = asdict(self)
        body["privacy"]["epsilon"] = _encode_float(self.privacy.epsilon)
        return {"format": CONFIG_FORMAT, **body}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def from_dict(cls, body: dict[str, Any]) -> "RunConfig":
        body = dict(body)
        fmt = body.pop("format", CONFIG_FORMAT)
        if fmt != CONFIG_FORMAT:
            raise DomainError(f"unsupported config format {fmt!r}, expected {CONFIG_FORMAT!r}")
        errors = []
        cfg = cls()
        sections = {f.name: f for f in fields(cls)}
        for key, value in body.items():
            if key not in sections:
                errors.append(f"unknown key {key!r}")
                continue
            current = getattr(cfg, key)
            if hasattr(current, "__dataclass_fields__"):
                if not isinstance(value, dict):
                    errors.append(f"{key} must be an object")
                    continue
                known = {f.name for f in fields(current)}
                unknown = sorted(set(value) - known)
                errors += [f"unknown key {key}.{k!r}" for k in unknown]
                setattr(cfg, key, replace(current, **{k: v for k, v in value.items() if k in known}))
            else:
                setattr(cfg, key, value)
        if errors:
            raise DomainError("invalid run config:\n  " + "\n  ".join(errors))
        cfg.privacy.epsilon = _decode_float(cfg.privacy.epsilon)
        cfg.grid.cell_size = float(cfg.grid.cell_size)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            body = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DomainError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(body, dict):
            raise DomainError(f"{path}: top level must be an object")
        return cls.from_dict(body)


def _encode_float(x: float):
    return "inf" if math.isinf(x) else x


def _decode_float(x):
    if isinstance(x, str):
        try:
            return float(x)
        except ValueError:
            raise DomainError(f"not a number: {x!r}") from None
    return x
