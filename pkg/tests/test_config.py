import json
import math

import pytest

from mobgail.aggregation import Mode
from mobgail.config import CONFIG_FORMAT, RunConfig
from mobgail.core import DomainError


def test_defaults_are_valid():
    cfg = RunConfig()
    assert cfg.validate() == []
    assert cfg.round_config().budget is None
    assert cfg.budget().mode == Mode.NOISE_FREE


def test_round_trip(tmp_path):
    cfg = RunConfig(seed=3)
    cfg.privacy.epsilon = 0.5
    cfg.privacy.kappa = 2.0
    p = cfg.write(tmp_path / "c.json")
    back = RunConfig.load(p)
    assert back == cfg
    assert json.loads(p.read_text())["format"] == CONFIG_FORMAT
    assert back.to_json() == cfg.to_json()


def test_infinite_epsilon_serialized_as_text(tmp_path):
    p = RunConfig().write(tmp_path / "c.json")
    assert json.loads(p.read_text())["privacy"]["epsilon"] == "inf"
    assert math.isinf(RunConfig.load(p).privacy.epsilon)


def test_missing_keys_take_defaults():
    cfg = RunConfig.from_dict({"seed": 9, "rounds": {"num_rounds": 2}})
    assert cfg.seed == 9 and cfg.rounds.num_rounds == 2 and cfg.rounds.batch_trajectories == 32


def test_unknown_keys_rejected():
    with pytest.raises(DomainError) as exc:
        RunConfig.from_dict({"sed": 1, "rounds": {"nmu_rounds": 2}})
    assert "'sed'" in str(exc.value) and "nmu_rounds" in str(exc.value)
    with pytest.raises(DomainError):
        RunConfig.from_dict({"format": "something-else v9"})


def test_validation_lists_every_violation():
    cfg = RunConfig()
    cfg.grid.width = 0
    cfg.ppo.gamma = 1.5
    cfg.privacy.epsilon = 1.0
    cfg.privacy.beta = 1.0
    cfg.rounds.episode_length = 100
    errors = cfg.validate()
    for needle in ("grid.width", "ppo.gamma", "privacy.beta", "episode_length"):
        assert any(needle in e for e in errors), needle
    with pytest.raises(DomainError) as exc:
        cfg.check()
    assert str(exc.value).count("\n") >= 4


def test_derived_budget():
    cfg = RunConfig()
    cfg.privacy.epsilon = 1.0
    cfg.privacy.kappa = 2.0
    b = cfg.round_config().budget
    assert b.mode == Mode.COMPENSATED and b.num_users == 50
    assert b.lambda_mean == pytest.approx(2.0 / 50)


def test_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(DomainError):
        RunConfig.load(p)
    p.write_text("[1, 2]")
    with pytest.raises(DomainError):
        RunConfig.load(p)
