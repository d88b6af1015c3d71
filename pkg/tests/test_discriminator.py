import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mobgail import neuro as nn
from mobgail.core import Action, ClientDataset, DomainError, LocationGrid, SpatioTemporalPoint, State, Trajectory
from mobgail.discriminator import (PairSet, PersonalDiscriminator, bce_loss, discriminator_loss, extract_pairs,
                                   label_actions, pairs_from_trajectories, score, train_local)
from mobgail.env import TransitionConfig, sample_next, transition_distribution

from conftest import random_state, tiny_features
from gradcheck import check_gradients, randomize

A, B, H = 4, 9, 13


def traj(locs, user=0, start=0):
    return Trajectory(user, tuple(SpatioTemporalPoint(start + i, l) for i, l in enumerate(locs)))


def logit(p):
    return math.log(p / (1 - p))


@pytest.fixture
def grid():
    return LocationGrid(4, 4)


class TestExtractPairs:
    def test_stay(self):
        pairs = extract_pairs(traj([A, A]), H)
        assert [a for _, a in pairs] == [Action.STAY]
        assert pairs[0][0].current.loc == A

    def test_home_return(self):
        assert [a for _, a in extract_pairs(traj([A, H]), H)] == [Action.HOME_RETURN]

    def test_explore_then_return(self):
        assert [a for _, a in extract_pairs(traj([A, B, A]), H)] == [Action.EXPLORE, Action.PREFERENTIAL_RETURN]

    def test_home_wins_over_return(self):
        assert label_actions(traj([H, A, H]), H).tolist() == [Action.EXPLORE, Action.HOME_RETURN]

    def test_short(self):
        assert extract_pairs(traj([A]), H) == []

    def test_prefix_states(self):
        pairs = extract_pairs(traj([A, B, A, A]), H)
        assert [len(s.history) for s, _ in pairs] == [1, 2, 3]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_labels_agree_with_env(self, seed):
        g = LocationGrid(4, 4)
        cfg = TransitionConfig(g)
        rng = np.random.default_rng(seed)
        home = int(rng.integers(16))
        s = State.start(SpatioTemporalPoint(0, home), home)
        for _ in range(20):
            s = sample_next(s, Action(int(rng.integers(4))), cfg, rng)
        t = Trajectory(0, s.history)
        for (state, action), nxt in zip(extract_pairs(t, home), t.points[1:]):
            assert transition_distribution(state, action, cfg).as_dict().get(nxt.loc, 0.0) > 0


class TestScore:
    def test_zero_head_half(self, grid):
        d = PersonalDiscriminator(0, grid, tiny_features(), rng=np.random.default_rng(0))
        s = random_state(grid, np.random.default_rng(1))
        assert all(score(d, s, a) == 0.5 for a in Action)

    def test_open_interval(self, grid):
        d = PersonalDiscriminator(0, grid, tiny_features(), rng=np.random.default_rng(0))
        randomize(d.params, np.random.default_rng(2), scale=2.0)
        rng = np.random.default_rng(3)
        states = [random_state(grid, rng) for _ in range(1000)]
        pairs = PairSet(d.featurizer.encode_states(states), rng.integers(0, 4, size=1000))
        s = d.score_pairs(pairs)
        assert np.all((s > 0) & (s < 1))

    def test_pure(self, grid):
        d = PersonalDiscriminator(0, grid, tiny_features(), rng=np.random.default_rng(0))
        randomize(d.params, np.random.default_rng(4))
        s = random_state(grid, np.random.default_rng(5))
        assert score(d, s, Action.EXPLORE) == score(d, s, Action.EXPLORE)


class TestLoss:
    def test_uniform_output(self):
        assert bce_loss(nn.Tensor(np.zeros(3)), nn.Tensor(np.zeros(5))).item() == pytest.approx(2 * math.log(2))

    def test_hand_value(self):
        loss = bce_loss(nn.Tensor(np.array([logit(0.9)])), nn.Tensor(np.array([logit(0.2)]))).item()
        assert loss == pytest.approx(-math.log(0.9) - math.log(0.8), abs=1e-12)
        assert loss == pytest.approx(0.3285, abs=5e-5)

    def test_limit(self):
        assert bce_loss(nn.Tensor(np.array([40.0])), nn.Tensor(np.array([-40.0]))).item() < 1e-15

    def test_empty_set(self, grid):
        d = PersonalDiscriminator(0, grid, tiny_features())
        pos = pairs_from_trajectories(d.featurizer, [traj([1, 2])], [0])
        empty = pairs_from_trajectories(d.featurizer, [traj([1])], [0])
        with pytest.raises(DomainError):
            discriminator_loss(d, pos, empty)

    def test_gradients_match_finite_differences(self, grid):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            d = PersonalDiscriminator(0, grid, tiny_features(), rng=rng)
            randomize(d.params, rng)
            pos = pairs_from_trajectories(d.featurizer, [traj(rng.integers(0, 16, size=5))], [int(rng.integers(16))])
            neg = pairs_from_trajectories(d.featurizer, [traj(rng.integers(0, 16, size=4))], [int(rng.integers(16))])
            assert check_gradients(d.params, lambda: discriminator_loss(d, pos, neg)) < 1e-4


class TestTrainLocal:
    def setup_data(self, grid):
        home = 5
        client = ClientDataset(0, tuple(traj([home] * 10, start=48 * k) for k in range(4)), home)
        synthetic = [traj([1, 2, 3, 4, 6, 7, 8, 9, 10, 11]), traj([15, 14, 13, 12, 0, 1, 2, 3, 4, 6])]
        return client, synthetic, [1, 15]

    def test_zero_iterations(self, grid):
        client, syn, homes = self.setup_data(grid)
        d = PersonalDiscriminator(0, grid, tiny_features())
        before = {k: v.copy() for k, v in d.params.arrays().items()}
        _, trace, status = train_local(d, client, syn, homes, 0, 16, np.random.default_rng(0))
        assert trace == [] and status == "ok"
        assert all(np.array_equal(v, before[k]) for k, v in d.params.arrays().items())

    def test_separable_toy(self, grid):
        client, syn, homes = self.setup_data(grid)
        d = PersonalDiscriminator(0, grid, tiny_features(), rng=np.random.default_rng(0), lr=1e-2)
        _, trace, _ = train_local(d, client, syn, homes, 200, 16, np.random.default_rng(1))
        assert trace[-1] < 0.1

    def test_deterministic(self, grid):
        client, syn, homes = self.setup_data(grid)

        def run():
            d = PersonalDiscriminator(0, grid, tiny_features(), rng=np.random.default_rng(0))
            _, trace, _ = train_local(d, client, syn, homes, 5, 8, np.random.default_rng(3))
            return trace, d.params.arrays()

        (t1, p1), (t2, p2) = run(), run()
        assert t1 == t2 and all(np.array_equal(p1[k], p2[k]) for k in p1)

    def test_degenerate_client_skipped(self, grid):
        client = ClientDataset(0, (traj([3]),), 3)
        d = PersonalDiscriminator(0, grid, tiny_features())
        _, trace, status = train_local(d, client, [traj([1, 2])], [1], 5, 8, np.random.default_rng(0))
        assert status == "skipped" and trace == []

    def test_reads_only_its_own_client(self, grid):
        client, syn, homes = self.setup_data(grid)
        touched = []

        class Watched:
            def __getattr__(self, name):
                touched.append(name)
                return getattr(client, name)

        d = PersonalDiscriminator(0, grid, tiny_features())
        train_local(d, Watched(), syn, homes, 2, 8, np.random.default_rng(0))
        assert set(touched) <= {"trajectories", "home", "user"}
