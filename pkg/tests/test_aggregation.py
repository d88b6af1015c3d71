import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mobgail.aggregation import (DPBudget, Mode, _mean, aggregate_batch, aggregate_mean, budget_for,
                                 compensated_reward, dynamics_term, laplace_sample, laplace_noise, noise_free,
                                 check_theorem1_bound, check_theorem1_bounds, theorem1_fraction)
from mobgail.core import DomainError, LocationGrid
from mobgail.discriminator import PersonalDiscriminator
from mobgail.env import TransitionConfig
from mobgail.policy import PolicyNet

from conftest import tiny_features

scores01 = st.floats(1e-6, 1 - 1e-6)


def laplace_logpdf(x, loc, scale):
    return -np.abs(x - loc) / scale - math.log(2 * scale)


class TestLaplace:
    def test_zero_scale(self, rng):
        assert laplace_sample(0.0, rng) == 0.0

    def test_negative_scale(self, rng):
        with pytest.raises(DomainError):
            laplace_sample(-1.0, rng)

    def test_moments(self):
        x = laplace_noise(1.0, 1_000_000, np.random.default_rng(0))
        assert abs(x.mean()) < 0.01
        assert x.var() == pytest.approx(2.0, rel=0.02)
        y = laplace_noise(0.3, 1_000_000, np.random.default_rng(1))
        assert y.var() == pytest.approx(2 * 0.3**2, rel=0.02)

    def test_distribution(self):
        x = laplace_noise(0.5, 20_000, np.random.default_rng(2))
        assert stats.kstest(x, stats.laplace(scale=0.5).cdf).pvalue > 0.001


class TestAggregate:
    def test_noise_free_mean(self, rng):
        assert aggregate_mean([0.4, 0.6], noise_free(2), rng) == 0.5
        assert aggregate_mean([0.3] * 5, noise_free(5), rng) == pytest.approx(0.3, abs=1e-15)

    def test_mean_only_scale(self):
        assert budget_for(1.0, 100).lambda_mean == pytest.approx(0.01, rel=1e-15)

    def test_length_mismatch(self, rng):
        with pytest.raises(DomainError):
            aggregate_mean([0.4, 0.6, 0.5], noise_free(2), rng)

    def test_scores_must_be_open_interval(self, rng):
        with pytest.raises(DomainError):
            aggregate_mean([0.0, 0.6], noise_free(2), rng)

    def test_dynamics_hand_value(self, rng):
        assert dynamics_term([0.4, 0.6], noise_free(2), rng) == pytest.approx(0.1, abs=1e-15)
        assert dynamics_term([0.7, 0.7, 0.7], noise_free(3), rng) == 0.0

    def test_dynamics_clamp(self):
        budget = budget_for(1.0, 2, kappa=2.0)

        class Fixed:
            def random(self, n):
                # inverse CDF of Laplace(0, lambda_c) at this u gives exactly -0.01
                return np.full(n, 0.5 * math.exp(-0.01 / budget.lambda_var))

        # population variance of [0.49, 0.51] is 0.0001
        assert dynamics_term([0.49, 0.51], budget, Fixed()) == 0.0

    def test_compensated_hand_value(self, rng):
        assert compensated_reward([0.4, 0.6], 1.0, noise_free(2), rng) == pytest.approx(0.4, abs=1e-15)

    def test_beta_zero_is_mean(self):
        b = budget_for(1.0, 3)
        a = compensated_reward([0.2, 0.5, 0.9], 0.0, b, np.random.default_rng(5))
        m = aggregate_mean([0.2, 0.5, 0.9], b, np.random.default_rng(5))
        assert a == m

    def test_equal_scores_any_beta(self, rng):
        assert compensated_reward([0.35] * 4, 7.0, noise_free(4), rng) == pytest.approx(0.35, abs=1e-15)

    def test_mean_only_rejects_beta(self, rng):
        with pytest.raises(DomainError):
            compensated_reward([0.4, 0.6], 1.0, budget_for(1.0, 2), rng)

    def test_batch_matches_scalar_noise_free(self):
        rng = np.random.default_rng(0)
        s = rng.uniform(0.01, 0.99, size=(6, 40))
        batch = aggregate_batch(s, 1.5, noise_free(6), rng)
        for j in range(40):
            assert batch.compensated[j] == pytest.approx(compensated_reward(s[:, j], 1.5, noise_free(6), rng),
                                                         abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 5))
    def test_compensated_not_above_mean(self, seed, beta):
        rng = np.random.default_rng(seed)
        s = rng.uniform(0.01, 0.99, size=(5, 30))
        b = aggregate_batch(s, beta, budget_for(1.0, 5, kappa=2.0), rng)
        assert np.all(b.xi >= 0)
        assert np.all(b.compensated <= b.reward)

    def test_fresh_noise_per_query(self):
        s = np.full((4, 1000), 0.5)
        b = aggregate_batch(s, 0.0, budget_for(1.0, 4), np.random.default_rng(3))
        assert len(np.unique(b.reward)) == 1000


class TestBudget:
    def test_examples(self):
        assert budget_for(1.0, 100).lambda_mean == pytest.approx(0.01, rel=1e-15)
        b = budget_for(1.0, 100, 2.0)
        assert (b.lambda_mean, b.lambda_var) == pytest.approx((0.02, 0.06), rel=1e-15)
        assert budget_for(0.5, 50).lambda_mean == pytest.approx(0.04, rel=1e-15)

    def test_modes(self):
        assert budget_for(1.0, 10).mode == Mode.MEAN_ONLY
        assert budget_for(1.0, 10, 3.0).mode == Mode.COMPENSATED
        nf = budget_for(math.inf, 10)
        assert nf.mode == Mode.NOISE_FREE and nf.lambda_mean == nf.lambda_var == 0.0
        assert nf.delta == 0.0

    @pytest.mark.parametrize("eps, users, kappa", [(0, 10, None), (-1, 10, None), (1, 1, None), (1, 10, 1.0),
                                                    (1, 10, 0.5)])
    def test_invalid(self, eps, users, kappa):
        with pytest.raises(DomainError):
            budget_for(eps, users, kappa)

    def test_with_users(self):
        b = budget_for(1.0, 10, 2.0).with_users(20)
        assert b.num_users == 20 and b.lambda_mean == pytest.approx(0.1)

    def test_report(self):
        text = budget_for(1.0, 100, 2.0).report()
        assert "lambda\t0.02" in text and "lambda_c\t0.06" in text and "kappa\t2" in text


class TestPrivacyProperties:
    @given(st.lists(scores01, min_size=2, max_size=50), st.data())
    def test_sensitivity(self, scores, data):
        s = np.array(scores)
        i = data.draw(st.integers(0, len(s) - 1))
        t = s.copy()
        t[i] = data.draw(scores01)
        assert abs(_mean(s) - _mean(t)) <= 1.0 / len(s)

    @given(st.floats(0.05, 5), st.integers(2, 200), scores01, scores01)
    def test_density_ratio(self, eps, users, a, b):
        lam = budget_for(eps, users).lambda_mean
        m1, m2 = 0.5, 0.5 + (b - a) / users
        x = np.linspace(-1, 2, 1000)
        log_ratio = laplace_logpdf(x, m1, lam) - laplace_logpdf(x, m2, lam)
        assert np.all(np.abs(log_ratio) <= eps * (1 + 1e-12))


class TestTheoremOneFraction:
    def test_identical_clients(self):
        s = np.full((2, 10, 5), 0.4)
        hits = theorem1_fraction(s, 2.0, 0.99, np.zeros(10, dtype=int))
        assert hits.all()

    def test_large_beta(self):
        rng = np.random.default_rng(0)
        s = rng.uniform(0.1, 0.9, size=(7, 200, 6))
        assert theorem1_fraction(s, 100.0, 0.99, rng.integers(0, 7, 200)).all()

    def test_chebyshev(self):
        rng = np.random.default_rng(1)
        s = np.clip(rng.normal(0.5, 0.15, size=(50, 2000, 10)), 0.01, 0.99)
        frac = theorem1_fraction(s, 2.0, 0.99, rng.integers(0, 50, 2000)).mean()
        assert frac >= 0.75 - 3 * math.sqrt(0.75 * 0.25 / 2000)


def test_bound_check_shares_episodes_across_betas():
    grid = LocationGrid(4, 4)
    env = TransitionConfig(grid)
    policy = PolicyNet(grid, tiny_features(), np.random.default_rng(0))
    discs = [PersonalDiscriminator(u, grid, tiny_features(), np.random.default_rng(u)) for u in range(3)]
    multi = check_theorem1_bounds(policy, env, discs, (1.5, 3.0), 150, np.random.default_rng(5), length=6, chunk=60)
    for res in multi:
        one = check_theorem1_bound(policy, env, discs, res.beta, 150, np.random.default_rng(5), length=6, chunk=60)
        assert one == res
        assert 0.0 <= res.fraction <= 1.0 and res.bound == pytest.approx(1 - 1 / res.beta**2)
    with pytest.raises(DomainError):
        check_theorem1_bounds(policy, env, discs[:1], (2.0,), 150, np.random.default_rng(0))
