import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mobgail import neuro as nn
from mobgail.aggregation import noise_free
from mobgail.attacks import (FEATURE_NAMES, AttackReport, aggregated_reward_oracle, cross_validate, logistic_loss,
                             membership_inference, mia_features, mia_feature_matrix, overlap_rate,
                             stratified_folds, summarize_rewards, uniqueness_test)
from mobgail.core import DomainError, SpatioTemporalPoint, Trajectory
from mobgail.discriminator import PersonalDiscriminator
from mobgail.features import Featurizer

from conftest import tiny_features
from gradcheck import check_gradients


def traj(locs, user=0, start=0):
    return Trajectory(user, tuple(SpatioTemporalPoint(start + i, l) for i, l in enumerate(locs)))


def constant_oracle(value):
    return lambda pairs: np.full(len(pairs), value)


def test_overlap_examples():
    a = traj([1, 2, 3, 4])
    assert overlap_rate(a, a) == 1.0
    assert overlap_rate(a, traj([5, 6, 7, 8])) == 0.0
    assert overlap_rate(a, traj([1, 0, 3, 0])) == 0.5
    # same locations at other slots do not count
    assert overlap_rate(a, traj([1, 2, 3, 4], start=1)) == 0.0
    with pytest.raises(DomainError):
        overlap_rate(Trajectory(0, ()), a)


@settings(max_examples=100, deadline=None)
@given(a=st.lists(st.integers(0, 5), min_size=1, max_size=12), b=st.lists(st.integers(0, 5), max_size=12),
       shift=st.integers(0, 3))
def test_overlap_in_unit_interval(a, b, shift):
    ta, tb = traj(a), traj(b, start=shift)
    assert overlap_rate(ta, ta) == 1.0
    assert 0.0 <= overlap_rate(ta, tb) <= 1.0


def test_uniqueness_examples(rng):
    real = [traj(list(rng.integers(0, 10, size=8)), user=u) for u in range(6)]
    syn = [traj(list(rng.integers(0, 10, size=8)), user=100 + i) for i in range(5)] + [real[2]]
    res = uniqueness_test(real, syn)
    assert res.rates[2] == 1.0 and res.best_match[2] == 5
    far = [traj([50 + i] * 8) for i in range(4)]
    assert uniqueness_test(real, far).max == 0.0


def test_uniqueness_matches_brute_force_and_ignores_order(rng):
    real = [traj(list(rng.integers(0, 4, size=int(rng.integers(1, 10)))), start=int(rng.integers(0, 5)))
            for _ in range(30)]
    syn = [traj(list(rng.integers(0, 4, size=10)), start=int(rng.integers(0, 5))) for _ in range(40)]
    res = uniqueness_test(real, syn, chunk=7)
    brute = [max(overlap_rate(r, s) for s in syn) for r in real]
    np.testing.assert_allclose(res.rates, brute)
    perm = rng.permutation(len(syn))
    np.testing.assert_allclose(uniqueness_test(real, [syn[i] for i in perm]).rates, res.rates)


def test_summary_features():
    f = summarize_rewards(np.full(7, 0.3))
    assert len(f) == len(FEATURE_NAMES) == 9
    assert f[0] == pytest.approx(0.3) and f[1] == 0.0 and f[2] == f[3] == 0.3
    g = summarize_rewards(np.array([0.2, 0.8]))
    assert g[0] == pytest.approx(0.5) and g[2] == 0.2 and g[3] == 0.8


def test_mia_features_fixed_length(grid5):
    fz = Featurizer(grid5, tiny_features())
    for n in (2, 5, 30):
        assert mia_features(traj([1] * n), 1, constant_oracle(0.4), fz).shape == (9,)
    with pytest.raises(DomainError):
        mia_features(traj([1]), 1, constant_oracle(0.4), fz)


def test_feature_matrix_equals_rowwise(grid5, rng):
    fz = Featurizer(grid5, tiny_features())
    disc = PersonalDiscriminator(0, grid5, tiny_features(), rng)
    trajs = [traj(list(rng.integers(0, 25, size=int(rng.integers(2, 9))))) for _ in range(6)]
    homes = [int(h) for h in rng.integers(0, 25, size=6)]
    oracle = aggregated_reward_oracle([disc, disc], 0.0, noise_free(2), rng)
    x = mia_feature_matrix(trajs, homes, oracle, fz)
    rows = np.stack([mia_features(t, h, oracle, fz) for t, h in zip(trajs, homes)])
    np.testing.assert_allclose(x, rows, atol=1e-12)


def test_logistic_gradients():
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(i)
        x = rng.normal(size=(12, 9))
        y = rng.integers(0, 2, size=12)
        params = nn.ParameterSet({"w": rng.normal(size=(9, 1)), "b": rng.normal(size=1)})
        worst = max(worst, check_gradients(params, lambda: logistic_loss(params, x, y, 1e-2)))
    assert worst < 1e-4


def test_stratified_folds_balanced(rng):
    y = np.array([0] * 50 + [1] * 50)
    f = stratified_folds(y, 5, rng)
    for k in range(5):
        assert (y[f == k] == 1).sum() == 10 and (y[f == k] == 0).sum() == 10


def test_shuffled_labels_near_chance():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(400, 9))
    y = rng.permutation(np.repeat([0, 1], 200))
    res = cross_validate(x, y, seed=0)
    assert len(res.fold_accuracies) == 5
    # accuracy of a chance classifier over n=400 has sd 0.025
    assert abs(res.mean_accuracy - 0.5) < 3 * 0.025


def test_constant_oracle_has_no_signal(grid5, rng):
    fz = Featurizer(grid5, tiny_features())
    mem = [traj(list(rng.integers(0, 25, size=6)), user=u) for u in range(40)]
    non = [traj(list(rng.integers(0, 25, size=6)), user=100 + u) for u in range(40)]
    homes = [0] * 40
    res = membership_inference(mem, homes, non, homes, constant_oracle(0.5), fz)
    assert abs(res.mean_accuracy - 0.5) < 0.1


def test_planted_signal_is_found():
    rng = np.random.default_rng(0)
    base = rng.uniform(0.3, 0.6, size=(200, 20))
    x = np.stack([summarize_rewards(r) for r in base])
    y = np.repeat([1, 0], 100)
    x[y == 1] = np.stack([summarize_rewards(r + 0.3) for r in base[y == 1]])
    assert cross_validate(x, y).mean_accuracy > 0.9


def test_membership_inference_checks_sizes(grid5):
    fz = Featurizer(grid5, tiny_features())
    t = [traj([1, 2, 3])] * 10
    with pytest.raises(DomainError):
        membership_inference(t, [0] * 10, t[:9], [0] * 9, constant_oracle(0.5), fz)
    with pytest.raises(DomainError):
        membership_inference(t[:5], [0] * 5, t[:5], [0] * 5, constant_oracle(0.5), fz)


def test_deterministic_given_seed(rng):
    x = rng.normal(size=(60, 9))
    y = np.repeat([0, 1], 30)
    assert cross_validate(x, y, seed=4).fold_accuracies == cross_validate(x, y, seed=4).fold_accuracies


def test_report_text(rng):
    from mobgail.attacks import MIAResult, UniquenessResult
    rep = AttackReport(0.1, MIAResult([0.5, 0.6, 0.4, 0.5, 0.5]),
                       UniquenessResult(np.zeros(3, dtype=int), np.array([0.1, 0.2, 0.3])), ["note"])
    text = rep.to_text()
    assert text.startswith("# mobgail-attack v1")
    assert "epsilon\t0.1" in text and "mia_mean_accuracy\t0.500000" in text
    assert "uniqueness_max\t0.300000" in text and "random forest" in text
