import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import jensenshannon

from mobgail.core import DomainError, LocationGrid, SpatioTemporalPoint, Trajectory, make_rng
from mobgail.env import TransitionConfig
from mobgail.evaluation import (METRICS, EvalConfig, daily_locations, evaluate, g_rank, i_rank, jsd,
                                jump_distances, log_edges, log_histogram, radius_of_gyration)
from mobgail.synth import flatten, synth_ground_truth


def traj(locs, user=0, start=0):
    return Trajectory(user, tuple(SpatioTemporalPoint(start + i, l) for i, l in enumerate(locs)))


def prob_vectors(n):
    return st.lists(st.floats(0, 1, allow_nan=False, allow_subnormal=False), min_size=n, max_size=n).filter(lambda v: sum(v) > 1e-6)


# -- per-trajectory statistics -------------------------------------------------


def test_radius_examples(grid5):
    assert radius_of_gyration(traj([7]), grid5) == 0.0
    assert radius_of_gyration(traj([3, 3, 3]), grid5) == 0.0
    # cells 0 and 4 on one row are 2000 m apart
    assert radius_of_gyration(traj([0, 4]), grid5) == pytest.approx(1000.0)
    with pytest.raises(DomainError):
        radius_of_gyration(Trajectory(0, ()), grid5)


@settings(max_examples=50, deadline=None)
@given(locs=st.lists(st.integers(0, 24), min_size=1, max_size=20), seed=st.integers(0, 1000))
def test_radius_ignores_time_order(locs, seed):
    grid = LocationGrid(5, 5)
    shuffled = list(np.random.default_rng(seed).permutation(locs))
    a = radius_of_gyration(traj(locs), grid)
    b = radius_of_gyration(traj([int(x) for x in shuffled], user=0, start=100), grid)
    assert a == pytest.approx(b, abs=1e-9)


def test_daily_locations():
    assert daily_locations(traj([1, 1, 2])) == [2]
    assert daily_locations(traj([5] * 100)) == [1, 1, 1]
    t = Trajectory(0, (SpatioTemporalPoint(0, 1), SpatioTemporalPoint(200, 2), SpatioTemporalPoint(201, 3)))
    assert daily_locations(t) == [1, 2]  # days 1..3 are empty and omitted


def test_jump_distances(grid5):
    assert jump_distances(traj([4, 4]), grid5) == [0.0]
    g = LocationGrid(10, 10, cell_size=500.0)
    assert jump_distances(traj([0, 3 + 4 * 10]), g) == [pytest.approx(2500.0)]
    assert len(jump_distances(traj([0, 1, 2, 3, 4]), grid5)) == 4
    assert jump_distances(traj([2]), grid5) == []


def test_rank_vectors():
    assert g_rank([traj([5, 5, 5])], 3).tolist() == [1.0, 0.0, 0.0]
    v = g_rank([traj([0, 0, 1, 2])], 2)
    np.testing.assert_allclose(v, [2 / 3, 1 / 3])
    np.testing.assert_allclose(g_rank([traj([0, 1, 2])], 3), [1 / 3] * 3)
    a = traj([0, 0, 1, 1, 1, 2], user=4)
    np.testing.assert_allclose(i_rank([a], 3), g_rank([a], 3))
    np.testing.assert_allclose(i_rank([traj([0, 0], user=0), traj([1, 1], user=1)], 2), [1.0, 0.0])
    with pytest.raises(DomainError):
        g_rank([], 3)


@settings(max_examples=50, deadline=None)
@given(data=st.lists(st.tuples(st.integers(0, 3), st.lists(st.integers(0, 9), min_size=1, max_size=8)),
                     min_size=1, max_size=6), k=st.integers(1, 12))
def test_rank_vectors_are_distributions(data, k):
    trajs = [traj(locs, user=u) for u, locs in data]
    for v in (g_rank(trajs, k), i_rank(trajs, k)):
        assert len(v) == k
        assert v.min() >= 0 and v.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.diff(v) <= 1e-15)


# -- JSD ---------------------------------------------------------------------


def test_jsd_examples():
    assert jsd([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]) == 0.0
    assert jsd([1, 0], [0, 1]) == pytest.approx(math.log(2), abs=1e-15)
    hand = 0.5 * (0.5 * math.log(0.5 / 0.75) + 0.5 * math.log(0.5 / 0.25)) + 0.5 * math.log(1 / 0.75)
    assert jsd([0.5, 0.5], [1, 0]) == pytest.approx(hand, abs=1e-15)
    assert jsd([0.5, 0.5], [1, 0]) == pytest.approx(0.215762, abs=1e-6)
    with pytest.raises(DomainError):
        jsd([1.0], [0.5, 0.5])
    # a subnormal mass must not blow up the mixture term
    assert jsd([0.0, 1.0], [5e-324, 1.0]) == pytest.approx(0.0, abs=1e-300)


@settings(max_examples=200, deadline=None)
@given(p=prob_vectors(6), q=prob_vectors(6))
def test_jsd_properties(p, q):
    p = np.array(p) / sum(p)
    q = np.array(q) / sum(q)
    d = jsd(p, q)
    assert d == jsd(q, p)
    assert 0.0 <= d <= math.log(2)
    assert jsd(p, p) == 0.0
    # scipy returns the square root of the divergence
    assert d == pytest.approx(jensenshannon(p, q) ** 2, abs=1e-12)


# -- histograms and evaluate ----------------------------------------------------


def test_log_histogram(grid5):
    edges = log_edges(grid5, 30)
    assert np.all(np.diff(edges) > 0) and edges[0] == 0.0
    h = log_histogram("distance", [0.0, 0.0, 500.0, 1e9], edges)
    assert h.mass.sum() == pytest.approx(1.0)
    assert h.mass[0] == 0.5 and h.mass[-1] == 0.25


def test_evaluate_identical_sets_is_zero(grid5, rng):
    trajs = [traj(list(rng.integers(0, 25, size=10)), user=u) for u in range(20)]
    rep = evaluate(trajs, trajs, grid5)
    assert set(rep.jsd) == set(METRICS)
    assert all(v == 0.0 for v in rep.jsd.values())
    for m in METRICS:
        assert rep.real[m].mass.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(rep.real[m].mass >= 0)


def test_evaluate_bounds_and_report(grid5, rng, tmp_path):
    a = [traj(list(rng.integers(0, 25, size=8)), user=u) for u in range(10)]
    b = [traj([0] * 8, user=u) for u in range(10)]
    rep = evaluate(a, b, grid5)
    assert all(0.0 <= v <= math.log(2) for v in rep.jsd.values())
    assert rep.jsd["distance"] > 0.1
    paths = rep.write(tmp_path)
    text = (tmp_path / "metrics.tsv").read_text().splitlines()
    assert text[0] == "# mobgail-metrics v1" and len(text) == 2 + len(METRICS)
    assert len(paths) == 1 + 2 * len(METRICS)
    rows = (tmp_path / "hist_grank_real.tsv").read_text().splitlines()
    assert rows[0] == "bin\tmass"
    with pytest.raises(DomainError):
        evaluate([], b, grid5)


def test_bins_come_from_real_set_only(grid5, rng):
    a = [traj(list(rng.integers(0, 25, size=8)), user=u) for u in range(10)]
    b = [traj([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11], user=0)]
    rep = evaluate(a, b, grid5)
    assert len(rep.synthetic["grank"].mass) == len(rep.real["grank"].mass)
    np.testing.assert_array_equal(rep.real["radius"].edges, rep.synthetic["radius"].edges)


def test_same_process_samples_are_close():
    env = TransitionConfig(LocationGrid(20, 20))
    a = flatten(synth_ground_truth(500, 1, env, make_rng(1, "a")))
    b = flatten(synth_ground_truth(500, 1, env, make_rng(2, "b")))
    rep = evaluate(a, b, env.grid, EvalConfig())
    assert all(v < 0.05 for v in rep.jsd.values()), rep.jsd
