import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from capwalk.capacity import (
    EscapeConfig,
    PointSet,
    SetFamily,
    capacity,
    capacity_from_counts,
    capacity_via_hitting,
    chi_C,
    escape_probability,
    family_escape,
    truncation_bias_bound,
)
from capwalk.lattice import RngStream, simulate_walk


def equilibrium(A: PointSet, green):
    """Equilibrium measure of a small set: solve G_A e = 1."""
    diff = A.points[:, None, :] - A.points[None, :, :]
    GA = green.many(diff.reshape(-1, A.dim)).reshape(len(A), len(A))
    return np.linalg.solve(GA, np.ones(len(A)))


SMALL_SETS = [
    [[0, 0, 0, 0, 0]],
    [[0, 0, 0, 0, 0], [1, 0, 0, 0, 0]],
    [[0, 0, 0, 0, 0], [1, 0, 0, 0, 0], [1, 1, 0, 0, 0], [2, 1, 0, 0, 0]],
    [[0, 0, 0, 0, 0], [3, 0, 0, 0, 0], [0, 0, 3, 0, 0], [1, 2, 0, 0, 1], [0, 0, 0, 0, 2]],
]


def test_point_capacity_is_inverse_green_at_origin(green5):
    e = equilibrium(PointSet(5, [[0] * 5]), green5)
    assert e[0] == pytest.approx(1 / green5.at_origin(), rel=1e-14)


def test_two_point_capacity_closed_form(green5):
    A = PointSet(5, SMALL_SETS[1])
    e = equilibrium(A, green5)
    g0, g1 = green5.at_origin(), green5.many([[1, 0, 0, 0, 0]])[0]
    assert e.sum() == pytest.approx(2 / (g0 + g1), rel=1e-14)


@pytest.mark.parametrize("pts", SMALL_SETS, ids=lambda p: f"{len(p)}pts")
def test_escape_sum_matches_linear_solve(green5, pts):
    A = PointSet(5, pts)
    e = equilibrium(A, green5)
    c = capacity(A, EscapeConfig(radius=80.0, replicates=20_000), RngStream(17, len(pts)))
    assert abs(c.mean - e.sum()) <= 4 * c.stderr + c.bias_bound
    # per-point escape probabilities are the equilibrium weights
    se = np.sqrt(c.per_point * (1 - c.per_point) / 20_000)
    assert np.all(np.abs(c.per_point - e) <= 4 * se + c.bias_bound)


def test_hitting_ratio_matches_linear_solve(green5):
    A = PointSet(5, SMALL_SETS[2])
    exact = equilibrium(A, green5).sum()
    h = capacity_via_hitting(A, None, EscapeConfig(), RngStream(5, 0), walks=100_000)
    assert abs(h.mean - exact) <= 4 * h.stderr + h.bias_bound


def test_escape_probability_single_point(green5):
    A = PointSet(5, [[0] * 5])
    p = escape_probability(A, [0] * 5, EscapeConfig(radius=100.0, replicates=50_000), RngStream(2, 0))
    assert abs(p.mean - 1 / green5.at_origin()) <= 4 * p.stderr + p.bias_bound


def test_empty_set_has_zero_capacity():
    c = capacity(PointSet.empty(5), EscapeConfig(replicates=4))
    assert c.mean == 0.0 and c.stderr == 0.0


def test_bad_configs_rejected():
    with pytest.raises(ValueError):
        EscapeConfig(replicates=0)
    with pytest.raises(ValueError):
        EscapeConfig(radius=-1.0)
    with pytest.raises(ValueError):
        EscapeConfig(radius=2.0).kill_radius(5.0)
    with pytest.raises(ValueError):
        SetFamily.from_sets([])


def test_default_kill_radius():
    cfg = EscapeConfig()
    assert cfg.kill_radius(10.0) == 34.0
    assert cfg.kill_radius(100.0) == 200.0


def test_truncation_bias_bound_decays():
    a = truncation_bias_bound(10, 5, 50.0, 5.0)
    b = truncation_bias_bound(10, 5, 95.0, 5.0)
    assert b < a and b == pytest.approx(a * (45 / 90) ** 3)


def test_capacity_is_exact_dyadic_rational():
    counts = np.array([3, 5, 0, 8])
    mean, _, p = capacity_from_counts(counts, 8)
    assert mean == 2.0 and np.array_equal(p, counts / 8)


def test_same_stream_same_estimate():
    A = PointSet.from_walk(simulate_walk(5, 64, RngStream(4, 0)))
    cfg = EscapeConfig(replicates=4)
    assert capacity(A, cfg, RngStream(9, 1)).mean == capacity(A, cfg, RngStream(9, 1)).mean


def test_point_set_operations():
    a = PointSet(2, [[0, 0], [1, 0], [1, 0]])
    b = PointSet(2, [[1, 0], [2, 0]])
    assert len(a) == 2
    assert len(a.union(b)) == 3
    assert a.intersection(b).points.tolist() == [[1, 0]]
    assert a.contains([1, 0]) and not a.contains([2, 0])


walk_pairs = st.tuples(st.integers(0, 10**6), st.sampled_from([16, 32, 64]))


@given(walk_pairs)
def test_coupled_escape_is_monotone_in_the_set(args):
    # A subset of B: every walk that escapes B escapes A
    seed, n = args
    st_ = RngStream(seed, 0)
    S = simulate_walk(5, n, st_)
    B = PointSet.from_walk(S)
    A = PointSet(5, S.points[: n // 2 + 1])
    res = family_escape(SetFamily.from_sets([A, B]), EscapeConfig(replicates=3), st_)
    rows = res.family.member_rows(0)
    assert np.all(res.indicators(0, rows) >= res.indicators(1, rows))


@given(walk_pairs)
def test_capacity_deficit_is_pathwise_nonnegative(args):
    seed, n = args
    st_ = RngStream(seed, 1)
    A = PointSet.from_walk(simulate_walk(5, n, st_, 0))
    B = PointSet.from_walk(simulate_walk(5, n, st_, 1))
    value, _ = chi_C(A, B, EscapeConfig(replicates=2), st_)
    assert value >= 0


@given(st.integers(0, 10**6))
def test_deficit_of_set_with_itself_is_its_capacity(seed):
    st_ = RngStream(seed, 2)
    A = PointSet.from_walk(simulate_walk(5, 32, st_))
    cfg = EscapeConfig(replicates=2)
    value, _ = chi_C(A, A, cfg, st_)
    assert value == capacity(A, cfg, st_).mean


def test_capacity_of_range_is_between_bounds(green5):
    # |A| / G-sum bound from below, |A| / G(0) from above
    A = PointSet.from_walk(simulate_walk(5, 128, RngStream(8, 0)))
    c = capacity(A, EscapeConfig(replicates=32), RngStream(8, 1))
    assert c.mean <= len(A) / green5.at_origin() + 4 * c.stderr
    diff = A.points[:, None, :] - A.points[None, :, :]
    row_sums = green5.many(diff.reshape(-1, 5)).reshape(len(A), len(A)).sum(axis=1)
    assert c.mean >= len(A) / row_sums.max() - 4 * c.stderr - c.bias_bound
    assert math.isfinite(c.bias_bound)


@given(st.integers(0, 2**31), st.integers(-1, 39))
def test_seeded_distance_query_is_exact(seed, hint):
    from capwalk import _kernels as K

    rng = np.random.default_rng(seed)
    pts = np.unique(rng.integers(-6, 7, size=(40, 5)), axis=0)
    idx = K.SetIndex(pts)
    stack = np.empty(64, dtype=np.int64)
    hint = min(hint, len(pts) - 1)
    for y in rng.integers(-12, 13, size=(20, 5)):
        brute = min(int(np.abs(pts - y).max(axis=1).min()), 9)
        d, near = K.linf_nearest(y, idx.sorted_points, idx.node_lo, idx.node_hi, idx.n_leaves, 5, 9,
                                 stack, hint)
        assert d == brute
        if d < 9:
            assert np.abs(idx.sorted_points[near] - y).max() == d
