from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from capwalk.capacity import EscapeConfig
from capwalk.cross_term import (
    aux_sandwich,
    chi,
    chi_localized,
    decomposition_terms,
    decorate,
    decorate_blocks,
    epsilon_term,
    error_bound_terms,
    occupation,
    pair_fields,
    xyzw_stats,
    zn_stat,
)
from capwalk.lattice import RngStream, simulate_walk, split_segment


def gram(P, Q, green):
    diff = np.asarray(P)[:, None, :] - np.asarray(Q)[None, :, :]
    return green.many(diff.reshape(-1, diff.shape[-1])).reshape(len(P), len(Q))


clouds = st.tuples(st.integers(0, 10**6), st.integers(1, 60), st.integers(1, 60),
                   st.sampled_from([3, 20, 90]), st.sampled_from([1, 2]))


@given(clouds)
def test_pair_fields_match_brute_force(green5, args):
    seed, k, m, spread, power = args
    rng = np.random.default_rng(seed)
    P = rng.integers(-spread, spread + 1, size=(k, 5))
    Q = rng.integers(-spread, spread + 1, size=(m, 5)) + rng.integers(-60, 61, size=5)
    V = rng.random((k, 2))
    W = rng.random((m, 2))
    FP, FQ = pair_fields(P, V, Q, W, green5, power)
    G = gram(P, Q, green5) ** power
    np.testing.assert_allclose(FP, G @ W, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(FQ, G.T @ V, rtol=1e-12, atol=1e-300)


def test_pair_fields_rejects_power_three(green5):
    with pytest.raises(ValueError):
        pair_fields([[0] * 5], [1.0], [[1] + [0] * 4], [1.0], green5, 3)


def walks(seed, n, count=2):
    s = RngStream(seed, 0)
    return s, [simulate_walk(5, n, s, k) for k in range(count)]


def test_occupation_counts_every_time_index():
    _, (S,) = walks(1, 100, 1)
    pts, counts = occupation(S.points)
    assert counts.sum() == 101 and len(pts) == len(np.unique(S.points, axis=0))


def test_chi_matches_double_sum(green5):
    s, (S, T) = walks(2, 64)
    cfg = EscapeConfig(replicates=4)
    A, B = decorate(S, cfg, s, 0), decorate(T, cfg, s, 1)
    direct = A.escape @ gram(A.points, B.points, green5) @ B.escape
    c = chi(A, B, green5)
    assert c.value == pytest.approx(max(direct, 0.0), rel=1e-12)
    assert c.stderr > 0


def test_decorated_range_capacity_is_exact():
    s, (S,) = walks(3, 64, 1)
    d = decorate(S, EscapeConfig(replicates=8), s)
    assert d.exact_capacity == Fraction(int(d.escape_counts.sum()), 8)
    assert d.capacity == float(d.exact_capacity)
    assert np.all((0 <= d.escape) & (d.escape <= 1))


@given(st.integers(0, 10**6))
def test_localized_cross_term_dominates_plain(seed):
    # every point of a block escapes its block at least as often as the whole range
    s, (S, T) = walks(seed, 64)
    cfg = EscapeConfig(replicates=2)
    decs = (decorate_blocks(S, [2, 4], cfg, s, 0), decorate_blocks(T, [2, 4], cfg, s, 1))
    base = chi_localized(S, T, 1, cfg, s, None, decs).value
    for b in (2, 4):
        assert chi_localized(S, T, b, cfg, s, None, decs).value >= base * (1 - 1e-12)


def test_localized_with_one_block_is_plain_chi():
    s, (S, T) = walks(4, 64)
    cfg = EscapeConfig(replicates=4)
    assert chi_localized(S, T, 1, cfg, s).value == chi(decorate(S, cfg, s, 0), decorate(T, cfg, s, 1)).value


def test_localized_block_matrix_shape():
    s, (S, T) = walks(5, 64)
    c = chi_localized(S, T, 4, EscapeConfig(replicates=2), s)
    assert c.blocks.shape == (4, 4) and c.value == pytest.approx(c.blocks.sum())
    with pytest.raises(ValueError):
        chi_localized(S, T, 0, EscapeConfig(), s)


@given(st.integers(0, 10**6), st.integers(1, 4))
def test_decomposition_identities_are_exact(seed, L):
    s, (S,) = walks(seed, 64, 1)
    d = decomposition_terms(S, L, EscapeConfig(replicates=2), s)
    assert d.telescoping_residual() == 0
    assert d.epsilon_residual() == 0
    assert set(d.as_dict()) >= {"cap", "Lambda", "Lambda_C", "epsilon_L"}


def test_decomposition_rejects_bad_levels():
    s, (S,) = walks(6, 60, 1)
    with pytest.raises(ValueError):
        decomposition_terms(S, 3, EscapeConfig(), s)  # 60 not divisible by 8
    with pytest.raises(ValueError):
        decomposition_terms(S, 0, EscapeConfig(), s)


def test_epsilon_term_bookkeeping():
    s, (S, T) = walks(7, 128)
    e = epsilon_term(S, T, EscapeConfig(replicates=4), s)
    assert e.value == pytest.approx(2 * e.chi - e.chi_C, abs=1e-12)
    assert e.chi_C == pytest.approx(e.cap_A + e.cap_B - e.cap_union, abs=1e-12)
    assert e.chi_C >= 0


def test_error_bound_time_form_dominates_set_form(green5):
    s, (S, T) = walks(8, 128)
    cfg = EscapeConfig(replicates=4)
    t = error_bound_terms(S, T, green5, cfg, s, "time")
    u = error_bound_terms(S, T, green5, cfg, s, "set")
    assert t.first >= u.first and t.second >= u.second
    assert t.cap_intersection == u.cap_intersection
    with pytest.raises(ValueError):
        error_bound_terms(S, T, green5, cfg, s, "both")


def test_error_bound_sums_match_brute_force(green5):
    s, (S, T) = walks(9, 32)
    b = error_bound_terms(S, T, green5, EscapeConfig(replicates=2), s, "time")
    G = gram(S.points, T.points, green5)  # time by time
    assert b.first == pytest.approx(float((G.sum(axis=1) ** 2).sum()), rel=1e-12)
    assert b.second == pytest.approx(float((G.sum(axis=0) ** 2).sum()), rel=1e-12)


def test_zn_stat_matches_brute_force(green5):
    _, (S, T) = walks(10, 48)
    assert zn_stat(S, T, green5) == pytest.approx(float((gram(S.points, T.points, green5) ** 2).sum()),
                                                  rel=1e-12)


def test_xyzw_matches_brute_force(green5):
    _, (S, T) = walks(11, 16)
    l = 2
    res = xyzw_stats(S, T, l, green5)
    h = 16 >> l

    def side(U, V):
        GUV = gram(U.points, V.points, green5)
        GVV = gram(V.points, V.points, green5)
        x = y = 0.0
        for p in range((1 << l) // 2):
            I1 = range(2 * p * h, (2 * p + 1) * h + 1)
            I2 = range((2 * p + 1) * h, (2 * p + 2) * h + 1)
            for j1 in I1:
                for j2 in I2:
                    x += GUV[:, j1].sum() * GVV[j1, j2]
                    y += GUV[:, j2].sum() * GVV[j1, j2]
        return x, y

    X, Y = side(S, T)
    Z, W = side(T, S)
    assert res["X"] == pytest.approx(X, rel=1e-12)
    assert res["Y"] == pytest.approx(Y, rel=1e-12)
    assert res["Z"] == pytest.approx(Z, rel=1e-12)
    assert res["W"] == pytest.approx(W, rel=1e-12)


def test_aux_sandwich_defect_nonnegative_and_bounded(green5):
    s, (S, T) = walks(12, 128)
    A, B = split_segment(S, 1, 1), split_segment(S, 1, 2)
    a = aux_sandwich(A, B, T, EscapeConfig(replicates=8), s, green5)
    assert a.value >= 0
    assert a.constant == pytest.approx(1 + 1 / green5.at_origin())
    assert a.value <= a.bound + 3 * a.stderr


def test_dimension_mismatch_rejected(green4):
    s, (S, T) = walks(13, 16)
    with pytest.raises(ValueError):
        zn_stat(S, T, green4)


def test_pair_fields_with_an_empty_side(green5):
    FP, FQ = pair_fields([[0] * 5, [1] + [0] * 4], np.ones((2, 3)), np.zeros((0, 5)), np.zeros((0, 2)), green5)
    assert FP.shape == (2, 2) and not FP.any()
    assert FQ.shape == (0, 3)
