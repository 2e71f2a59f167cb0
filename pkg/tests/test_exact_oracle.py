import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from capwalk import exact_oracle as O


@pytest.mark.parametrize("dim", [3, 4, 5])
@pytest.mark.parametrize("t", [0, 1, 2, 7, 12])
def test_mass_function_is_a_symmetric_law(dim, t):
    mf = O.step_distribution_power(dim, t)
    mf.check()
    assert mf.total() == pytest.approx(1.0, abs=1e-14)
    assert sum(mf.counts) == (2 * dim) ** t
    # E|S_t|^2 = t
    assert float(mf.probs @ (mf.points**2).sum(axis=1)) == pytest.approx(t, rel=1e-13, abs=1e-14)


@pytest.mark.parametrize("dim", [3, 4, 5])
def test_return_probability_after_two_steps(dim):
    assert O.step_distribution_power(dim, 2).mass_at([0] * dim) == pytest.approx(1 / (2 * dim))


def test_mass_at_respects_parity_and_reach():
    mf = O.step_distribution_power(5, 4)
    assert mf.mass_at([1, 0, 0, 0, 0]) == 0.0
    assert mf.mass_at([5, 0, 0, 0, 0]) == 0.0
    assert mf.mass_at([4, 0, 0, 0, 0]) == pytest.approx(10.0**-4)


def test_budget_enforced():
    with pytest.raises(O.BudgetExceeded):
        O.step_distribution_power(5, O.TIME_BUDGET[5] + 1)
    with pytest.raises(ValueError):
        O.step_distribution_power(5, -1)
    with pytest.raises(ValueError):
        O.expect_inverse_power(5, 3, [0] * 5, 5.0)


def test_orbit_size():
    assert O.orbit_size((0, 0, 0, 0, 0)) == 1
    assert O.orbit_size((1, 0, 0, 0, 0)) == 10
    assert O.orbit_size((1, 1, 0, 0, 0)) == 40


@pytest.mark.parametrize("x", [[0] * 5, [1, 0, 0, 0, 0], [2, 1, 0, 0, 0], [3, 3, 1, 0, 2]])
@pytest.mark.parametrize("p", [1.0, 3.0, 4.0])
def test_laplace_matches_enumeration(x, p):
    lap = O.inverse_power_moments(5, 16, x, p)
    exact = [O.expect_inverse_power(5, t, x, p) for t in range(17)]
    np.testing.assert_allclose(lap, exact, rtol=1e-12)


def test_laplace_reaches_long_times_and_decays():
    vals = O.inverse_power_moments(5, 400, [0] * 5, 4.0)
    # E|S_t|^-4 ~ c t^-2 in five dimensions; the scaled values settle
    scaled = vals[100:401:100] * np.arange(100, 401, 100) ** 2.0
    assert np.all(np.diff(scaled) > -0.02 * scaled[0])
    assert abs(scaled[-1] / scaled[-2] - 1) < 0.02


def _mc_moment(t, x, p, n, rng):
    steps = rng.integers(0, 10, size=(n, t))
    pos = np.zeros((n, 5))
    for k in range(10):
        counts = (steps == k).sum(axis=1)
        pos[:, k % 5] += counts * (1 if k < 5 else -1)
    r = np.maximum(np.sqrt(((pos - x) ** 2).sum(axis=1)), 1.0)
    vals = r ** (-p)
    return vals.mean(), vals.std(ddof=1) / math.sqrt(n)


def test_monte_carlo_agrees_with_oracle():
    rng = np.random.default_rng(2024)
    triples = [(int(rng.integers(1, 17)), rng.integers(-3, 4, size=5), float(rng.choice([1.0, 2.0, 3.0, 4.0])))
               for _ in range(20)]
    for t, x, p in triples:
        exact = O.expect_inverse_power(5, t, x, p)
        mean, se = _mc_moment(t, x, p, 20_000, rng)
        assert abs(mean - exact) <= 4.5 * se, (t, x.tolist(), p)


def test_pair_product_matches_nested_enumeration():
    a, b = O.step_distribution_power(5, 3), O.step_distribution_power(5, 2)
    tot = 0.0
    for z, q in zip(a.points, a.probs):
        inner = sum(w * max(np.linalg.norm(z + y), 1.0) ** -3 for y, w in zip(b.points, b.probs))
        tot += q * max(np.linalg.norm(z), 1.0) ** -3 * inner
    assert O.expect_pair_product(5, (3, 2), "cross") == pytest.approx(tot, rel=1e-12)
    with pytest.raises(ValueError):
        O.expect_pair_product(5, (3, 2), "other")


def test_difference_moment_is_a_single_walk_moment():
    # S_i - S~_j has the law of S_{i+j}
    assert O.expect_difference_inverse_power(5, 4, 3, 2.0) == pytest.approx(
        O.expect_inverse_power(5, 7, [0] * 5, 2.0), rel=1e-12)


@given(st.lists(st.integers(-6, 6), min_size=5, max_size=5), st.integers(1, 12))
def test_displacement_ratio_definition(x, t):
    v = 0.37
    assert O.displacement_ratio(5, t, x, v) == pytest.approx(v / min(t**-2.0, O.norm_plus(x) ** -4.0))


def test_canonical_box_counts_orbits():
    box = O.canonical_box(5, 2)
    assert len(box) == math.comb(2 + 5, 5)
    assert sum(O.orbit_size(z) for z in box) == 5**5


def test_displacement_sweep_small():
    s = O.displacement_sweep(5, 32, 2)
    t, *x = s.argmax
    exact = O.inverse_power_moments(5, t, x, 4.0)[t]
    assert s.max_ratio == pytest.approx(O.displacement_ratio(5, t, x, exact), rel=1e-12)
    assert math.isfinite(s.max_ratio) and s.max_ratio > 0


@pytest.mark.parametrize("rule", ["cross-c1", "pair-c1"])
def test_one_point_rule_constant_is_attained(rule):
    s = O.certify_rule_constant(rule, dim=5, i_max=6, half_width=3)
    pat = O.RULE_PATTERNS[rule]
    i, a = s.argmax
    lhs = O.expect_inverse_power(5, i, a, pat.lhs[0][1])
    rhs = i ** -pat.exponent * O.norm_plus(a) ** -pat.rhs[0][2]
    assert s.max_ratio == pytest.approx(lhs / rhs, rel=1e-10)


def test_rule_table_written(tmp_path):
    rows = O.certify_rule_constants(["cross-c5", "path-c3"], dim=5, i_max=4, half_width=2)
    path = tmp_path / "constants.csv"
    O.write_constant_table(rows, path)
    with open(path) as fh:
        data = list(csv.DictReader(fh))
    assert [r["rule_id"] for r in data] == ["cross-c5", "path-c3"]
    assert all(float(r["max_ratio"]) > 0 for r in data)


def test_sweep_stability_is_relative_shift():
    a = O.ConstantSweep("a", "", 2.0, (), 1)
    b = O.ConstantSweep("a", "", 2.1, (), 1)
    assert O.sweep_stability(a, b) == pytest.approx(0.05)
