import itertools
import json
import math
import re

import numpy as np
import pytest
from hypothesis import given, strategies as st

from capwalk import deviation_lab as D
from capwalk.capacity import EscapeConfig
from capwalk.cross_term import error_bound_terms
from capwalk.lattice import RngStream, simulate_walk


def minimal(**kw):
    return D.ExperimentConfig.from_dict({"dim": 5, "n": [64, 128], "replicates": 100, "seed": 1, **kw})


# ------------------------------------------------------------------ config


def test_minimal_config_accepted():
    cfg = minimal()
    assert cfg.statistic == "cap" and cfg.n == (64, 128)
    assert D.ExperimentConfig.from_dict(cfg.as_dict()) == cfg


@pytest.mark.parametrize("patch,path", [
    ({"replicates": 50}, "config.replicates"),
    ({"n": [128, 64]}, "config.n"),
    ({"colour": "red"}, "config.colour"),
    ({"dim": 3}, "config.dim"),
    ({"statistic": "mean"}, "config.statistic"),
    ({"seed": True}, "config.seed"),
    ({"n": [64, 96.5]}, "config.n[1]"),
    ({"b_n": "n.real"}, "config.b_n"),
    ({"statistic": "chi_b", "block_count": 3}, "config.block_count"),
    ({"m_max": 5}, "config.m_max"),
])
def test_bad_config_names_the_key(patch, path):
    with pytest.raises(D.ConfigError, match=rf"^{re.escape(path)}"):
        minimal(**patch)


def test_required_key_missing():
    with pytest.raises(D.ConfigError, match="config.seed"):
        D.ExperimentConfig.from_dict({"dim": 5, "n": [64], "replicates": 100})


@pytest.mark.parametrize("expr,n,value", [
    ("1", 10, 1.0),
    ("sqrt(log n)", math.exp(4), 2.0),
    ("log n", math.e**3, 3.0),
    ("2*log(n)^2", math.e, 2.0),
    ("n^0.25", 16, 2.0),
    ("-(-3)", 5, 3.0),
])
def test_deviation_scale_parses(expr, n, value):
    assert D.DeviationScale(expr)(n) == pytest.approx(value, rel=1e-14)


@pytest.mark.parametrize("expr", ["__import__('os')", "n.real", "exp(n)", "n if n else 1", "[n]", "n +"])
def test_deviation_scale_rejects_unsafe_input(expr):
    with pytest.raises(ValueError):
        D.DeviationScale(expr)


def test_deviation_scale_must_be_positive():
    with pytest.raises(ValueError):
        D.DeviationScale("log n")(1)


# --------------------------------------------------------------- closed forms


def test_rate_function_values():
    assert D.rate_functions(1.0, 1.0, 1.0, 5) == pytest.approx(0.5 * 5 ** (-5 / 3), rel=1e-15)
    assert D.rate_functions(1.0, 1.0, dim=4) == pytest.approx(2 / math.pi**4, rel=1e-15)


@given(st.floats(0.01, 100), st.floats(0.1, 10), st.floats(0.05, 1.0), st.floats(0.1, 10))
def test_rate_function_scaling(lam, kappa, gamma, c):
    i5 = D.rate_functions(c * lam, kappa, gamma, 5) / D.rate_functions(lam, kappa, gamma, 5)
    assert i5 == pytest.approx(c ** (2 / 3), rel=1e-12)
    i4 = D.rate_functions(c * lam, kappa, dim=4) / D.rate_functions(lam, kappa, dim=4)
    assert i4 == pytest.approx(c, rel=1e-12)
    # kappa^-4 and gamma^-2 enter as (kappa^4 gamma^2)^(-2/3)
    assert D.rate_functions(lam, 2 * kappa, gamma, 5) == pytest.approx(
        D.rate_functions(lam, kappa, gamma, 5) * 2 ** (-8 / 3), rel=1e-12)


def test_rate_function_domain():
    with pytest.raises(ValueError):
        D.rate_functions(0.0, 1.0)
    with pytest.raises(ValueError):
        D.rate_functions(1.0, 1.0, 1.5, 5)
    with pytest.raises(ValueError):
        D.rate_functions(1.0, 1.0, dim=3)


def test_optimization_identities_unit_inputs():
    a, b = D.optimization_identities()
    assert a.closed_form == 105.46875
    assert a.relative_error < 1e-10 and b.relative_error < 1e-10
    # maximisers from the first-order conditions
    assert a.argmax == pytest.approx((7.5) ** 4, rel=1e-5)
    assert b.argmax == pytest.approx(4 ** (-1 / 3), rel=1e-5)


@given(st.floats(1e-3, 1e3), st.floats(0.1, 10), st.floats(1e-2, 1e2), st.floats(1e-3, 1e3))
def test_optimization_identities_over_parameters(theta, kappa, C, lam):
    for check in D.optimization_identities(theta, kappa, C, lam):
        assert check.relative_error < 1e-8, check


def test_optimization_identities_small_theta():
    a, _ = D.optimization_identities(theta=1e-6)
    assert a.relative_error < 1e-8
    with pytest.raises(ValueError):
        D.optimization_identities(theta=0.0)


def brute_composition_factor(l, m):
    parts = 2 ** (l - 1)
    total = 0
    for comp in itertools.product(range(m + 1), repeat=parts):
        if sum(comp) == m:
            total += math.prod(math.factorial(c) for c in comp)
    return math.factorial(m) * total


@pytest.mark.parametrize("l,m", [(1, 1), (1, 5), (2, 3), (2, 7), (3, 4), (4, 3)])
def test_combinatorial_factor_matches_enumeration(l, m):
    assert D.combinatorial_factor(l, m).value == brute_composition_factor(l, m)


def test_combinatorial_factor_known_value():
    assert D.combinatorial_factor(2, 3).value == 96


def test_combinatorial_bound_holds_on_whole_grid():
    grid = [D.combinatorial_factor(l, m) for l in range(1, 7) for m in range(1, 31)]
    assert all(f.holds and f.ratio_to_bound <= 1 for f in grid)
    with pytest.raises(ValueError):
        D.combinatorial_factor(7, 1)


def test_combinatorial_concentration_on_vertices():
    # for m large against the number of parts, the sum sits on the simplex vertices
    f = D.combinatorial_factor(1, 30)
    assert f.concentration == 1.0
    g = D.combinatorial_factor(2, 30)
    assert 1.0 < g.concentration < 1.1


# -------------------------------------------------------------------- fits


def test_fit_power_law_exact_data():
    x = np.array([64, 128, 256, 512.0])
    f = D.fit_power_law("t", x, 3 * x**0.5, 0.01 * x**0.5)
    assert f.exponent == pytest.approx(0.5, abs=1e-12)
    assert math.exp(f.intercept) == pytest.approx(3.0, rel=1e-12)
    assert f.ci[0] < 0.5 < f.ci[1]


def test_fit_power_law_noisy_data_within_interval():
    rng = np.random.default_rng(0)
    x = 2.0 ** np.arange(6, 14)
    se = 0.02 * x**1.5
    y = x**1.5 + rng.normal(0, se)
    f = D.fit_power_law("t", x, y, se)
    assert abs(f.exponent - 1.5) < 4 * f.stderr
    with pytest.raises(ValueError):
        D.fit_power_law("t", [1, 2], [1, -1], [1, 1])


def test_corrected_variance_removes_noise():
    rng = np.random.default_rng(1)
    R = 20_000
    truth = rng.normal(10, 2, R)
    noisy = truth + rng.normal(0, 1, R)
    var, se = D.corrected_variance(noisy, np.ones(R))
    assert abs(var - 4.0) < 4 * se


def test_intercept_functional_reproduces_intercept():
    T = np.array([64, 128, 256, 512.0])
    for power in (0.5, 1.0):
        a = D._intercept_functional(T, power, np.array([0.01, 0.02, 0.01, 0.03]))
        assert a @ (0.3 + 2.0 * T**-power) == pytest.approx(0.3, rel=1e-12)


# ------------------------------------------------------------------- tails


def test_tail_thresholds():
    assert D.tail_threshold("cap", 100, 2.0, 1.0) == pytest.approx(math.sqrt(200 * math.log(100)))
    assert D.tail_threshold("chi", 100, 2.0, 1.5) == pytest.approx(1.5 * math.sqrt(800))


def test_tail_rows_extremes():
    rng = np.random.default_rng(3)
    v = rng.normal(0, 1, 4000)
    far, zero = D.tail_rows("cap", 256, v, 1.0, [100.0, 0.0])
    assert far.count == 0 and far.rate is None
    assert abs(zero.frequency - 0.5) < 0.05
    assert zero.rate == pytest.approx(-math.log(zero.frequency))
    low = D.tail_rows("cap_lower", 256, v, 1.0, [0.0])[0]
    assert low.count + zero.count in (4000, 4001)


# ----------------------------------------------------------- replicates


def test_full_sampling_pair_sums_are_exact(green5):
    plan = D.ReplicatePlan(cap=True, chi_copies=1, error_bound=True, green_sum=True,
                           sample_fraction=1.0)
    out = D.replicate_statistics(5, 64, 9, 0, plan, green5)
    st_ = D.replicate_stream(9, 64, 0)
    S, T = simulate_walk(5, 64, st_, 0), simulate_walk(5, 64, st_, 1)
    diff = S.points[:, None, :] - T.points[None, :, :]
    G = green5.many(diff.reshape(-1, 5)).reshape(65, 65)
    assert out["green_sum"] == pytest.approx(G.sum(), rel=1e-12)
    b = error_bound_terms(S, T, green5, EscapeConfig(replicates=16), st_, "time", tag=100)
    assert out["ebr_first"] == pytest.approx(b.first, rel=1e-12)
    assert out["ebr_second"] == pytest.approx(b.second, rel=1e-12)
    assert out["ebr_cap"] == b.cap_intersection


@pytest.mark.parametrize("key", ["chi_0", "green_sum", "ebr"])
def test_subsampled_pair_sums_are_unbiased(key):
    # same walks, different subsampling rate: paired differences average to zero
    R = 300
    full = D.ReplicatePlan(cap=True, chi_copies=1, error_bound=True, green_sum=True, sample_fraction=1.0)
    sub = D.ReplicatePlan(cap=True, chi_copies=1, error_bound=True, green_sum=True)
    a = D.run_replicates(5, 64, 13, R, full, workers=1)[key]
    b = D.run_replicates(5, 64, 13, R, sub, workers=1)[key]
    d = b - a
    assert abs(d.mean()) <= 4 * d.std(ddof=1) / math.sqrt(R) + 1e-12


def test_noise_estimate_matches_escape_variance():
    # E[noise] = sum_x p_x (1 - p_x) / r, the escape-noise variance of cap given the walk
    R = 300
    plan = D.ReplicatePlan(cap=True, escape_walks=2)
    s = D.run_replicates(5, 64, 17, R, plan, workers=1)
    st_ = D.replicate_stream(17, 64, 0)
    assert np.all(s["cap_noise"] >= 0)
    # repeat one walk with many escape-walk draws and compare the spread
    from capwalk.capacity import PointSet, escape_indicators
    A = PointSet.from_walk(simulate_walk(5, 64, st_, 0))
    ind, _ = escape_indicators(A, EscapeConfig(replicates=512), st_, 50)
    p = ind.mean(axis=1)
    target = float((p * (1 - p)).sum()) / 2
    assert s["cap_noise"].mean() == pytest.approx(target, rel=0.5)


def test_results_do_not_depend_on_worker_count():
    cfg = D.ExperimentConfig(dim=5, n=(32, 64), replicates=100, seed=3, statistic="chi")
    one = json.dumps(D.run_experiment(cfg, workers=1), sort_keys=True)
    two = json.dumps(D.run_experiment(cfg, workers=2), sort_keys=True)
    assert one == two


@pytest.mark.parametrize("statistic", ["cap", "chi", "chi_b", "epsilon_L", "error_bound_rhs"])
def test_run_experiment_shapes(statistic):
    cfg = D.ExperimentConfig(dim=5, n=(32, 64), replicates=100, seed=4, statistic=statistic, m_max=2)
    res = D.run_experiment(cfg, workers=1)
    assert [d["n"] for d in res["per_n"]] == [32, 64]
    assert len(res["exceedances"]) == 2 * len(cfg.lambdas)
    rows = D.results_csv_rows(res)
    assert len(rows) == sum(len(d["moments"]) for d in res["per_n"])
    assert "runtime" not in json.dumps(res)


def test_scaling_suite_small_grid():
    rep = D.scaling_suite(5, (32, 64, 128), 100, seed=1, workers=1)
    names = [f["name"] for f in rep.as_dict()["fits"]]
    assert names == ["chi_moment_1_exponent", "var_ratio_drift_top_two_octaves",
                     "error_bound_rhs_loglog_exponent"]
    assert 0 < rep.chi_exponent.exponent < 1.5


# ------------------------------------------------------------- gamma tilde


def brute_horizon(dim, horizon, stream):
    W = [[tuple(p) for p in simulate_walk(dim, horizon, stream, k).points.tolist()] for k in range(3)]
    origin = W[0][0]
    for T in range(1, horizon + 1):
        seen12 = set(W[0][: T + 1]) | set(W[1][: T + 1])
        if W[0][T] == origin or any(p in seen12 for p in W[2][1 : T + 1]):
            return T
    return horizon + 1


@given(st.integers(0, 10**6), st.sampled_from([8, 32, 100]))
def test_three_walk_horizon_matches_brute_force(seed, horizon):
    assert D.three_walk_horizon(5, horizon, RngStream(seed, 0)) == brute_horizon(5, horizon, RngStream(seed, 0))


def test_gamma_tilde_small_run():
    est = D.estimate_gamma_tilde((16, 32, 64), replicates=400, seed=1, workers=1)
    assert est.monotone
    assert all(0 < p < 1 for p in est.probabilities)
    assert 0 < est.value < est.probabilities[-1] + 4 * est.stderr
    with pytest.raises(ValueError):
        D.estimate_gamma_tilde((16,), replicates=10)
    with pytest.raises(ValueError):
        D.estimate_gamma_tilde(dim=4, replicates=10)
