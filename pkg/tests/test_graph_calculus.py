import itertools
import json
import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from capwalk import graph_calculus as GC


@pytest.mark.parametrize("m,count", [(1, 1), (2, 6), (3, 90), (4, 2520)])
def test_two_to_one_map_count(m, count):
    maps = GC.two_to_one_maps(m)
    assert len(maps) == count == math.factorial(2 * m) // 2**m
    assert all(GC.check_two_to_one(p, m) == p for p in maps)


def test_bad_two_to_one_map_rejected():
    with pytest.raises(ValueError):
        GC.check_two_to_one((1, 1, 1, 2), 2)
    with pytest.raises(ValueError):
        GC.build_error_graph(2, (1, 2, 2))


@pytest.mark.parametrize("m", [1, 2, 3])
def test_every_graph_certifies(m):
    rep = GC.enumerate_and_certify(m)
    assert rep.ok
    assert rep.certified == rep.error_cases + rep.cross_cases
    assert rep.cross_cases == math.factorial(m)


def test_enumeration_range_checked():
    with pytest.raises(ValueError):
        GC.enumerate_and_certify(5)


def test_slot_colours_last_occurrence_blue():
    colors = GC.slot_colors((1, 2, 1, 2))
    assert colors[-1] == GC.BLUE
    # every S vertex receives one red and one blue slot
    for v in (1, 2):
        got = sorted(c for c, p in zip(colors, (1, 2, 1, 2)) if p == v)
        assert got == [GC.BLUE, GC.RED]


@given(st.integers(1, 3).flatmap(lambda m: st.permutations([k for k in range(1, m + 1) for _ in (0, 1)])))
def test_reduction_invariants_hold(phi):
    m = len(phi) // 2
    g = GC.build_error_graph(m, phi)
    cert = GC.reduce_to_certificate(g)
    assert cert.residual_ok
    assert cert.removed_weight() == g.total_weight()
    assert cert.constant_power == 3 * m
    assert GC.bound_matches_closed_form(cert)
    assert all(e == Fraction(1) for _, e in cert.factors())


@pytest.mark.parametrize("order", list(itertools.permutations(range(1, 4))))
def test_cross_graph_factors(order):
    cert = GC.reduce_to_certificate(GC.build_cross_graph(3, order))
    assert cert.residual_ok
    assert all(e == Fraction(3, 4) for _, e in cert.factors())
    assert GC.bound_matches_closed_form(cert)


def test_certificate_json_roundtrip_and_field_order():
    cert = GC.reduce_to_certificate(GC.build_error_graph(2, (1, 2, 2, 1)))
    data = json.loads(cert.to_json())
    assert list(data) == ["m", "kind", "phi", "order", "steps", "residual_ok"]
    assert list(data["steps"][0]) == ["rule", "pivot", "factor"]
    again = GC.replay(cert.to_json())
    assert again.factors() == cert.factors()
    assert again.symbolic_bound() == cert.symbolic_bound()
    assert cert.symbolic_bound().startswith("C^6 * ")


def test_replay_detects_tampered_factor():
    data = json.loads(GC.reduce_to_certificate(GC.build_error_graph(2, (1, 1, 2, 2))).to_json())
    data["steps"][0]["factor"]["exponent"] = "3/4"
    with pytest.raises(AssertionError):
        GC.replay(data)


def test_replay_detects_wrong_rule():
    data = json.loads(GC.reduce_to_certificate(GC.build_error_graph(2, (1, 2, 1, 2))).to_json())
    used = data["steps"][0]["rule"]
    data["steps"][0]["rule"] = next(r for r in GC.RULES if r != used)
    with pytest.raises((GC.PatternMismatch, AssertionError, GC.StuckState, ValueError)):
        GC.replay(data)


def test_replay_detects_dropped_step():
    data = json.loads(GC.reduce_to_certificate(GC.build_cross_graph(2)).to_json())
    data["steps"] = data["steps"][:-1]
    with pytest.raises(AssertionError):
        GC.replay(data)


def brute_chain(exponents, n):
    total = 0.0
    for ts in itertools.combinations_with_replacement(range(1, n + 1), len(exponents)):
        prev, term = 0, 1.0
        for t, e in zip(ts, exponents):
            term *= max(t - prev, 1) ** (-float(e))
            prev = t
        total += term
    return total


@pytest.mark.parametrize("exponents", [(1,), (1, 1), (Fraction(3, 4), Fraction(3, 4), 1)])
def test_summation_bound_matches_brute_force(exponents):
    names = ["0"] + [f"t{k}" for k in range(1, len(exponents) + 1)]
    factors = [((names[k + 1], names[k]), e) for k, e in enumerate(exponents)]
    n = 12
    assert GC.summation_bound(factors, n) == pytest.approx(brute_chain(exponents, n), rel=1e-12)


def test_harmonic_chain():
    assert GC.summation_bound([(("t", "0"), 1)], 1000) == pytest.approx(
        sum(1 / t for t in range(1, 1001)), rel=1e-12)


def test_error_bound_grows_polylogarithmically():
    # error graphs emit exponent-1 gaps, so the sum is polylogarithmic in n
    cert = GC.reduce_to_certificate(GC.build_error_graph(1, (1, 1)))
    a = GC.log_summation_bound(cert, 2**10)
    b = GC.log_summation_bound(cert, 2**14)
    ratio = math.exp(b - a)
    assert ratio < (14 / 10) ** 3 * 1.5


def test_empty_factor_list_sums_to_one():
    assert GC.summation_bound([], 10) == 1.0
    with pytest.raises(ValueError):
        GC.summation_bound([], 0)
