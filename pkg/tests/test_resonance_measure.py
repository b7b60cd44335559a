import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qho_kam.errors import SpecError
from qho_kam.kam_engine import run
from qho_kam.resonance_measure import (FrequencyModel, ZoneSpec, enumerate_zones, estimate_measure,
                                       exact_measure, excised_fraction_curve,
                                       fit_single_zone_constant, l_bracket, l_class,
                                       log_momentum_inequality, log_shift, measure_exponent,
                                       minus_class_measure, momentum_check, run_excised_fraction,
                                       sample_box, single_zone_table, single_zone_threshold,
                                       union_bound_check, union_indicator, weighted_l_norms,
                                       wilson_interval, zone_indicator, zone_interval,
                                       zone_union_fraction, zones_csv)

TWO_PI = 2 * np.pi


def test_linear_zone_indicator():
    model = FrequencyModel()
    z = ZoneSpec((1,), (), 0.01)
    edge = 0.01 / math.e
    xi = np.array([[0.0], [0.5 * edge], [0.999 * edge], [edge], [1.001 * edge], [1.0]])
    np.testing.assert_array_equal(zone_indicator(xi, z, model), [1, 1, 1, 0, 0, 0])


@pytest.mark.parametrize("i, j", [(1, 2), (3, 7), (1, 40)])
def test_k_zero_minus_zone_empty(i, j):
    model = FrequencyModel()
    z = ZoneSpec.minus((0,), i, j, 1.0)
    assert not zone_indicator(sample_box(1, 2000, 1), z, model).any()
    assert zone_interval(z, model) is None


def test_perturbed_indicator_hand_value():
    alpha, beta = 0.01, 6.0
    model = FrequencyModel(shift=log_shift(alpha, beta))
    z = ZoneSpec.minus((-1,), 2, 1, alpha)
    # -xi + Omega_2 - Omega_1 with Omega_j = 2j - 1 + alpha (1 + ln j)^(-2 beta)
    centre = 2.0 + alpha * ((1 + math.log(2)) ** (-2 * beta) - 1.0)
    bound = alpha / math.e
    for off, inside in [(0.0, True), (0.9, True), (-0.9, True), (1.1, False), (-1.1, False)]:
        xi = centre + off * bound
        assert bool(zone_indicator([[xi]], z, model)[0]) is inside
        np.testing.assert_allclose(z.divisor([[xi]], model)[0], centre - xi, atol=1e-14)


def test_exact_measure_clipped_at_box_edge():
    alpha = 0.01
    est = estimate_measure(ZoneSpec((1,), (), alpha), FrequencyModel(), N=200_000, seed=4)
    # the two-sided interval |xi| < alpha / A_1 loses its negative half to the box
    np.testing.assert_allclose(est.exact, alpha / math.e, rtol=1e-14)
    assert est.agrees


def test_interior_zone_measure_two_sided():
    z = ZoneSpec((-3,), ((2, 1), (1, -1)), 0.01)
    model = FrequencyModel()
    np.testing.assert_allclose(exact_measure(z, model), 2 * 0.01 / (3 * z.growth), rtol=1e-12)
    assert estimate_measure(z, model, N=100_000, seed=2).agrees


def test_halving_alpha_halves_measure():
    model = FrequencyModel()
    z = ZoneSpec((2,), ((1, 1),), 0.02)
    full, half = exact_measure(z, model), exact_measure(z.with_alpha(0.01), model)
    np.testing.assert_allclose(half, full / 2, rtol=1e-12)
    xi = sample_box(1, 400_000, 9)
    mc_full = estimate_measure(z, model, xi=xi)
    mc_half = estimate_measure(z.with_alpha(0.01), model, xi=xi)
    assert abs(mc_half.value - mc_full.value / 2) <= mc_half.ci_halfwidth + mc_full.ci_halfwidth / 2


def test_l_norms_examples():
    assert weighted_l_norms({1: 1}) == (1, 1.0, 1.0)
    b, plus, _ = weighted_l_norms({5: 2}, 6.0)
    assert b == 10
    np.testing.assert_allclose(plus, 2 * (1 + math.log(5)) ** 12, rtol=1e-14)
    b, plus, minus = weighted_l_norms({3: 1, 8: -1}, 2.0)
    assert b == 5
    np.testing.assert_allclose(plus, (1 + math.log(8)) ** 4, rtol=1e-14)
    np.testing.assert_allclose(minus, (1 + math.log(3)) ** -4, rtol=1e-14)
    assert weighted_l_norms({}) == (1, 0.0, 0.0)


def test_l_classes_and_validation():
    assert l_class({}) == "zero"
    assert l_class({2: 1, 5: -1}) == "minus"
    assert l_class({2: 1, 5: 1}) == "plus"
    assert l_class({4: -2}) == "plus"
    assert l_bracket([(4, 1), (4, -1)]) == 1
    with pytest.raises(SpecError):
        weighted_l_norms({1: 2, 2: 1})
    with pytest.raises(SpecError):
        ZoneSpec((0,), ())
    with pytest.raises(SpecError):
        ZoneSpec.minus((1,), 3, 3, 0.1)
    assert ZoneSpec((1,), ((3, 1), (7, -1)), 0.1).encode() == "+3-7"
    assert ZoneSpec.plus((1,), 4, 4, 0.1).encode() == "+2*4"


def test_wilson_interval():
    lo, hi = wilson_interval(0, 1000)
    assert lo <= 1e-15 and 0 < hi < 0.005
    lo, hi = wilson_interval(500, 1000)
    np.testing.assert_allclose([lo, hi], [0.4690696003681042, 0.5309303996318958], rtol=1e-14)


def test_sample_count_floor():
    with pytest.raises(SpecError):
        estimate_measure(ZoneSpec((1,), ()), FrequencyModel(), N=999)


def test_union_bound_and_drifting_model():
    drift = lambda j, xi: 0.05 * np.sin(xi[:, :1]) * np.ones((1, len(j)))
    model = FrequencyModel(drift=drift, M1=0.05)
    zones = enumerate_zones(1, 4, 6, 0.05)
    out = union_bound_check(zones, model, N=20_000, seed=3)
    assert out["ok"] and out["union"] > 0
    with pytest.raises(SpecError):
        zone_interval(zones[0], model)


def test_union_bound_two_dimensional():
    model = FrequencyModel(n=2)
    zones = enumerate_zones(2, 3, 4, 0.05)
    out = union_bound_check(zones, model, N=20_000, seed=5)
    assert out["ok"] and out["union"] <= out["sum"] + out["halfwidth"]


def test_exact_union_matches_monte_carlo():
    model = FrequencyModel()
    zones = enumerate_zones(1, 6, 10, 0.02)
    est = estimate_measure(zones, model, N=100_000, seed=11)
    assert est.agrees, (est.value, est.exact, est.ci_halfwidth)
    xi = sample_box(1, 1000, 0)
    hits = union_indicator(xi, zones, model)
    inside = np.zeros(1000, bool)
    for z in zones:
        iv = zone_interval(z, model)
        if iv is not None:
            inside |= (xi[:, 0] > iv[0]) & (xi[:, 0] < iv[1])
    np.testing.assert_array_equal(hits, inside)


def test_log_momentum_inequality_exhaustive():
    for beta in (6.0, 8.0):
        out = log_momentum_inequality(500, beta)
        assert out["violations"] == 0 and out["min_slack"] > 0
        assert out["count"] == 2 * (500 + 500 + 2 * 500 * 499 // 2)


def test_momentum_check_unperturbed():
    model = FrequencyModel()
    zones = enumerate_zones(1, 10, 20, 0.01, kinds=("minus", "plus"), k_min=1)
    out = momentum_check(zones, model)
    np.testing.assert_allclose(out["c3"], 2 / (2 * (TWO_PI + 3)), rtol=1e-14)
    assert out["checked"] > 0 and out["violations"] == []
    assert out["min_ratio"] >= out["c3"]


def test_momentum_check_off_exact_path_needs_points():
    model = FrequencyModel(n=2)
    with pytest.raises(SpecError):
        momentum_check(enumerate_zones(2, 1, 2, 0.01), model)
    out = momentum_check(enumerate_zones(2, 3, 3, 0.05, k_min=1), model, sample_box(2, 5000, 0))
    assert out["violations"] == []


def test_single_zone_bound():
    model = FrequencyModel()
    zones = [z for z in enumerate_zones(1, 12, 30, 0.01, kinds=("minus", "plus"), k_min=1)
             if z.k_l1 >= single_zone_threshold(z.l, 6.0, 1.0, model.omega_bound)]
    assert zones
    c4 = fit_single_zone_constant(zones, model)
    rows = single_zone_table([z.with_alpha(0.001) for z in zones], model, c4, N=20_000, mc_check=3)
    assert max(r["ratio"] for r in rows) <= 1.0 + 1e-12
    checked = [r for r in rows if r["mc"] is not None]
    assert len(checked) >= 3 and all(r["mc"].agrees for r in checked)
    head = zones_csv(rows[:2]).splitlines()[0]
    assert head == "k,l,alpha,measure,bound,ratio,mc_value,mc_halfwidth,mc_samples,mc_seed"


def test_minus_class_decay_in_k():
    """Minus-class measures stay below ``c alpha^mu / |k|^(tau - 1)`` once ``c`` is fitted."""
    model = FrequencyModel()
    mu = measure_exponent(model.delta)
    ks = range(3, 9)
    fit = [minus_class_measure((k,), 0.01, model)["measure"] * k ** 2 / 0.01 ** mu for k in ks]
    c = max(fit)
    for k in ks:
        m = minus_class_measure((k,), 0.001, model)["measure"]
        assert m <= c * 0.001 ** mu / k ** 2
    with pytest.raises(SpecError):
        minus_class_measure((0,), 0.01, model)


def test_measure_exponent():
    assert measure_exponent(-1.0) == 0.5
    np.testing.assert_allclose(measure_exponent(-0.5), 1 / 3)


def test_union_fraction_scaling():
    """Unperturbed fractions decay at least like alpha^mu."""
    model = FrequencyModel()
    alphas = [1e-2, 1e-3]
    fr = [zone_union_fraction(model, a, 6, 20)[0] for a in alphas]
    curve = excised_fraction_curve(alphas, fr)
    assert curve.strictly_decreasing and curve.trend_decreasing
    assert curve.exponent >= measure_exponent(-1.0)
    assert curve.limit < 0.2
    assert curve.to_csv().splitlines()[0] == "alpha,excised_fraction,ci_halfwidth,fit"


def test_curve_trend_allows_noise():
    c = excised_fraction_curve([0.1, 0.05, 0.01], [0.30, 0.31, 0.05], [0.02, 0.02, 0.01])
    assert not c.strictly_decreasing and c.trend_decreasing
    with pytest.raises(SpecError):
        excised_fraction_curve([0.1], [0.3])


def test_zero_coupling_run_excises_the_zone_union():
    cfg = dict(J_max=12, K_max=4, K0=4, nu_max=2, epsilon=0.0, samples=300, seed=7, alpha0=0.05)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run(cfg)
    zones = enumerate_zones(1, 4, 12, 0.05)
    omegas = np.array([s.omega for s in res.state.samples])
    hit = union_indicator(omegas, zones, FrequencyModel())
    alive = np.array([s.alive for s in res.state.samples])
    np.testing.assert_array_equal(hit, ~alive)
    frac, _ = run_excised_fraction(res)
    exact, _ = zone_union_fraction(FrequencyModel(), 0.05, 4, 12)
    _, h = run_excised_fraction(res)
    assert abs(frac - exact) <= h


@settings(max_examples=25, deadline=None)
@given(st.integers(-8, 8).filter(bool), st.integers(1, 30), st.integers(1, 30),
       st.floats(1e-4, 0.5))
def test_zone_measure_linear_in_alpha(k, i, j, alpha):
    model = FrequencyModel()
    z = ZoneSpec.plus((k,), i, j, alpha)
    m1, m2 = exact_measure(z, model), exact_measure(z.with_alpha(alpha / 3), model)
    iv = zone_interval(z, model)
    if iv is not None and 0 < iv[0] and iv[1] < TWO_PI:
        np.testing.assert_allclose(m2, m1 / 3, rtol=1e-9)
    assert 0 <= m2 <= m1 <= TWO_PI
