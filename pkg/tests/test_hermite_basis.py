import csv
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qho_kam.errors import AccuracyError, CapacityError, DomainError, SpecError
from qho_kam.hermite_basis import (build_rule, eigenvalue, eval_hermite, hermite_functions,
                                   log_spaced_indices, reference_rule, weighted_log_norm,
                                   weighted_log_norm_profile)

GOLDEN = Path(__file__).parent / "fixtures" / "weighted_log_norm_golden.csv"


def _golden_rows():
    with GOLDEN.open() as fh:
        return [(int(r["j"]), float(r["delta1"]), float(r["value"]), r["rule_id"])
                for r in csv.DictReader(fh)]


@pytest.mark.parametrize("j, delta1, value, rule_id", _golden_rows())
def test_weighted_norm_matches_golden(j, delta1, value, rule_id):
    got = weighted_log_norm(j, delta1, reference_rule(max(j, 50)))
    np.testing.assert_allclose(got, value, rtol=1e-12, err_msg=rule_id)


def test_profile_agrees_with_single_evaluations():
    rows = [r for r in _golden_rows() if r[1] in (1.0, 2.0)]
    js = sorted({r[0] for r in rows})
    norms, nrm = weighted_log_norm_profile(js, [1.0, 2.0])
    np.testing.assert_allclose(nrm, 1.0, atol=1e-10)
    lookup = {(r[0], r[1]): r[2] for r in rows}
    for a, j in enumerate(js):
        for b, d in enumerate((1.0, 2.0)):
            np.testing.assert_allclose(norms[a, b], lookup[j, d], rtol=1e-10)


def test_ground_state_at_origin():
    np.testing.assert_allclose(eval_hermite(1, 0.0), np.pi ** -0.25, rtol=1e-15)


def test_odd_function_vanishes_at_origin():
    assert eval_hermite(2, 0.0) == 0.0


def test_h50_normalized_on_gauss_hermite():
    rule = build_rule("gauss_hermite", 200)
    val = rule.integrate(lambda x: eval_hermite(50, x) ** 2)
    np.testing.assert_allclose(val, 1.0, atol=1e-10)


def test_weight_to_zero_gives_unit_norm():
    np.testing.assert_allclose(weighted_log_norm(1, 1e-12, reference_rule(10)), 1.0, atol=1e-10)


def test_ground_state_weighted_norm_in_unit_interval():
    v = weighted_log_norm(1, 1.0, reference_rule(10))
    assert 0.0 < v < 1.0


def test_gauss_hermite_second_moment():
    rule = build_rule("gauss_hermite", 20)
    np.testing.assert_allclose(rule.integrate(lambda x: x * x * np.exp(-x * x), degree=2),
                               np.sqrt(np.pi) / 2, atol=1e-12)


def test_trapezoid_normalizes_h5():
    rule = build_rule("truncated_trapezoid", 4001, span=40)
    np.testing.assert_allclose(rule.integrate(lambda x: eval_hermite(5, x) ** 2), 1.0, atol=1e-10)


def test_gauss_hermite_degree_limit():
    rule = build_rule("gauss_hermite", 5)
    with pytest.raises(CapacityError):
        rule.integrate(lambda x: x ** 12 * np.exp(-x * x), degree=12)


def test_rule_invariants():
    for rule in (build_rule("gauss_hermite", 30), reference_rule(100)):
        assert np.all(np.diff(rule.nodes) > 0)
        assert np.all(rule.weights > 0)


def test_errors():
    with pytest.raises(DomainError):
        eigenvalue(0)
    with pytest.raises(DomainError):
        weighted_log_norm(3, 0.0, reference_rule(10))
    with pytest.raises(SpecError):
        build_rule("simpson", 10)
    with pytest.raises(CapacityError):
        build_rule("truncated_trapezoid", 101, span=5.0, capacity=500)
    with pytest.raises(AccuracyError):
        weighted_log_norm(400, 1.0, build_rule("truncated_trapezoid", 2001, span=20.0))


@given(st.integers(min_value=1, max_value=10 ** 6))
def test_eigenvalue_formula(j):
    assert eigenvalue(j) == 2 * j - 1


def test_orthonormality_up_to_200():
    rule = reference_rule(200)
    H = hermite_functions(200, rule.nodes)
    gram = (H * rule.effective_weights()) @ H.T
    assert np.abs(gram - np.eye(200)).max() <= 1e-9


def test_eigen_relation_by_finite_differences():
    x = np.linspace(-25, 25, 50001)
    dx = x[1] - x[0]
    H = hermite_functions(100, x)
    lap = (H[:, 2:] - 2 * H[:, 1:-1] + H[:, :-2]) / dx ** 2
    lam = eigenvalue(np.arange(1, 101))[:, None]
    res = -lap + (x[1:-1] ** 2 - lam) * H[:, 1:-1]
    # the five-point-free stencil error is O(dx^2 lam^2 / 12)
    assert np.abs(res).max() <= 1e-6 * lam.max() ** 2 / 10


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=1, max_value=150), st.floats(min_value=-30, max_value=30))
def test_recurrence_matches_vectorized(j, x):
    np.testing.assert_allclose(eval_hermite(j, x), hermite_functions(j, np.array([x]))[-1, 0],
                               rtol=1e-12, atol=1e-300)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=60), st.floats(min_value=0.2, max_value=4.0))
def test_weighted_norm_below_one_and_monotone_in_delta(j, delta1):
    rule = reference_rule(60)
    a = weighted_log_norm(j, delta1, rule)
    b = weighted_log_norm(j, delta1 * 1.5, rule)
    assert 0.0 < b < a < 1.0


@pytest.mark.parametrize("delta1", [1.0, 2.0, 4.0])
def test_square_index_ratio(delta1):
    """Squared norm at ``n`` over squared norm at ``n^2`` stays below ``2^{2 delta1}`` (plus 10%)."""
    ns = np.array([3, 5, 10, 20, 40, 80])
    norms, _ = weighted_log_norm_profile(np.concatenate([ns, ns ** 2]), [delta1])
    sq = norms[:, 0] ** 2
    ratio = sq[: ns.size] / sq[ns.size:]
    assert np.all(ratio <= 2 ** (2 * delta1) * 1.1), ratio


def test_log_spaced_indices():
    js = log_spaced_indices(10 ** 4, 40)
    assert js.size >= 40 and js[0] == 1 and js[-1] == 10 ** 4
    assert np.all(np.diff(js) > 0)
