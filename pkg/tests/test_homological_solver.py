import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qho_kam.errors import ResonanceError, SpecError
from qho_kam.homological_solver import (SmallDivisorPolicy, divisor_log, divisor_log_csv,
                                        entrywise_gain, generator_estimate_ratio,
                                        nonresonance_margin, residual, small_divisor, solve)
from qho_kam.potential_model import NormalForm, QuadraticHamiltonian
from qho_kam.symplectic_flow import normal_form_hessian

from conftest import diophantine_omega, random_real_hamiltonian, single_mode


def test_divisor_arithmetic():
    Omega = 2.0 * np.arange(1, 6) - 1.0
    assert small_divisor([1], [1.0], Omega, 2, 1) == 3.0
    assert small_divisor([0], [1.0], Omega, 2, 3, "zz") == 8.0
    assert small_divisor([1], [1.0], Omega, 2, 3, "zbarzbar") == -7.0
    with pytest.raises(SpecError):
        small_divisor([1], [1.0], Omega, 1, 1, "xy")


@given(st.integers(1, 50), st.integers(1, 50))
def test_unperturbed_zz_divisor_positive(j, l):
    Omega = 2.0 * np.arange(1, 51) - 1.0
    assert small_divisor([0], [0.3], Omega, j, l, "zz") >= 2.0


def test_policy_growth():
    pol = SmallDivisorPolicy(0.01, 3.0, 6.0)
    assert pol.growth(0) == 1.0
    np.testing.assert_allclose(pol.bound(4, 3), 3 * 0.01 / np.exp(2.0))
    with pytest.raises(SpecError):
        SmallDivisorPolicy(0.01, 4.0, 6.0)


def test_single_mode_division():
    c = 0.3 + 0.1j
    R = single_mode(1, 2, 3, [1], 1, 1, c)
    sol = solve(R, NormalForm([1.0], [1.0, 3.0, 5.0]))
    np.testing.assert_allclose(sol.F.channel("zzbar").block([1])[0, 0], -1j * c, rtol=1e-15)
    assert np.abs(sol.Nhat.hessian.coeffs).max() == 0.0


def test_pure_normal_form_input():
    J = 4
    R = QuadraticHamiltonian.zeros(1, 2, J)
    shift = np.array([0.1, -0.2, 0.05, 0.3])
    R.hessian.coeffs[2] = normal_form_hessian(shift)
    sol = solve(R, NormalForm.harmonic([0.7], J))
    assert np.abs(sol.F.hessian.coeffs).max() == 0.0
    np.testing.assert_array_equal(sol.Nhat.hessian.coeffs, R.hessian.coeffs)
    np.testing.assert_array_equal(sol.Omega_shift, shift)


@pytest.mark.parametrize("n, K, J", [(1, 4, 8), (2, 2, 5)])
def test_random_residual(rng, n, K, J):
    for _ in range(5):
        R = random_real_hamiltonian(rng, n, K, J, 1e-2)
        N = NormalForm.harmonic(diophantine_omega(rng, n, K, J), J)
        sol = solve(R, N, SmallDivisorPolicy(1e-2))
        scale = np.abs(R.hessian.coeffs).max()
        assert residual(sol.F, R, sol.Nhat, N) <= 1e-12 * scale


@settings(max_examples=20, deadline=None)
@given(st.floats(-50, 50).filter(lambda c: abs(c) > 1e-6), st.integers(0, 2 ** 31))
def test_linearity(c, seed):
    rng = np.random.default_rng(seed)
    R = random_real_hamiltonian(rng, 1, 2, 4)
    N = NormalForm.harmonic([0.913], 4)
    a, b = solve(R, N), solve(R * c, N)
    np.testing.assert_allclose(b.F.hessian.coeffs, c * a.F.hessian.coeffs, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(b.Omega_shift, c * a.Omega_shift, rtol=1e-12)
    assert isinstance(b.F, QuadraticHamiltonian) and b.F.J == 4


def test_divisor_monotonicity():
    omegas = np.linspace(0.05, 2 * np.pi - 0.05, 400)
    Omega = 2.0 * np.arange(1, 11) - 1.0

    def accepted(alpha):
        pol = SmallDivisorPolicy(alpha)
        return {i for i, w in enumerate(omegas) if nonresonance_margin(1, 6, [w], Omega, pol)["ratio"] >= 1}

    sets = [accepted(a) for a in (0.2, 0.05, 0.01)]
    assert sets[0] < sets[1] < sets[2]


def test_exact_resonance_rejected():
    # k.omega + Omega_2 - Omega_1 = -2 + 2 = 0 at omega = 2, k = -1
    R = single_mode(1, 1, 3, [-1], 2, 1, 1e-3)
    with pytest.raises(ResonanceError) as err:
        solve(R, NormalForm.harmonic([2.0], 3))
    assert err.value.k == (-1,)


def test_policy_violation_reports_worst():
    R = single_mode(1, 1, 3, [1], 1, 1, 1e-3)
    with pytest.raises(ResonanceError):
        solve(R, NormalForm.harmonic([1e-4], 3), SmallDivisorPolicy(0.01))
    sol = solve(R, NormalForm.harmonic([1e-4], 3), SmallDivisorPolicy(0.01), raise_on_small=False)
    assert sol.min_ratio < 1.0 and sol.worst["k"] == [1]


def test_entrywise_gain_below_one(rng):
    R = random_real_hamiltonian(rng, 1, 3, 6, 1e-3)
    pol = SmallDivisorPolicy(1e-3)
    sol = solve(R, NormalForm.harmonic([0.7310], 6), pol)
    assert sol.min_ratio >= 1.0
    assert entrywise_gain(R, sol.F, pol) <= 1.0 + 1e-12


def test_estimate_ratio_zero():
    R = QuadraticHamiltonian.zeros(1, 2, 3)
    sol = solve(R, NormalForm.harmonic([1.0], 3))
    assert generator_estimate_ratio(R, sol.F, 0.1, SmallDivisorPolicy(0.01)) == 0.0


def test_estimate_ratio_single_mode_closed_form():
    omega, sigma, alpha = 0.37, 0.1, 0.01
    R = single_mode(1, 5, 3, [5], 1, 1, 2e-3)
    sol = solve(R, NormalForm.harmonic([omega], 3))
    got = generator_estimate_ratio(R, sol.F, sigma, SmallDivisorPolicy(alpha))
    # t1 = tau / (beta - tau) = 1
    expect = alpha * np.exp(-5 * sigma) / (5 * omega * np.exp(2 * (2 / sigma)))
    np.testing.assert_allclose(got, expect, rtol=1e-12)


def test_estimate_ratio_ensemble(rng):
    pol = SmallDivisorPolicy(1e-3)
    ratios = []
    for _ in range(100):
        R = random_real_hamiltonian(rng, 1, 2, 5, 1e-3)
        sol = solve(R, NormalForm.harmonic([0.7310], 5), pol)
        ratios.append(generator_estimate_ratio(R, sol.F, 0.05, pol))
    assert np.all(np.isfinite(ratios)) and max(ratios) > 0


def test_divisor_log_sorted_csv():
    rows = divisor_log(1, 2, [0.9], 2.0 * np.arange(1, 5) - 1.0, SmallDivisorPolicy(0.01), limit=10)
    assert len(rows) == 10
    assert all(rows[i][-1] <= rows[i + 1][-1] for i in range(9))
    text = divisor_log_csv(rows)
    assert text.splitlines()[0] == "k,j,l,channel,divisor,bound,ratio"


def test_check_mode_validated():
    R = QuadraticHamiltonian.zeros(1, 1, 2)
    with pytest.raises(SpecError):
        solve(R, NormalForm.harmonic([1.0], 2), check="some")
