import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from qho_kam.decay_norms import gamma_norm, gamma_plus_norm
from qho_kam.errors import BudgetError, StepTooLargeError
from qho_kam.homological_solver import solve
from qho_kam.potential_model import (FourierBlockMatrix, NormalForm, QuadraticHamiltonian,
                                     from_lattice, to_lattice)
from qho_kam.symplectic_flow import (SymplecticMap, conjugate, integral_form, lattice_points,
                                     lie_transform, normal_form_hessian, poisson_bracket,
                                     split_normal_part, symplectic_unit, time_one_map)

from conftest import random_real_hamiltonian, single_mode


def scaled_generator(rng, n, K, J, plus, beta=6.0, zz=False):
    F = random_real_hamiltonian(rng, n, K, J, zz=zz)
    return F * (plus / gamma_plus_norm(F, beta))


def zzbar_constant(A):
    J = A.shape[0]
    c = np.zeros((1, J, J), complex)
    c[0] = A
    return QuadraticHamiltonian.from_channels(zzbar=FourierBlockMatrix(c))


def test_zero_generator_is_identity():
    Phi = time_one_map(QuadraticHamiltonian.zeros(1, 2, 4))
    assert np.abs(Phi.X).max() == 0.0 and np.abs(Phi.dX).max() == 0.0


@pytest.mark.parametrize("c", [0.3, -0.7, 0.95])
def test_single_mode_rotation(c):
    J = 3
    F = single_mode(1, 0, J, [0], 1, 1, c)
    L = time_one_map(F).L()[0]
    Z = symplectic_unit(J) @ F.hessian.coeffs[0]
    idx = [0, J]
    np.testing.assert_allclose(L[np.ix_(idx, idx)], expm(Z[np.ix_(idx, idx)]), atol=1e-15)
    np.testing.assert_allclose(abs(L[0, 0]), 1.0, rtol=1e-15)
    np.testing.assert_allclose(L[0, 0], np.exp(-1j * c), rtol=1e-14)


def test_random_small_generator_symplectic(rng):
    for n, K, J in [(1, 3, 8), (2, 2, 4)]:
        F = random_real_hamiltonian(rng, n, K, J, 1e-2)
        Phi = time_one_map(F)
        assert Phi.symplecticity_defect() <= 1e-10


def test_zzbar_generator_keeps_block_structure(rng):
    Phi = time_one_map(scaled_generator(rng, 1, 3, 6, 0.05))
    assert Phi.block_structure_defect() <= 1e-12


def test_guard():
    F = single_mode(1, 0, 2, [0], 1, 1, 3.0)
    with pytest.raises(StepTooLargeError):
        time_one_map(F)


def test_flow_derivative_matches_spectral_derivative(rng):
    Phi = time_one_map(scaled_generator(rng, 1, 2, 4, 0.05, zz=True), M=16)
    # d/dtheta of X on the lattice equals the spectral derivative of its Fourier series
    Xk = from_lattice(Phi.X, 1, 7)
    spec = to_lattice(Xk * (1j * np.arange(-7, 8))[:, None, None], 1, 16)
    np.testing.assert_allclose(Phi.dX[0], spec, atol=1e-9)


def test_compose_matches_product(rng):
    A = time_one_map(scaled_generator(rng, 1, 2, 3, 0.05, zz=True), M=12)
    B = time_one_map(scaled_generator(rng, 1, 2, 3, 0.05, zz=True), M=12)
    np.testing.assert_allclose(A.compose(B).L(), A.L() @ B.L(), atol=1e-14)


def test_map_serialization(rng):
    Phi = time_one_map(random_real_hamiltonian(rng, 1, 1, 2, 0.05))
    d = json.loads(json.dumps(Phi.to_dict(1)))
    assert d["n"] == 1 and d["L_minus_identity"]["index_base"] == 1


def test_conjugate_identity_is_noop(rng):
    n, K, J = 1, 2, 4
    H = random_real_hamiltonian(rng, n, K, J, 1e-2)
    Hc, tail = conjugate(H, SymplecticMap.identity(n, J, lattice_points(2 * K)), [0.8])
    np.testing.assert_allclose(Hc.hessian.coeffs, H.hessian.coeffs, atol=1e-16)
    assert tail < 1e-16


def test_conjugation_budget(rng):
    H = random_real_hamiltonian(rng, 1, 2, 3)
    with pytest.raises(BudgetError):
        conjugate(H, SymplecticMap.identity(1, 3, 16), [1.0], K_out=5, budget=4)


def test_theta_independent_spectrum_preserved(rng):
    J = 4
    H = random_real_hamiltonian(rng, 1, 0, J)
    H.hessian.coeffs[0] += normal_form_hessian(2.0 * np.arange(1, J + 1) - 1.0)
    Phi = time_one_map(random_real_hamiltonian(rng, 1, 0, J, 0.05), M=1)
    Hc, _ = conjugate(H, Phi, [0.9])
    Jc = symplectic_unit(J)
    ev = lambda B: np.sort_complex(np.round(np.linalg.eigvals(Jc @ B), 10))
    np.testing.assert_allclose(ev(Hc.hessian.coeffs[0]), ev(H.hessian.coeffs[0]), atol=1e-9)


@pytest.mark.parametrize("n, K, J", [(1, 3, 6), (2, 2, 4)])
def test_three_routes_agree(rng, n, K, J):
    """Exact congruence, Lie series and the quadrature integral form give the same new Hamiltonian."""
    R = random_real_hamiltonian(rng, n, K, J, 1e-3)
    N = NormalForm.harmonic(np.array([0.7312, 1.234])[:n], J)
    sol = solve(R, N)
    H = R.copy()
    H.hessian.coeffs[(K,) * n] += normal_form_hessian(N.Omega)
    M = lattice_points(4 * K)
    Phi = time_one_map(sol.F, M=M)
    Hc, _ = conjugate(H, Phi, N.omega, K_out=K)
    Pl, _, _ = lie_transform(R, R, sol.Nhat, sol.F, K_out=K)
    Pi = integral_form(R, R, sol.Nhat, sol.F, K_out=K, M=M)
    ref = Pl.copy()
    ref.hessian.coeffs[(K,) * n] += normal_form_hessian(N.Omega + sol.Omega_shift)
    # the new perturbation is second order; the routes agree far below its size
    size = np.abs(Pl.hessian.coeffs).max()
    assert np.abs(Hc.hessian.coeffs - ref.hessian.coeffs).max() <= 1e-6 * size
    assert np.abs(Pl.hessian.coeffs - Pi.hessian.coeffs).max() <= 1e-6 * size
    assert Hc.reality_defect() <= 1e-15


def test_first_order_cancellation(rng):
    n, K, J = 1, 2, 5
    R = random_real_hamiltonian(rng, n, K, J, 1e-4)
    N = NormalForm.harmonic([0.913], J)
    sol = solve(R, N)
    H = R.copy()
    H.hessian.coeffs[K] += normal_form_hessian(N.Omega)
    Hc, _ = conjugate(H, time_one_map(sol.F, M=lattice_points(4 * K)), N.omega)
    Om, rest = split_normal_part(Hc)
    # what is left is second order in the generator size
    second = gamma_plus_norm(sol.F, 6.0) * np.abs(R.hessian.coeffs).max()
    assert np.abs(Om - N.Omega - sol.Omega_shift).max() <= 10 * second
    assert np.abs(rest.hessian.coeffs).max() <= 10 * second


def test_bracket_antisymmetry_and_hand_formula(rng):
    R = random_real_hamiltonian(rng, 1, 2, 3)
    assert np.abs(poisson_bracket(R, R).hessian.coeffs).max() <= 1e-12
    a = np.zeros((2, 2)); a[0, 0] = 1
    assert np.abs(poisson_bracket(zzbar_constant(a), zzbar_constant(a)).hessian.coeffs).max() == 0.0
    # z1 zbar2 sits at zzbar[2, 1] (coefficient of zbar_j z_l at [j, l]); z2 zbar1 at [1, 2]
    A = np.zeros((2, 2)); A[1, 0] = 1
    B = np.zeros((2, 2)); B[0, 1] = 1
    br = poisson_bracket(zzbar_constant(A), zzbar_constant(B)).channel("zzbar").coeffs[0]
    np.testing.assert_allclose(br, np.diag([1j, -1j]), atol=1e-15)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_jacobi_identity(seed):
    rng = np.random.default_rng(seed)
    A, B, C = (random_real_hamiltonian(rng, 1, 1, 3) for _ in range(3))
    pb = poisson_bracket
    tot = (pb(A, pb(B, C)).hessian + pb(B, pb(C, A)).hessian + pb(C, pb(A, B)).hessian)
    assert np.abs(tot.coeffs).max() <= 1e-10


def test_flow_bound_small_ensemble(rng):
    for _ in range(10):
        plus = rng.uniform(0.01, 0.1)
        Phi = time_one_map(scaled_generator(rng, 1, 2, 8, plus))
        assert Phi.symplecticity_defect() <= 1e-10
        assert Phi.beta_norm(6.0) <= 1.5 * np.expm1(plus)


def test_composition_norm_stability(rng):
    """``<R o Phi>`` stays within a factor 2 of ``<R>`` for small generators."""
    n, K, J = 1, 2, 6
    for _ in range(5):
        R = random_real_hamiltonian(rng, n, K, J, 1e-3)
        Phi = time_one_map(scaled_generator(rng, n, K, J, 0.05), M=lattice_points(4 * K))
        B = to_lattice(R.hessian.coeffs, n, Phi.M)
        L = Phi.L()
        Bc = np.swapaxes(L, -1, -2) @ B @ L
        Rc = QuadraticHamiltonian(FourierBlockMatrix(from_lattice(Bc, n, 2 * K), "zeta"))
        assert gamma_norm(Rc, 6.0) <= 2.0 * gamma_norm(R, 6.0)
