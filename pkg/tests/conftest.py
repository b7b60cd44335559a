import numpy as np
import pytest

from qho_kam.homological_solver import SmallDivisorPolicy, nonresonance_margin
from qho_kam.potential_model import FourierBlockMatrix, QuadraticHamiltonian


def random_real_hamiltonian(rng, n, K, J, scale=1.0, zz=True):
    """Random quadratic Hamiltonian that is real on ``zbar = conj(z)``."""
    sh = (2 * K + 1,) * n + (J, J)
    flip = (slice(None, None, -1),) * n
    A = rng.normal(size=sh) + 1j * rng.normal(size=sh)
    A = 0.5 * (A + np.conj(np.swapaxes(A[flip], -1, -2)))
    chans = {"zzbar": FourierBlockMatrix(A * scale)}
    if zz:
        E = rng.normal(size=sh) + 1j * rng.normal(size=sh)
        E = E + np.swapaxes(E, -1, -2)
        chans["zz"] = FourierBlockMatrix(E * scale, "zz")
        chans["zbarzbar"] = FourierBlockMatrix(np.conj(E[flip]) * scale, "zbarzbar")
    return QuadraticHamiltonian.from_channels(**chans)


def single_mode(n, K, J, k, j, l, c):
    """zzbar Hamiltonian with one coefficient ``c`` at mode ``k``, entry ``(j, l)`` (1-based)."""
    A = FourierBlockMatrix.zeros(n, K, J)
    blk = np.zeros((J, J), dtype=complex)
    blk[j - 1, l - 1] = c
    A.set_block(k, blk)
    return QuadraticHamiltonian.from_channels(zzbar=A)


def diophantine_omega(rng, n, K, J, alpha=1e-2, tau=3.0, beta=6.0):
    """Uniform draw from ``[0, 2 pi]^n`` conditioned on the divisor bound over the ``(K, J)`` box."""
    pol = SmallDivisorPolicy(alpha, tau, beta)
    Omega = 2.0 * np.arange(1, J + 1) - 1.0
    while True:
        omega = rng.uniform(0, 2 * np.pi, n)
        if nonresonance_margin(n, K, omega, Omega, pol)["ratio"] >= 1.0:
            return omega


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
