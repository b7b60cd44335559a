"""Poisson brackets, time-1 flows and exact conjugation of quadratic Hamiltonians.

Coordinates ``zeta = (z, zbar)`` evolve by ``zeta' = Jc B zeta`` with
``Jc = [[0, -i I], [i I, 0]] = -i J_std`` (so ``i z' = dH/dzbar``). The bracket
is ``{G, H} = grad G^T Jc grad H``; for quadratic forms the Hessian of
``{G, H}`` is ``G Jc H - H Jc G``. The flow of a y-free generator freezes
``theta``, so every operation is pointwise in ``theta`` on a lattice.
"""

from dataclasses import dataclass

import numpy as np
from scipy.fft import next_fast_len

from .errors import BudgetError, SpecError, StepTooLargeError
from .decay_norms import matrix_beta_norm
from .potential_model import (FourierBlockMatrix, QuadraticHamiltonian, from_lattice, mode_dot,
                              to_lattice)


def symplectic_unit(J):
    """``Jc = [[0, -i I], [i I, 0]]`` of size ``2J``."""
    I = np.eye(J)
    Z = np.zeros((J, J))
    return np.block([[Z, -1j * I], [1j * I, Z]])


def standard_symplectic_unit(J):
    """Real unit ``[[0, I], [-I, 0]]``; ``Jc = -i`` times this."""
    I = np.eye(J)
    Z = np.zeros((J, J))
    return np.block([[Z, I], [-I, Z]])


def _apply_jc(A):
    """``Jc @ A`` for stacked ``(…, 2J, 2J)`` without a matrix product."""
    J = A.shape[-2] // 2
    out = np.empty_like(A, dtype=complex)
    out[..., :J, :] = -1j * A[..., J:, :]
    out[..., J:, :] = 1j * A[..., :J, :]
    return out


def _right_jc(A):
    """``A @ Jc`` for stacked matrices."""
    J = A.shape[-1] // 2
    out = np.empty_like(A, dtype=complex)
    out[..., :, :J] = 1j * A[..., :, J:]
    out[..., :, J:] = -1j * A[..., :, :J]
    return out


def lattice_points(K_total):
    """FFT-friendly lattice size resolving products with total support ``K_total``."""
    return next_fast_len(2 * K_total + 1)


def _bilinear(op, A, B, n, K_out):
    """Fourier coefficients (``|k| <= K_out``) of ``op(A(theta), B(theta))`` without aliasing."""
    KA = (A.shape[0] - 1) // 2
    KB = (B.shape[0] - 1) // 2
    M = next_fast_len(KA + KB + K_out + 1)
    M = max(M, 2 * K_out + 1)
    va = to_lattice(A, n, M)
    vb = to_lattice(B, n, M)
    return from_lattice(op(va, vb), n, K_out)


def bracket_coeffs(G, H, n, K_out):
    """Hessian series of ``{G, H}`` from Hessian series ``G``, ``H``."""
    def op(a, b):
        ajb = _right_jc(a) @ b
        bja = _right_jc(b) @ a
        return ajb - bja
    return _bilinear(op, G, H, n, K_out)


def poisson_bracket(G, H, K_out=None):
    """Exact bracket ``{G, H}`` of two y-free quadratic Hamiltonians.

    Parameters
    ----------
    G, H : QuadraticHamiltonian
    K_out : int, optional
        Fourier cutoff of the result; defaults to ``G.K + H.K`` (no truncation).
    """
    K_out = G.K + H.K if K_out is None else K_out
    return QuadraticHamiltonian(FourierBlockMatrix(
        bracket_coeffs(G.hessian.coeffs, H.hessian.coeffs, G.n, K_out), "zeta"))


def normal_form_hessian(Omega):
    """Hessian of ``sum_j Omega_j z_j zbar_j``."""
    J = len(Omega)
    B = np.zeros((2 * J, 2 * J), dtype=complex)
    d = np.arange(J)
    B[J + d, d] = Omega
    B[d, J + d] = Omega
    return B


def bracket_with_normal_form(F, N):
    """``{F, N}`` for ``N = omega.y + sum Omega_j z_j zbar_j``, including ``omega . d_theta F``."""
    BN = normal_form_hessian(N.Omega)
    C = F.hessian.coeffs
    quad = _right_jc(C) @ BN - _right_jc(BN) @ C
    kw = mode_dot(F.n, F.K, N.omega)
    transport = 1j * kw[(...,) + (None, None)] * C
    return QuadraticHamiltonian(FourierBlockMatrix(quad + transport, "zeta"))


# ----------------------------------------------------------------------------
# flows


def expm_minus_identity(Z, dZ=(), tol=1e-18, max_terms=80):
    """``exp(Z) - I`` for stacked matrices by Taylor series, with directional derivatives.

    Keeps full relative accuracy in the deviation from the identity, which a
    general ``expm`` followed by subtracting ``I`` would lose. Intended for
    ``||Z|| <= 1``.

    Parameters
    ----------
    Z : ndarray, shape ``(..., m, m)``
    dZ : sequence of ndarray
        Directions; the derivative of ``exp`` along each is returned too.

    Returns
    -------
    X : ndarray
    dX : list of ndarray
        Only when ``dZ`` is non-empty.
    """
    term = Z.copy()
    out = Z.copy()
    dterms = [d.copy() for d in dZ]
    douts = [d.copy() for d in dZ]
    scale = max(np.abs(Z).max(initial=0.0), 1e-300)
    for m in range(2, max_terms):
        # d(Z^m/m!) = (d(Z^{m-1}/(m-1)!) Z + Z^{m-1}/(m-1)! dZ) / m
        dterms = [(dt @ Z + term @ d) / m for dt, d in zip(dterms, dZ)]
        term = term @ Z / m
        out = out + term
        for i, dt in enumerate(dterms):
            douts[i] = douts[i] + dt
        if np.abs(term).max(initial=0.0) <= tol * scale:
            break
    return (out, douts) if dZ else out


@dataclass
class SymplecticMap:
    """Linear symplectic map ``zeta_old = L(theta) zeta_new`` on a theta lattice.

    Attributes
    ----------
    n : int
        Number of angles.
    X : ndarray, shape ``(M,)*n + (2J, 2J)``
        ``L - I`` at lattice points.
    dX : ndarray, shape ``(n,) + (M,)*n + (2J, 2J)``
        ``d_theta_m X`` at lattice points.
    guard : float
        Largest ``||Jc B(theta)||_2`` seen when building the map (0 for products).
    """

    n: int
    X: np.ndarray
    dX: np.ndarray
    guard: float = 0.0

    @property
    def M(self):
        return self.X.shape[0]

    @property
    def J(self):
        return self.X.shape[-1] // 2

    @classmethod
    def identity(cls, n, J, M):
        X = np.zeros((M,) * n + (2 * J, 2 * J), dtype=complex)
        return cls(n, X, np.zeros((n,) + X.shape, dtype=complex))

    def L(self):
        return self.X + np.eye(2 * self.J)

    def symplecticity_defect(self):
        """``max_theta max |L^T J L - J|`` with the real unit ``J``."""
        L = self.L()
        Js = standard_symplectic_unit(self.J)
        D = np.swapaxes(L, -1, -2) @ Js @ L - Js
        return float(np.abs(D).max())

    def block_structure_defect(self):
        """Largest entry of the off-diagonal (z to zbar) blocks of ``L``."""
        J = self.J
        return float(max(np.abs(self.X[..., :J, J:]).max(), np.abs(self.X[..., J:, :J]).max()))

    def beta_norm(self, beta):
        """``sup_theta [L - I]_beta``."""
        return matrix_beta_norm(self.X, beta)

    def compose(self, other):
        """Map for ``self`` followed by ``other`` in new coordinates: ``L = L_self L_other``."""
        if other.X.shape != self.X.shape:
            raise SpecError("maps live on different lattices")
        X = self.X + other.X + self.X @ other.X
        dX = self.dX + other.dX + self.dX @ other.X + self.X @ other.dX
        return SymplecticMap(self.n, X, dX, max(self.guard, other.guard))

    def fourier(self, K):
        """Fourier coefficients of ``L - I`` for ``|k|_inf <= K``."""
        return FourierBlockMatrix(from_lattice(self.X, self.n, K), "zeta")

    def to_dict(self, K):
        return {"n": self.n, "lattice": self.M, "L_minus_identity": self.fourier(K).to_dict()}


def time_one_map(F, M=None, t=1.0, guard=1.0):
    """Time-``t`` flow of a y-free quadratic generator.

    ``L(theta) = exp(t Jc B_F(theta))`` at every lattice point, with
    ``L - I`` and its theta-derivatives come from one Taylor recurrence
    (the derivative series is the Frechet derivative of ``exp`` along
    ``d_theta Z``).

    Parameters
    ----------
    F : QuadraticHamiltonian
    M : int, optional
        Lattice size per angle (default resolves ``4 K_F``).
    guard : float
        Largest admissible ``||t Jc B||_2``.

    Raises
    ------
    StepTooLargeError
        If the generator exceeds ``guard`` at some lattice point.
    """
    n, K = F.n, F.K
    M = lattice_points(2 * K) if M is None else M
    B = to_lattice(F.hessian.coeffs, n, M)
    Z = t * _apply_jc(B)
    norms = np.linalg.norm(Z.reshape(-1, *Z.shape[-2:]), 2, axis=(1, 2))
    g = float(norms.max(initial=0.0))
    if g > guard:
        raise StepTooLargeError(f"||Jc B|| = {g:.3g} exceeds the guard {guard:g}")
    kvec = np.arange(-K, K + 1)
    dZ = []
    for m in range(n):
        shape = [1] * n + [1, 1]
        shape[m] = 2 * K + 1
        dB = F.hessian.coeffs * (1j * kvec).reshape(shape)
        dZ.append(t * _apply_jc(to_lattice(dB, n, M)))
    X, dX = expm_minus_identity(Z, dZ)
    dX = np.stack(dX)
    return SymplecticMap(n, X, dX, g)


# ----------------------------------------------------------------------------
# conjugation


def split_normal_part(H):
    """Split ``H`` into the theta-average real diagonal of the zzbar channel and the rest.

    Returns
    -------
    Omega : ndarray
        Diagonal ``zbar_j z_j`` coefficients of the ``k = 0`` block (real part).
    P : QuadraticHamiltonian
        ``H`` minus that normal form.
    """
    J = H.J
    zero = (H.K,) * H.n
    d = np.arange(J)
    Omega = H.hessian.coeffs[zero + (J + d, d)].real.copy()
    P = H.copy()
    P.hessian.coeffs[zero + (J + d, d)] -= Omega
    P.hessian.coeffs[zero + (d, J + d)] -= Omega
    return Omega, P


def conjugate(H, Phi, omega, K_out=None, budget=None):
    """Quadratic part of ``H o Phi`` (exact congruence plus the transport term).

    ``H`` is the full quadratic part of ``omega.y + H``. With ``B_H = B_N + B_P``
    split into its normal part, the new Hessian is

        B' = B_N + L^T ( Jc ([Lambda, X] - omega.d_theta X) + B_P L ),

    where ``Lambda = Jc B_N`` is diagonal and ``X = L - I``; this form avoids
    cancellation against the large normal frequencies.

    Parameters
    ----------
    H : QuadraticHamiltonian
    Phi : SymplecticMap
    omega : array_like
    K_out : int, optional
        Fourier cutoff of the result (default ``H.K``).
    budget : int, optional
        Largest admissible cutoff; raising ``K_out`` above it is an error.

    Returns
    -------
    QuadraticHamiltonian
        Conjugated Hamiltonian.
    float
        Majorant of the discarded Fourier tail (from a lattice of twice the size).
    """
    n, J = H.n, H.J
    K_out = H.K if K_out is None else K_out
    if budget is not None and K_out > budget:
        raise BudgetError(f"cutoff {K_out} exceeds budget {budget}")
    omega = np.atleast_1d(omega)
    Omega, P = split_normal_part(H)
    M = Phi.M
    if M < 2 * K_out + 1:
        raise SpecError("map lattice too coarse for the requested cutoff")
    lam = np.concatenate([-1j * Omega, 1j * Omega])
    X = Phi.X
    comm = (lam[:, None] - lam[None, :]) * X
    transport = np.tensordot(omega, Phi.dX, axes=(0, 0))
    BP = to_lattice(P.hessian.coeffs, n, M)
    L = Phi.L()
    inner = _apply_jc(comm - transport) + BP @ L
    delta = np.swapaxes(L, -1, -2) @ inner
    delta = 0.5 * (delta + np.swapaxes(delta, -1, -2))
    K_lat = (M - 1) // 2
    full = from_lattice(delta, n, K_lat)
    series = FourierBlockMatrix(full, "zeta")
    kept, tail = series.truncate(K_out)
    coeffs = kept.resized(K_out).coeffs
    coeffs[(K_out,) * n] += normal_form_hessian(Omega)
    return QuadraticHamiltonian(FourierBlockMatrix(coeffs, "zeta")), tail


def lie_transform(P, R, Nhat, F, K_out=None, K_work=None, tol=1e-17, max_terms=60):
    """New perturbation after the time-1 map of a homological generator.

    With ``ad X = {X, F}`` and ``{N, F} = Nhat - R`` eliminated analytically,

        P+ = (P - R) + sum_{m>=1} ad^m P / m! + sum_{m>=1} ad^m (Nhat - R) / (m+1)!,

    so no term involves the (large) normal frequencies and ``P+`` keeps full
    relative precision however small it is.

    Parameters
    ----------
    K_out : int, optional
        Cutoff of the result (default ``P.K``).
    K_work : int, optional
        Cutoff kept between brackets (default ``K_out + 2 F.K``).

    Returns
    -------
    QuadraticHamiltonian
        ``P+`` truncated at ``K_out``.
    float
        Majorant of the Fourier modes discarded (between brackets and at the end).
    int
        Largest bracket order used.
    """
    n = P.n
    K_out = P.K if K_out is None else K_out
    KF = F.K
    K_work = K_out + 2 * KF if K_work is None else max(K_work, K_out)
    # products have support K_work + KF; resolve all of it so the tail is exact
    M = next_fast_len(2 * (K_work + KF) + 1)
    Fl = to_lattice(F.hessian.coeffs, n, M)
    FJ = _right_jc(Fl)
    total = (P - R).hessian.resized(K_work).coeffs
    tail = 0.0
    used = 0
    for start, offset in ((P, 0), (Nhat - R, 1)):
        term = start.hessian.resized(K_work).coeffs
        first = None
        fact = 1.0
        for m in range(1, max_terms):
            a = to_lattice(term, n, M)
            full = from_lattice(_right_jc(a) @ Fl - FJ @ a, n, K_work + KF)
            kept, t = FourierBlockMatrix(full, "zeta").truncate(K_work)
            term = kept.resized(K_work).coeffs
            fact *= m + offset
            total = total + term / fact
            tail += t / fact
            size = np.abs(term).max(initial=0.0) / fact
            if first is None:
                first = max(size, 1e-300)
            used = max(used, m)
            if size <= tol * first:
                break
    kept, t = FourierBlockMatrix(total, "zeta").truncate(K_out)
    return QuadraticHamiltonian(kept.resized(K_out)), tail + t, used


def integral_form(P, R, Nhat, F, K_out=None, nodes=16, M=None):
    """``(P - R) o X^1 + int_0^1 {R(t), F} o X^t dt`` with ``R(t) = (1-t) Nhat + t R``.

    The integral uses Gauss-Legendre quadrature in ``t``; compositions are
    exact congruences ``L_t^T B L_t`` on a theta lattice. Independent of
    ``lie_transform`` and used to cross-check it.
    """
    n = P.n
    K_out = P.K if K_out is None else K_out
    M = lattice_points(4 * K_out) if M is None else M
    BF = to_lattice(F.hessian.coeffs, n, M)
    Z = _apply_jc(BF)
    from scipy.linalg import expm

    def flow(t):
        flat = Z.reshape(-1, *Z.shape[-2:])
        return np.stack([expm(t * z) for z in flat]).reshape(Z.shape)

    def congruence(B, L):
        return np.swapaxes(L, -1, -2) @ B @ L

    PR = to_lattice((P - R).hessian.resized(K_out).coeffs, n, M)
    acc = congruence(PR, flow(1.0))
    x, w = np.polynomial.legendre.leggauss(nodes)
    t = 0.5 * (x + 1.0)
    w = 0.5 * w
    Rl = to_lattice(R.hessian.resized(K_out).coeffs, n, M)
    Nl = to_lattice(Nhat.hessian.resized(K_out).coeffs, n, M)
    for ti, wi in zip(t, w):
        Rt = (1 - ti) * Nl + ti * Rl
        br = _right_jc(Rt) @ BF - _right_jc(BF) @ Rt
        acc = acc + wi * congruence(br, flow(ti))
    return QuadraticHamiltonian(FourierBlockMatrix(from_lattice(acc, n, K_out), "zeta"))
