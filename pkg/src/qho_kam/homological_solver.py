"""Homological equation for quadratic, y-independent perturbations.

Given the normal form ``N = omega.y + sum_j Omega_j z_j zbar_j`` and a
truncated quadratic ``R``, find ``F`` and a diagonal correction ``Nhat`` with

    {F, N} = R - Nhat.

In the Hessian representation the equation is diagonal: entry ``(a, b)`` of
mode ``k`` is multiplied by ``i d_ab(k)`` with

    d_ab(k) = k.omega + s_a Omega_a + s_b Omega_b,

where ``s = -1`` on ``z`` indices and ``s = +1`` on ``zbar`` indices. On the
zzbar channel (``zbar_j z_l``) this is ``k.omega + Omega_j - Omega_l``; on
the zz Hessian block it is ``k.omega - Omega_j - Omega_l``, the negative of
the conventional ``k'.omega + Omega_j + Omega_l`` at ``k' = -k``. Both
enumerate the same set of absolute values, so the non-resonance check is
unaffected.
"""

from dataclasses import dataclass
import csv
import io

import numpy as np

from .errors import ResonanceError, SpecError
from .decay_norms import gamma_norm, gamma_plus_norm
from .potential_model import (FourierBlockMatrix, QuadraticHamiltonian, mode_dot, mode_grid,
                              mode_l1)
from .symplectic_flow import bracket_with_normal_form, normal_form_hessian


@dataclass(frozen=True)
class SmallDivisorPolicy:
    """Lower bound ``<l> alpha / A_k`` on admissible divisors, ``A_k = exp(|k|_1^{tau/beta})``.

    ``<l> = max(1, |j - l|)`` on the zzbar channel and ``j + l`` on zz.

    Attributes
    ----------
    alpha : float
        Diophantine constant.
    tau : float
        Exponent with ``tau >= n + 2``.
    beta : float
        Decay exponent, ``beta = iota tau`` with ``iota >= 2``.
    """

    alpha: float
    tau: float = 3.0
    beta: float = 6.0

    def __post_init__(self):
        if not self.alpha > 0 or not self.tau > 0:
            raise SpecError("need alpha > 0 and tau > 0")
        if self.tau / self.beta > 0.5 + 1e-12:
            raise SpecError(f"need beta >= 2 tau, got tau={self.tau}, beta={self.beta}")

    @property
    def iota(self):
        return self.beta / self.tau

    def growth(self, k_l1):
        """``A_k = exp(|k|^{tau/beta})``."""
        return np.exp(np.asarray(k_l1, dtype=float) ** (self.tau / self.beta))

    def bound(self, k_l1, l_bracket):
        return l_bracket * self.alpha / self.growth(k_l1)


def small_divisor(k, omega, Omega, j, l, channel="zzbar"):
    """``k.omega + Omega_j - Omega_l`` (zzbar), ``k.omega + Omega_j + Omega_l`` (zz).

    ``j, l`` are 1-based; ``"zbarzbar"`` gives ``k.omega - Omega_j - Omega_l``
    and ``"theta"`` the bare ``k.omega``.
    """
    kw = float(np.dot(np.atleast_1d(k), np.atleast_1d(omega)))
    if channel == "theta":
        return kw
    Oj, Ol = Omega[j - 1], Omega[l - 1]
    if channel == "zzbar":
        return kw + Oj - Ol
    if channel == "zz":
        return kw + Oj + Ol
    if channel == "zbarzbar":
        return kw - Oj - Ol
    raise SpecError(f"unknown channel {channel!r}")


def _signs(J):
    return np.concatenate([-np.ones(J), np.ones(J)])


def divisor_array(n, K, omega, Omega):
    """``d_ab(k)`` for the full zeta Hessian, shape ``(2K+1,)*n + (2J, 2J)``."""
    J = len(Omega)
    sO = _signs(J) * np.concatenate([Omega, Omega])
    kw = mode_dot(n, K, omega)
    return kw[..., None, None] + sO[:, None] + sO[None, :]


def index_bracket(J):
    """``<l>`` for every Hessian entry: ``max(1, |s_a a + s_b b|)`` with 1-based mode labels."""
    idx = np.concatenate([np.arange(1, J + 1)] * 2)
    s = _signs(J)
    return np.maximum(1, np.abs(s[:, None] * idx[:, None] + s[None, :] * idx[None, :]))


def normal_form_mask(n, K, J):
    """Entries kept in ``Nhat``: ``k = 0`` and ``zbar_j z_j`` (both symmetric copies)."""
    mask = np.zeros((2 * K + 1,) * n + (2 * J, 2 * J), dtype=bool)
    d = np.arange(J)
    zero = (K,) * n
    mask[zero + (J + d, d)] = True
    mask[zero + (d, J + d)] = True
    return mask


def _channel_of(a, b, J):
    if (a >= J) != (b >= J):
        return "zzbar"
    return "zz" if a < J else "zbarzbar"


def _label(a, J):
    return a % J + 1


@dataclass
class HomologicalSolution:
    """Generator, normal-form correction and divisor diagnostics.

    Attributes
    ----------
    F : QuadraticHamiltonian
        Generator with ``{F, N} = R - Nhat``.
    Nhat : QuadraticHamiltonian
        Diagonal ``k = 0`` zzbar part of ``R``.
    Omega_shift : ndarray
        Real frequency corrections (diagonal of ``Nhat``).
    min_ratio : float
        ``min |d| / bound`` over active entries (``inf`` if nothing was divided).
    worst : dict
        Location of that minimum.
    imaginary_shift : float
        Largest ``|Im|`` of the removed diagonal (zero for real ``R``).
    """

    F: QuadraticHamiltonian
    Nhat: QuadraticHamiltonian
    Omega_shift: np.ndarray
    min_ratio: float
    worst: dict
    imaginary_shift: float


def solve(R, normal, policy=None, check="active", raise_on_small=True):
    """Solve ``{F, N} = R - Nhat`` entrywise.

    Parameters
    ----------
    R : QuadraticHamiltonian
        Truncated perturbation (its ``k = 0`` diagonal goes to ``Nhat``).
    normal : NormalForm
    policy : SmallDivisorPolicy, optional
        Divisor lower bound; without it only exact zeros are rejected.
    check : {"active", "all"}
        Check the entries where ``R`` is nonzero, or every entry of the retained box.
    raise_on_small : bool
        Raise ``ResonanceError`` when a checked divisor violates the bound.

    Raises
    ------
    ResonanceError
        Worst (smallest ratio) violation of the policy, or an exact zero divisor.
    """
    n, K, J = R.n, R.K, R.J
    if len(normal.Omega) < J:
        raise SpecError("normal form has fewer frequencies than the perturbation")
    Omega = np.asarray(normal.Omega[:J], dtype=float)
    C = R.hessian.coeffs
    d = divisor_array(n, K, normal.omega, Omega)
    keep = normal_form_mask(n, K, J)
    active = (C != 0) & ~keep
    if check == "all":
        checked = ~keep
    elif check == "active":
        checked = active
    else:
        raise SpecError(f"unknown check mode {check!r}")
    min_ratio, worst = np.inf, {}
    if policy is not None and checked.any():
        kl1 = np.broadcast_to(mode_l1(n, K)[..., None, None], d.shape)
        lb = np.broadcast_to(index_bracket(J), d.shape)
        ratio = np.where(checked, np.abs(d) / policy.bound(kl1, lb), np.inf)
        pos = np.unravel_index(np.argmin(ratio), ratio.shape)
        min_ratio = float(ratio[pos])
        k = tuple(int(v) - K for v in pos[:n])
        a, b = pos[n], pos[n + 1]
        worst = {"k": list(k), "j": _label(a, J), "l": _label(b, J),
                 "channel": _channel_of(a, b, J), "divisor": float(d[pos]),
                 "bound": float(policy.bound(kl1[pos], lb[pos])), "ratio": min_ratio}
        if raise_on_small and min_ratio < 1.0:
            raise ResonanceError(k, worst["j"], worst["l"], worst["channel"],
                                 worst["divisor"], worst["bound"])
    zero_div = active & (d == 0)
    if zero_div.any():
        pos = np.unravel_index(np.argmax(zero_div), zero_div.shape)
        k = tuple(int(v) - K for v in pos[:n])
        a, b = pos[n], pos[n + 1]
        raise ResonanceError(k, _label(a, J), _label(b, J), _channel_of(a, b, J), 0.0, 0.0)
    Fc = np.zeros_like(C)
    Fc[active] = C[active] / (1j * d[active])
    diag = C[(K,) * n + (J + np.arange(J), np.arange(J))]
    shift = diag.real.copy()
    Nhat = QuadraticHamiltonian(FourierBlockMatrix(np.zeros_like(C), "zeta"))
    Nhat.hessian.coeffs[(K,) * n] = normal_form_hessian(shift)
    F = QuadraticHamiltonian(FourierBlockMatrix(Fc, "zeta"))
    return HomologicalSolution(F, Nhat, shift, min_ratio, worst, float(np.abs(diag.imag).max(initial=0.0)))


def residual(F, R, Nhat, normal):
    """``max |{F, N} - (R - Nhat)|`` over all Hessian coefficients.

    The bracket is recomputed from scratch (matrix products plus the
    transport term), independently of the entrywise division in ``solve``.
    """
    lhs = bracket_with_normal_form(F, normal).hessian
    rhs = (R - Nhat).hessian
    K = max(lhs.K, rhs.K)
    return float(np.abs(lhs.resized(K).coeffs - rhs.resized(K).coeffs).max(initial=0.0))


def entrywise_gain(R, F, policy):
    """``max |F_ab(k)| / (|R_ab(k)| / bound_ab(k))`` over nonzero off-normal entries of ``R``.

    At most 1 whenever every divisor satisfies ``policy``: dividing by an
    admissible divisor gains at most the reciprocal lower bound.
    """
    n, K, J = R.n, R.K, R.J
    C = R.hessian.coeffs
    Fc = F.hessian.resized(K).coeffs
    act = (C != 0) & ~normal_form_mask(n, K, J)
    if not act.any():
        return 0.0
    kl1 = np.broadcast_to(mode_l1(n, K)[..., None, None], C.shape)
    lb = np.broadcast_to(index_bracket(J), C.shape)
    b = policy.bound(kl1, lb)
    return float((np.abs(Fc[act]) * b[act] / np.abs(C[act])).max())


def generator_estimate_ratio(R, F, sigma, policy, r=1.0, s=None, p=2.0):
    """Measured constant in the generator estimate.

    Returns ``<F>^+ (s - sigma) alpha / (<R>(s) exp(2 (2/sigma)^{t1}))`` with
    ``t1 = tau / (beta - tau)``; zero when ``R`` vanishes.

    Parameters
    ----------
    R, F : QuadraticHamiltonian
        Perturbation and its homological generator.
    sigma : float
        Width loss (``0 < sigma <= s``).
    policy : SmallDivisorPolicy
        Supplies ``alpha``, ``tau`` and ``beta``.
    s : float, optional
        Strip width of ``R`` (default ``2 sigma``).
    """
    s = 2.0 * sigma if s is None else s
    if not 0 < sigma <= s:
        raise SpecError("need 0 < sigma <= s")
    gR = gamma_norm(R, policy.beta, r, s, p)
    if gR == 0.0:
        return 0.0
    gF = gamma_plus_norm(F, policy.beta, r, s - sigma, p)
    t1 = policy.tau / (policy.beta - policy.tau)
    return gF * policy.alpha / (gR * np.exp(2.0 * (2.0 / sigma) ** t1))


def divisor_log(n, K, omega, Omega, policy, channels=("zzbar", "zz"), limit=None):
    """Rows ``(k, j, l, channel, divisor, bound, ratio)`` sorted by ratio.

    Lists ``j <= l`` only (the rest are symmetric copies) and skips the
    normal-form entries ``k = 0, j = l`` of the zzbar channel. Divisors use
    ``k.omega + Omega_j - Omega_l`` and ``k.omega + Omega_j + Omega_l``.
    """
    J = len(Omega)
    Omega = np.asarray(Omega, dtype=float)
    rows = []
    ks = mode_grid(n, K)
    kw = ks @ np.atleast_1d(omega)
    kl = np.abs(ks).sum(axis=1)
    j, l = np.triu_indices(J)
    for ch in channels:
        if ch == "zzbar":
            base = Omega[j] - Omega[l]
            lb = np.maximum(1, l - j)
        elif ch == "zz":
            base = Omega[j] + Omega[l]
            lb = (j + 1) + (l + 1)
        else:
            raise SpecError(f"divisor log supports zzbar and zz, not {ch!r}")
        for kk, w, k1 in zip(ks, kw, kl):
            d = w + base
            b = np.broadcast_to(policy.bound(k1, lb), d.shape)
            sel = (j != l) if (ch == "zzbar" and k1 == 0) else np.ones(d.shape, dtype=bool)
            kt = tuple(int(v) for v in kk)
            for jj, ll, dd, bb in zip(j[sel], l[sel], d[sel], b[sel]):
                rows.append((kt, int(jj) + 1, int(ll) + 1, ch, float(dd), float(bb), float(abs(dd) / bb)))
    rows.sort(key=lambda r: r[-1])
    return rows[:limit] if limit else rows


def divisor_log_csv(rows):
    """CSV text with columns ``k, j, l, channel, divisor, bound, ratio``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "j", "l", "channel", "divisor", "bound", "ratio"])
    for k, j, l, ch, d, b, r in rows:
        w.writerow([" ".join(str(v) for v in k), j, l, ch, f"{d:.17g}", f"{b:.17g}", f"{r:.17g}"])
    return buf.getvalue()


def nonresonance_margin(n, K, omega, Omega, policy):
    """Smallest ``|d| / bound`` over the whole retained box (normal-form entries excluded).

    Returns
    -------
    dict
        ``ratio`` plus the witness ``k, j, l, channel, divisor, bound``; the
        box is non-resonant for ``policy`` iff ``ratio >= 1``.
    """
    Omega = np.asarray(Omega, dtype=float)
    J = Omega.size
    d = divisor_array(n, K, omega, Omega)
    kl1 = np.broadcast_to(mode_l1(n, K)[..., None, None], d.shape)
    lb = np.broadcast_to(index_bracket(J), d.shape)
    ratio = np.abs(d) / policy.bound(kl1, lb)
    ratio[normal_form_mask(n, K, J)] = np.inf
    pos = np.unravel_index(np.argmin(ratio), ratio.shape)
    a, b = pos[n], pos[n + 1]
    return {"ratio": float(ratio[pos]), "k": [int(v) - K for v in pos[:n]],
            "j": _label(a, J), "l": _label(b, J), "channel": _channel_of(a, b, J),
            "divisor": float(d[pos]), "bound": float(policy.bound(kl1[pos], lb[pos]))}
