"""Log-weighted norms of quadratic perturbations and of 2x2-block matrices.

All sup-norms over the complex strip ``|Im theta| < s`` are replaced by the
Fourier majorant ``sum_k |c_k| exp(|k|_1 s)``; sups over the phase-space ball
``||z||_p < r`` use the exact dual-norm bounds of the majorant matrix.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import SpecError
from .potential_model import FourierBlockMatrix, QuadraticHamiltonian


@dataclass(frozen=True)
class DecayProfile:
    """Weights ``(1 + ln j)^beta`` for 1-based indices."""

    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise SpecError("beta must be positive")

    def weight(self, j):
        return (1.0 + np.log(np.asarray(j, dtype=float))) ** self.beta


def log_weights(J, beta):
    """``(1 + ln j)^beta`` for ``j = 1 .. J``."""
    return (1.0 + np.log(np.arange(1, J + 1))) ** beta


@dataclass
class NormReport:
    """Value of the weighted norm and which condition produced it.

    Attributes
    ----------
    gamma : float
        Largest condition value (the norm).
    conditions : dict
        Value of each active condition.
    argmax : tuple
        ``(condition, channel, j, l)`` witness, 1-based indices.
    plus : bool
        Whether the ``(1 + |j - l|)`` and ``j`` gains were applied.
    """

    gamma: float
    conditions: dict = field(default_factory=dict)
    argmax: tuple = ()
    plus: bool = False

    def to_dict(self):
        return {"gamma": self.gamma, "conditions": self.conditions,
                "argmax": list(self.argmax), "plus": self.plus}


def _channel_list(P):
    if isinstance(P, QuadraticHamiltonian):
        return [(name, P.channel(name)) for name in ("zzbar", "zz", "zbarzbar")]
    if isinstance(P, FourierBlockMatrix):
        return [(P.channel, P)]
    out = []
    for item in P:
        out.extend(_channel_list(item))
    return out


def norm_report(P, beta, r=1.0, s=0.0, p=2.0, plus=False):
    """Weighted norm of a quadratic, y-independent perturbation.

    Evaluates, per channel with majorant ``M[j, l] = sum_k |c_k[j,l]| e^{|k| s}``:

    * second derivatives: ``max w_j w_l M[j, l]`` (times ``1 + |j - l|`` if ``plus``),
    * first derivatives: ``max_j w_j ||M[j, :] l^{-p/2}||_2`` over rows and
      columns (times ``j`` if ``plus``), i.e. the sup of ``|dP/dw_j| / r``,
    * the sup of ``|P| / r^2``: spectral norm of ``D^{-1} M D^{-1}`` with
      ``D = diag(l^{p/2})`` (halved for the zz and zbarzbar Hessians).

    Conditions involving ``y`` are vacuous for y-independent perturbations.
    For quadratic ``P`` every condition is independent of ``r``.
    """
    if s < 0 or r <= 0:
        raise SpecError("need s >= 0 and r > 0")
    best = (0.0, ())
    conds = {"second": 0.0, "first": 0.0, "sup": 0.0}
    for name, series in _channel_list(P):
        J = series.coeffs.shape[-1]
        w = log_weights(J, beta)
        idx = np.arange(1, J + 1)
        M = series.majorant(s)
        if not np.any(M):
            continue
        sec = M * w[:, None] * w[None, :]
        if plus:
            sec = sec * (1.0 + np.abs(idx[:, None] - idx[None, :]))
        scale = idx ** (-p / 2.0)
        rows = np.sqrt(((M * scale[None, :]) ** 2).sum(axis=1))
        cols = np.sqrt(((M * scale[:, None]) ** 2).sum(axis=0))
        gain = w * (idx if plus else 1.0)
        first = np.maximum(rows * gain, cols * gain)
        half = 1.0 if name == "zzbar" else 0.5
        sup = half * np.linalg.norm(M * scale[:, None] * scale[None, :], 2)
        ij = np.unravel_index(np.argmax(sec), sec.shape)
        jf = int(np.argmax(first))
        cands = [(float(sec[ij]), ("second", name, ij[0] + 1, ij[1] + 1)),
                 (float(first[jf]), ("first", name, jf + 1, 0)),
                 (float(sup), ("sup", name, 0, 0))]
        conds["second"] = max(conds["second"], cands[0][0])
        conds["first"] = max(conds["first"], cands[1][0])
        conds["sup"] = max(conds["sup"], cands[2][0])
        for val, wit in cands:
            if val > best[0]:
                best = (val, wit)
    return NormReport(gamma=best[0], conditions=conds, argmax=best[1], plus=plus)


def gamma_norm(P, beta, r=1.0, s=0.0, p=2.0):
    """Log-weighted perturbation norm (majorant evaluation)."""
    return norm_report(P, beta, r, s, p).gamma


def gamma_plus_norm(F, beta, r=1.0, s=0.0, p=2.0):
    """Log-weighted norm with the extra ``j`` and ``1 + |j - l|`` gains."""
    return norm_report(F, beta, r, s, p, plus=True).gamma


def blocks_2x2(A):
    """Reshape a ``(2J, 2J)`` matrix in ``(z, zbar)`` ordering into ``(J, J, 2, 2)`` blocks."""
    A = np.asarray(A)
    J = A.shape[-1] // 2
    lead = A.shape[:-2]
    A4 = A.reshape(lead + (2, J, 2, J))
    return np.moveaxis(A4, (-4, -2), (-2, -1))


def matrix_beta_norm(A, beta):
    """``max_{i,j} ||A_ij||_HS (1 + ln i)^beta (1 + ln j)^beta (1 + |i - j|)``.

    ``A`` is ``(2J, 2J)`` in ``(z, zbar)`` ordering, or a stack of such
    matrices (the max is then also over the stack).
    """
    blk = blocks_2x2(A)
    hs = np.sqrt((np.abs(blk) ** 2).sum(axis=(-1, -2)))
    if hs.ndim > 2:
        hs = hs.reshape(-1, *hs.shape[-2:]).max(axis=0)
    J = hs.shape[-1]
    w = log_weights(J, beta)
    idx = np.arange(1, J + 1)
    gain = w[:, None] * w[None, :] * (1.0 + np.abs(idx[:, None] - idx[None, :]))
    return float((hs * gain).max())


def frequency_distance(Omega, Omega_ref, beta):
    """``sup_j (1 + ln j)^{2 beta} |Omega_j - Omega_ref_j|`` (sup also over leading sample axes)."""
    d = np.abs(np.asarray(Omega) - np.asarray(Omega_ref))
    J = d.shape[-1]
    return float((d * log_weights(J, 2 * beta)).max(initial=0.0))


def lipschitz_seminorm(values, norm):
    """Largest difference quotient ``norm(v(xi) - v(eta)) / |xi - eta|`` over sample pairs.

    Parameters
    ----------
    values : dict or sequence of (xi, value)
        Samples; ``xi`` scalar or vector.
    norm : callable
        Norm applied to value differences.
    """
    items = list(values.items()) if isinstance(values, dict) else list(values)
    if len(items) < 2:
        raise SpecError("need at least two samples")
    xs = [np.atleast_1d(np.asarray(x, dtype=float)) for x, _ in items]
    best = 0.0
    for a in range(len(items)):
        for b in range(a + 1, len(items)):
            dist = float(np.linalg.norm(xs[a] - xs[b]))
            if dist == 0.0:
                raise SpecError(f"duplicate parameter sample {xs[a]}")
            best = max(best, norm(items[a][1] - items[b][1]) / dist)
    return best


def offdiagonal_log_sum(L, beta, jmax=None):
    """``S(j) = sum_{l=1}^{L} 1 / ((1 + |j - l|)(1 + ln l)^beta)`` for ``j = 1 .. jmax``.

    Computed for all ``j`` at once as a convolution.
    """
    jmax = L if jmax is None else jmax
    l = np.arange(1, L + 1)
    f = (1.0 + np.log(l)) ** (-beta)
    return _toeplitz_sum(f, lambda d: 1.0 / (1.0 + np.abs(d)), L, jmax)


def sobolev_offdiagonal_sum(L, p, beta, jmax=None):
    """``S(j) = sum_{l=1}^{L} (1 + j)^2 / (l^p (1 + |j - l|)^2 (1 + ln l)^{2 beta})``."""
    jmax = L if jmax is None else jmax
    l = np.arange(1, L + 1, dtype=float)
    f = l ** (-p) * (1.0 + np.log(l)) ** (-2.0 * beta)
    S = _toeplitz_sum(f, lambda d: 1.0 / (1.0 + np.abs(d)) ** 2, L, jmax)
    return (1.0 + np.arange(1, jmax + 1)) ** 2 * S


def _toeplitz_sum(f, kernel, L, jmax):
    # S(j) = sum_l f(l) kernel(j - l), j = 1..jmax
    d = np.arange(-(L - 1), jmax)
    conv = fftconvolve(f, kernel(d), mode="full")
    # index of j in the full convolution: (j - 1) + (L - 1)
    return conv[L - 1: L - 1 + jmax]
