"""Resonance zones over the frequency box and estimates of their measure.

A zone is the parameter set where one divisor falls below its bound,

    R_kl(alpha) = { xi : |k.omega(xi) + <l, Omega(xi)>| < <l> alpha / A_k },

with ``A_k = exp(|k|_1^{tau/beta})`` and ``<l> = max(1, |sum_j j l_j|)``.
The normal index ``l`` has length at most 2 and is stored sparsely.

Measures are estimated by Monte Carlo over ``[0, 2 pi]^n`` with a Wilson
score interval. For ``n = 1``, an affine ``omega`` and xi-independent
normal frequencies each zone is an interval, so the exact measure of a
single zone or of a union is also available.
"""

from dataclasses import dataclass, field
import csv
import io
import math

import numpy as np

from .errors import SpecError

TWO_PI = 2.0 * np.pi
# normal quantile for the 95% interval
_Z95 = 1.959963984540054


# ----------------------------------------------------------------------------
# normal multi-indices


def _normalize_l(l):
    """Sparse ``l`` as a sorted tuple of ``(index, coefficient)`` with zero entries dropped."""
    if isinstance(l, dict):
        items = l.items()
    else:
        items = list(l)
    acc = {}
    for j, c in items:
        j, c = int(j), int(c)
        if j < 1:
            raise SpecError(f"mode index must be >= 1, got {j}")
        acc[j] = acc.get(j, 0) + c
    out = tuple(sorted((j, c) for j, c in acc.items() if c != 0))
    if sum(abs(c) for _, c in out) > 2:
        raise SpecError(f"|l| must not exceed 2, got {out}")
    return out


def l_bracket(l):
    """``<l> = max(1, |sum_j j l_j|)``."""
    return max(1, abs(sum(j * c for j, c in _normalize_l(l))))


def weighted_l_norms(l, beta=6.0):
    """``(<l>, ||l||_{2 beta}, ||l||_{-2 beta})`` for a sparse ``l`` with ``|l| <= 2``.

    ``||l||_{+-2 beta} = max_j |l_j| (1 + ln j)^{+-2 beta}``; both are 0 for
    ``l = 0``.

    >>> weighted_l_norms({1: 1})
    (1, 1.0, 1.0)
    """
    items = _normalize_l(l)
    if not items:
        return 1, 0.0, 0.0
    plus = max(abs(c) * (1.0 + math.log(j)) ** (2 * beta) for j, c in items)
    minus = max(abs(c) * (1.0 + math.log(j)) ** (-2 * beta) for j, c in items)
    return l_bracket(items), plus, minus


def l_class(l):
    """``"zero"``, ``"plus"`` (no opposite signs) or ``"minus"`` (two entries of opposite sign)."""
    items = _normalize_l(l)
    if not items:
        return "zero"
    if len(items) == 2 and items[0][1] * items[1][1] < 0:
        return "minus"
    return "plus"


# ----------------------------------------------------------------------------
# frequency model


@dataclass
class FrequencyModel:
    """Frequencies as functions of the parameter ``xi`` in ``[0, 2 pi]^n``.

    ``omega(xi) = omega_scale * xi + omega_offset`` and
    ``Omega_j(xi) = a1 j + a2 + shift(j) + drift(j, xi)``.

    Attributes
    ----------
    n : int
    a1, a2 : float
        Asymptotic slope and offset of the normal frequencies (``2j - 1`` by default).
    omega_scale, omega_offset : float
    shift : callable, optional
        xi-independent correction ``shift(j) -> array``.
    drift : callable, optional
        xi-dependent correction ``drift(j, xi) -> array of shape (N, len(j))``;
        disables the exact interval path.
    M1 : float
        Bound on ``|Omega_j - a1 j - a2| j^{-delta}`` (0 for the harmonic oscillator).
    delta : float
        Tail exponent in ``|Omega_j - a1 j - a2| <= M1 j^delta``, ``delta < 0``.
    """

    n: int = 1
    a1: float = 2.0
    a2: float = -1.0
    omega_scale: float = 1.0
    omega_offset: float = 0.0
    shift: object = None
    drift: object = None
    M1: float = 0.0
    delta: float = -1.0

    def __post_init__(self):
        if self.a1 == 0:
            raise SpecError("a1 must be nonzero")
        if not self.delta < 0:
            raise SpecError("tail exponent delta must be negative")
        if self.omega_scale == 0:
            raise SpecError("omega_scale must be nonzero")

    @property
    def affine(self):
        return self.drift is None

    @property
    def omega_bound(self):
        """``M = sup |omega|`` over the box (sup norm)."""
        ends = np.array([self.omega_offset, self.omega_scale * TWO_PI + self.omega_offset])
        return float(np.abs(ends).max())

    def omega(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return self.omega_scale * xi + self.omega_offset

    def Omega(self, j, xi=None):
        """``Omega_j`` for an array of 1-based ``j``; shape ``(N, len(j))`` when ``xi`` is given."""
        j = np.atleast_1d(np.asarray(j))
        base = self.a1 * j + self.a2
        if self.shift is not None:
            base = base + np.asarray(self.shift(j), dtype=float)
        if xi is None:
            if self.drift is not None:
                raise SpecError("xi-dependent frequencies need xi")
            return base
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        out = np.broadcast_to(base, (xi.shape[0], j.size)).astype(float)
        if self.drift is not None:
            out = out + np.asarray(self.drift(j, xi), dtype=float)
        return out


def log_shift(alpha, beta):
    """Shift ``j -> alpha (1 + ln j)^{-2 beta}`` of the size the iteration is allowed."""
    def shift(j):
        return alpha * (1.0 + np.log(np.asarray(j, dtype=float))) ** (-2.0 * beta)
    return shift


# ----------------------------------------------------------------------------
# zones


@dataclass(frozen=True)
class ZoneSpec:
    """One resonance zone ``|k.omega + <l, Omega>| < <l> alpha / A_k``.

    Attributes
    ----------
    k : tuple of int
    l : tuple of (index, coefficient)
        Sparse normal index, ``|l| <= 2``.
    alpha : float
    tau, beta : float
        ``A_k = exp(|k|_1^{tau / beta})``.
    """

    k: tuple
    l: tuple = ()
    alpha: float = 0.01
    tau: float = 3.0
    beta: float = 6.0

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(int(v) for v in np.atleast_1d(self.k)))
        object.__setattr__(self, "l", _normalize_l(self.l))
        if not any(self.k) and not self.l:
            raise SpecError("k and l cannot both vanish")
        if not self.alpha > 0:
            raise SpecError("alpha must be positive")

    @classmethod
    def minus(cls, k, i, j, alpha, **kw):
        """``l = e_i - e_j``."""
        if i == j:
            raise SpecError("minus zones need i != j")
        return cls(k, ((i, 1), (j, -1)), alpha, **kw)

    @classmethod
    def plus(cls, k, i, j, alpha, **kw):
        """``l = e_i + e_j`` (``2 e_i`` when ``i == j``)."""
        return cls(k, ((i, 1), (j, 1)), alpha, **kw)

    @property
    def n(self):
        return len(self.k)

    @property
    def k_l1(self):
        return sum(abs(v) for v in self.k)

    @property
    def bracket(self):
        return l_bracket(self.l)

    @property
    def growth(self):
        """``A_k``."""
        return math.exp(self.k_l1 ** (self.tau / self.beta))

    @property
    def bound(self):
        return self.bracket * self.alpha / self.growth

    @property
    def kind(self):
        return l_class(self.l)

    def encode(self):
        """Text form of ``l`` for CSV output, e.g. ``"+3-7"`` or ``"0"``."""
        if not self.l:
            return "0"
        parts = []
        for j, c in self.l:
            sign = "+" if c > 0 else "-"
            parts.append(f"{sign}{j}" if abs(c) == 1 else f"{sign}{abs(c)}*{j}")
        return "".join(parts)

    def with_alpha(self, alpha):
        return ZoneSpec(self.k, self.l, alpha, self.tau, self.beta)

    def divisor(self, xi, model):
        """``k.omega(xi) + <l, Omega(xi)>`` for every row of ``xi``."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if xi.shape[1] != self.n or model.n != self.n:
            raise SpecError("zone, model and xi disagree on n")
        d = model.omega(xi) @ np.asarray(self.k, dtype=float)
        if self.l:
            idx = np.array([j for j, _ in self.l])
            coef = np.array([c for _, c in self.l], dtype=float)
            d = d + model.Omega(idx, xi) @ coef
        return d


def zone_indicator(xi, spec, model):
    """True where the strict inequality ``|divisor| < bound`` holds."""
    return np.abs(spec.divisor(xi, model)) < spec.bound


def zone_interval(spec, model):
    """Exact zone ``(lo, hi)`` inside ``[0, 2 pi]`` for ``n = 1`` and xi-independent ``Omega``.

    Returns ``None`` for an empty zone. For ``k = 0`` the zone is all of the
    box or empty.
    """
    if spec.n != 1 or model.n != 1 or not model.affine:
        raise SpecError("exact zones need n = 1 and xi-independent normal frequencies")
    lw = 0.0
    if spec.l:
        idx = np.array([j for j, _ in spec.l])
        coef = np.array([c for _, c in spec.l], dtype=float)
        lw = float(model.Omega(idx) @ coef)
    k = spec.k[0]
    c0 = k * model.omega_offset + lw
    slope = k * model.omega_scale
    B = spec.bound
    if slope == 0:
        return (0.0, TWO_PI) if abs(c0) < B else None
    lo, hi = sorted(((-B - c0) / slope, (B - c0) / slope))
    lo, hi = max(lo, 0.0), min(hi, TWO_PI)
    return (lo, hi) if hi > lo else None


def exact_measure(specs, model):
    """Exact measure of a zone or of the union of zones (``n = 1``, affine case)."""
    if isinstance(specs, ZoneSpec):
        specs = [specs]
    iv = [zone_interval(s, model) for s in specs]
    return _union_length([v for v in iv if v is not None])


def _union_length(intervals):
    if not intervals:
        return 0.0
    arr = np.array(sorted(intervals))
    total, (cur_lo, cur_hi) = 0.0, arr[0]
    for lo, hi in arr[1:]:
        if lo > cur_hi:
            total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    return float(total + cur_hi - cur_lo)


@dataclass
class MeasureEstimate:
    """Monte-Carlo measure with a 95% Wilson interval.

    ``value`` is ``volume * hits / N``; ``ci_halfwidth`` is the larger
    distance from ``value`` to the ends of the interval. ``exact`` is filled
    in when the interval path applies.
    """

    value: float
    ci_halfwidth: float
    sample_count: int
    hits: int = 0
    volume: float = TWO_PI
    exact: float = None
    seed: int = None

    @property
    def interval(self):
        lo, hi = wilson_interval(self.hits, self.sample_count)
        return lo * self.volume, hi * self.volume

    @property
    def agrees(self):
        """Exact value inside the 95% interval (``None`` if no exact value)."""
        if self.exact is None:
            return None
        lo, hi = self.interval
        return bool(lo - 1e-12 <= self.exact <= hi + 1e-12)

    def to_dict(self):
        return {"value": self.value, "ci_halfwidth": self.ci_halfwidth,
                "sample_count": self.sample_count, "hits": self.hits, "exact": self.exact,
                "seed": self.seed}


def wilson_interval(hits, N, z=_Z95):
    """Wilson score interval for a binomial proportion."""
    p = hits / N
    den = 1.0 + z * z / N
    centre = (p + z * z / (2 * N)) / den
    half = z * math.sqrt(p * (1 - p) / N + z * z / (4 * N * N)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def sample_box(n, N, seed=0):
    """Uniform points in ``[0, 2 pi]^n``."""
    rng = np.random.default_rng(seed)
    return TWO_PI * rng.random((N, n))


def union_indicator(xi, specs, model):
    hit = np.zeros(np.atleast_2d(xi).shape[0], dtype=bool)
    for s in specs:
        hit |= zone_indicator(xi, s, model)
    return hit


def estimate_measure(specs, model, N=100_000, seed=0, xi=None):
    """Monte-Carlo measure of a zone or union of zones over ``[0, 2 pi]^n``.

    Parameters
    ----------
    specs : ZoneSpec or sequence of ZoneSpec
    model : FrequencyModel
    N : int
        Sample count (at least 1000).
    seed : int
    xi : ndarray, optional
        Reuse these sample points (shape ``(N, n)``) instead of drawing.

    Returns
    -------
    MeasureEstimate
        With ``exact`` set when ``n = 1`` and the model is affine.
    """
    if isinstance(specs, ZoneSpec):
        specs = [specs]
    if xi is None:
        if N < 1000:
            raise SpecError("need at least 1000 samples")
        xi = sample_box(model.n, N, seed)
    N = xi.shape[0]
    hits = int(union_indicator(xi, specs, model).sum())
    vol = TWO_PI ** model.n
    lo, hi = wilson_interval(hits, N)
    p = hits / N
    est = MeasureEstimate(vol * p, vol * max(hi - p, p - lo), N, hits, vol, seed=seed)
    if model.n == 1 and model.affine:
        est.exact = exact_measure(specs, model)
    return est


# ----------------------------------------------------------------------------
# zone families


def enumerate_zones(n, K, J, alpha, tau=3.0, beta=6.0, kinds=("zero", "minus", "plus"),
                    k_min=0):
    """All zones with ``k_min <= |k|_1 <= K`` (box ``|k|_inf <= K``) and indices ``<= J``.

    Minus zones use ``i < j`` only and plus zones ``i <= j``: with ``k``
    ranging over a symmetric box the remaining sign choices give the same
    sets. Zero-``l`` zones need ``k != 0``.
    """
    ks = np.stack(np.meshgrid(*[np.arange(-K, K + 1)] * n, indexing="ij"), -1).reshape(-1, n)
    ks = ks[(np.abs(ks).sum(1) <= K) & (np.abs(ks).sum(1) >= k_min)]
    out = []
    for k in ks:
        k = tuple(int(v) for v in k)
        nz = any(k)
        if "zero" in kinds and nz:
            out.append(ZoneSpec(k, (), alpha, tau, beta))
        if "minus" in kinds:
            out.extend(ZoneSpec.minus(k, i, j, alpha, tau=tau, beta=beta)
                       for i in range(1, J + 1) for j in range(i + 1, J + 1))
        if "plus" in kinds:
            out.extend(ZoneSpec.plus(k, i, j, alpha, tau=tau, beta=beta)
                       for i in range(1, J + 1) for j in range(i, J + 1))
    return out


def zone_union_fraction(model, alpha, K, J, tau=3.0, beta=6.0, N=100_000, seed=0):
    """Fraction of ``[0, 2 pi]^n`` covered by all zones of the retained box.

    Matches the set removed by the iteration's initial non-resonance check
    for unperturbed frequencies. Exact for ``n = 1`` affine models, Monte
    Carlo otherwise.

    Returns
    -------
    (fraction, halfwidth)
    """
    zones = enumerate_zones(model.n, K, J, alpha, tau, beta)
    vol = TWO_PI ** model.n
    if model.n == 1 and model.affine:
        return exact_measure(zones, model) / vol, 0.0
    est = estimate_measure(zones, model, N, seed)
    return est.value / vol, est.ci_halfwidth / vol


def union_cutoff(k_l1, alpha, tau=3.0, beta=6.0, delta=-1.0):
    """``j0 = max(exp(|k|^{(tau-1)/(2 beta)}), alpha^{gamma/delta} |k|^{(1-tau)/delta})``.

    ``gamma = delta / (delta - 1)``.
    """
    gamma = delta / (delta - 1.0)
    a = math.exp(k_l1 ** ((tau - 1.0) / (2.0 * beta)))
    b = alpha ** (gamma / delta) * k_l1 ** ((1.0 - tau) / delta)
    return max(a, b)


def measure_exponent(delta=-1.0):
    """``mu = delta / (delta - 1)`` (``1/2`` at ``delta = -1``)."""
    if delta < -1:
        delta = -1.0
    return delta / (delta - 1.0)


def momentum_constant(a1, M1, M):
    """``c3 = |a1| / (2 (2 M1 + M + 3))``: nonempty zones with ``k != 0`` have ``|k| >= c3 <l>``."""
    return abs(a1) / (2.0 * (2.0 * M1 + M + 3.0))


def _nonempty(spec, model, xi=None):
    if model.n == 1 and model.affine:
        return zone_interval(spec, model) is not None
    if xi is None:
        raise SpecError("nonemptiness off the exact path needs sample points")
    return bool(zone_indicator(xi, spec, model).any())


def momentum_check(zones, model, xi=None):
    """Test ``|k| >= c3 <l>`` on every nonempty zone with ``k != 0``.

    Returns
    -------
    dict
        ``c3``, ``checked`` (nonempty zones tested), ``violations`` (list of
        zones) and ``min_ratio`` of ``|k| / <l>``.
    """
    c3 = momentum_constant(model.a1, model.M1, model.omega_bound)
    checked, bad, ratio = 0, [], math.inf
    for z in zones:
        if not any(z.k) or not _nonempty(z, model, xi):
            continue
        checked += 1
        ratio = min(ratio, z.k_l1 / z.bracket)
        if z.k_l1 < c3 * z.bracket:
            bad.append(z)
    return {"c3": c3, "checked": checked, "violations": bad, "min_ratio": ratio}


def single_zone_threshold(l, beta, L, M):
    """``8 L M ||l||_{-2 beta}``: single-zone bound applies for ``|k|`` at least this."""
    return 8.0 * L * M * weighted_l_norms(l, beta)[2]


def _zone_measure(z, model, N, seed):
    if model.n == 1 and model.affine:
        return exact_measure(z, model)
    return estimate_measure(z, model, N, seed).value


def fit_single_zone_constant(zones, model, N=100_000, seed=0):
    """Smallest ``c4`` with ``Meas(R_kl) <= c4 alpha / A_k`` on ``zones``."""
    c4 = 0.0
    for z in zones:
        m = _zone_measure(z, model, N, seed)
        c4 = max(c4, m * z.growth / z.alpha)
    return c4


def single_zone_table(zones, model, c4, N=100_000, seed=0, mc_check=0):
    """Rows ``(zone, measure, bound, ratio, mc)`` comparing each zone with ``c4 alpha / A_k``.

    ``mc_check`` zones (taken evenly through the list) also get a Monte-Carlo
    estimate in ``mc`` to cross-check the exact measure.
    """
    rows = []
    stride = max(1, len(zones) // mc_check) if mc_check else 0
    for i, z in enumerate(zones):
        m = _zone_measure(z, model, N, seed)
        b = c4 * z.alpha / z.growth
        mc = estimate_measure(z, model, N, seed + i) if stride and i % stride == 0 else None
        rows.append({"zone": z, "measure": m, "bound": b, "ratio": m / b if b > 0 else math.inf,
                     "mc": mc})
    return rows


def minus_class_measure(k, alpha, model, tau=3.0, beta=6.0, J=None):
    """Measure of the union of minus zones ``l = e_i - e_j`` at fixed ``k`` (``n = 1``).

    Zones with the lower index below ``j0`` are taken exactly. The rest of
    each diagonal ``i - j = b`` is covered by the enclosing interval

        |k.omega + a1 b| < alpha b / |k|^tau + 2 alpha (1 + ln j0)^{-2 beta} + 2 M1 j0^delta,

    which contains every zone of that diagonal beyond ``j0``. ``b`` runs up
    to ``|k| / c3``; no nonempty minus zone has larger ``b``.

    Returns
    -------
    dict
        ``measure``, ``j0``, ``b_max`` and the number of exact zones used.
    """
    if model.n != 1 or not model.affine:
        raise SpecError("class measure needs n = 1 and xi-independent normal frequencies")
    kk = abs(int(np.atleast_1d(k)[0]))
    if kk == 0:
        raise SpecError("class measure needs k != 0")
    c3 = momentum_constant(model.a1, model.M1, model.omega_bound)
    j0 = union_cutoff(kk, alpha, tau, beta, model.delta)
    jc = int(math.ceil(j0)) if J is None else min(int(math.ceil(j0)), J)
    b_max = int(math.floor(kk / c3))
    ivs, used = [], 0
    for sgn in (1, -1):
        kz = (sgn * kk,)
        for b in range(1, b_max + 1):
            for j in range(1, jc):
                iv = zone_interval(ZoneSpec.minus(kz, j + b, j, alpha, tau=tau, beta=beta), model)
                used += 1
                if iv is not None:
                    ivs.append(iv)
            if J is not None and jc >= J:
                continue
            width = (alpha * b / kk ** tau + 2 * alpha * (1 + math.log(j0)) ** (-2 * beta)
                     + 2 * model.M1 * j0 ** model.delta)
            c0 = sgn * kk * model.omega_offset + model.a1 * b
            slope = sgn * kk * model.omega_scale
            lo, hi = sorted(((-width - c0) / slope, (width - c0) / slope))
            lo, hi = max(lo, 0.0), min(hi, TWO_PI)
            if hi > lo:
                ivs.append((lo, hi))
    return {"measure": _union_length(ivs), "j0": j0, "b_max": b_max, "exact_zones": used}


def union_bound_check(zones, model, N=100_000, seed=0):
    """``Meas(union) <= sum Meas(zone)`` within the Monte-Carlo interval.

    All estimates share one sample set.
    """
    xi = sample_box(model.n, N, seed)
    union = estimate_measure(zones, model, xi=xi)
    parts = [estimate_measure(z, model, xi=xi).value for z in zones]
    total = float(sum(parts))
    return {"union": union.value, "sum": total, "halfwidth": union.ci_halfwidth,
            "ok": union.value <= total + union.ci_halfwidth}


# ----------------------------------------------------------------------------
# lemma checks


def log_momentum_inequality(support=500, beta=6.0):
    """Enumerate every ``l`` with ``1 <= |l| <= 2`` supported in ``1..support``.

    Tests ``ln(1 + <l>) >= (1/8) ||l||_{2 beta}^{1/(2 beta)} ||l||_{-2 beta}^{1/(2 beta)}``.
    Sign-flipped copies of ``l`` have identical sides and are counted once
    per sign.

    Returns
    -------
    dict
        ``count`` of indices checked, ``violations`` (number), ``min_slack``
        of lhs - rhs with its witness ``worst``.
    """
    e = 1.0 / (2.0 * beta)
    j = np.arange(1, support + 1, dtype=float)
    lw = 1.0 + np.log(j)
    out = {"count": 0, "violations": 0, "min_slack": math.inf, "worst": None}

    def record(lhs, rhs, labels, copies):
        slack = lhs - rhs
        out["count"] += slack.size * copies
        out["violations"] += int((slack < 0).sum()) * copies
        i = int(np.argmin(slack))
        if slack.flat[i] < out["min_slack"]:
            out["min_slack"] = float(slack.flat[i])
            out["worst"] = labels(i)

    # +-e_i: both norms are (1 + ln i)^{+-2 beta}, product 1
    record(np.log1p(j), np.full(j.size, 0.125), lambda i: {i + 1: 1}, 2)
    # +-2 e_i: norms 2 (1 + ln i)^{+-2 beta}
    record(np.log1p(2 * j), np.full(j.size, 0.125 * 4.0 ** e), lambda i: {i + 1: 2}, 2)
    a, b = np.triu_indices(support, 1)
    # i < j; norms (1 + ln j)^{2 beta} and (1 + ln i)^{-2 beta}
    rhs = 0.125 * lw[b] / lw[a]
    record(np.log1p(a + b + 2.0), rhs, lambda i: {int(a[i]) + 1: 1, int(b[i]) + 1: 1}, 2)
    record(np.log1p(np.maximum(1.0, b - a)), rhs,
           lambda i: {int(a[i]) + 1: 1, int(b[i]) + 1: -1}, 2)
    return out


# ----------------------------------------------------------------------------
# excised-fraction curve


def run_excised_fraction(result):
    """Excised fraction of a finished iteration and its 95% Wilson halfwidth."""
    samples = result.state.samples
    N = len(samples)
    gone = sum(1 for s in samples if not s.alive)
    lo, hi = wilson_interval(gone, N)
    p = gone / N
    return p, max(hi - p, p - lo)


@dataclass
class FractionCurve:
    """Excised fraction against ``alpha`` with a log-log exponent fit."""

    alphas: np.ndarray
    fractions: np.ndarray
    halfwidths: np.ndarray
    exponent: float
    prefactor: float
    strictly_decreasing: bool
    trend_decreasing: bool
    limit: float
    rows: list = field(default_factory=list)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "excised_fraction", "ci_halfwidth", "fit"])
        for a, f, h in zip(self.alphas, self.fractions, self.halfwidths):
            w.writerow([f"{a:.17g}", f"{f:.17g}", f"{h:.17g}",
                        f"{self.prefactor * a ** self.exponent:.17g}"])
        return buf.getvalue()


def excised_fraction_curve(alphas, fractions, halfwidths=None):
    """Tabulate excised fractions and fit ``fraction ~ c alpha^mu``.

    Parameters
    ----------
    alphas, fractions : array_like
        One entry per completed run (any order).
    halfwidths : array_like, optional
        Sampling halfwidths; used for the trend test and the limit row.

    Returns
    -------
    FractionCurve
        ``strictly_decreasing`` as ``alpha`` decreases; ``trend_decreasing``
        allows increases within the combined halfwidths; ``limit`` is the
        fitted fraction at the smallest ``alpha`` divided by the largest
        fraction (tends to 0 with ``alpha``).
    """
    a = np.asarray(alphas, dtype=float)
    f = np.asarray(fractions, dtype=float)
    h = np.zeros_like(f) if halfwidths is None else np.asarray(halfwidths, dtype=float)
    if a.size < 2 or a.size != f.size:
        raise SpecError("need at least two (alpha, fraction) pairs")
    order = np.argsort(a)[::-1]
    a, f, h = a[order], f[order], h[order]
    strict = bool(np.all(np.diff(f) < 0))
    trend = bool(np.all(np.diff(f) < h[1:] + h[:-1]))
    pos = f > 0
    if pos.sum() >= 2:
        mu, logc = np.polyfit(np.log(a[pos]), np.log(f[pos]), 1)
        c = float(np.exp(logc))
    else:
        mu, c = float("nan"), float("nan")
    top = f.max()
    limit = float(f[-1] / top) if top > 0 else 0.0
    rows = [{"alpha": float(x), "fraction": float(y), "halfwidth": float(z)}
            for x, y, z in zip(a, f, h)]
    return FractionCurve(a, f, h, float(mu), c, strict, trend, limit, rows)


# ----------------------------------------------------------------------------
# output


def zones_csv(rows):
    """CSV with columns ``k, l, alpha, measure, bound, ratio`` (plus MC columns when present)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "l", "alpha", "measure", "bound", "ratio", "mc_value", "mc_halfwidth",
                "mc_samples", "mc_seed"])
    for r in rows:
        z, mc = r["zone"], r.get("mc")
        extra = ([f"{mc.value:.17g}", f"{mc.ci_halfwidth:.17g}", mc.sample_count, mc.seed]
                 if mc is not None else ["", "", "", ""])
        w.writerow([" ".join(str(v) for v in z.k), z.encode(), f"{z.alpha:.17g}",
                    f"{r['measure']:.17g}", f"{r['bound']:.17g}", f"{r['ratio']:.17g}", *extra])
    return buf.getvalue()
