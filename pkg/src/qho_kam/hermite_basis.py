"""Normalized Hermite functions, quadrature rules and weighted log norms.

Indices are 1-based throughout: ``h_j`` is the L2-normalized eigenfunction of
``T = -d^2/dx^2 + x^2`` with eigenvalue ``2j - 1``.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .errors import AccuracyError, CapacityError, DomainError, SpecError

# rescale the recurrence whenever |psi| exceeds this, carrying the factor in log space
_RESCALE = 1e150
_LOG_RESCALE = np.log(_RESCALE)
# trapezoid resolution: dx * sqrt(2(2j-1)) must stay below this for 1e-10 accuracy
_TRAPEZOID_RESOLUTION = 1.5
# distance beyond sqrt(2(2j-1)) that a trapezoid span must cover
SPAN_MARGIN = 10.0


def eigenvalue(j):
    """Eigenvalue ``2j - 1`` of ``h_j``."""
    j = np.asarray(j)
    if np.any(j < 1):
        raise DomainError("Hermite index must be >= 1")
    return 2 * j - 1


def turning_point(j):
    """Classical turning point ``sqrt(2j - 1)`` of ``h_j``."""
    return np.sqrt(2.0 * j - 1.0)


def default_span(jmax):
    """Half-width of a trapezoid grid resolving all ``h_j`` with ``j <= jmax``."""
    return np.sqrt(2.0 * (2 * jmax - 1)) + SPAN_MARGIN


def default_step(jmax):
    """Grid step for weighted integrals up to index ``jmax`` (never above 0.02)."""
    return min(0.02, 0.9 * _TRAPEZOID_RESOLUTION / np.sqrt(2.0 * (2 * jmax - 1)))


def iter_hermite(x, jmax):
    """Yield ``(j, h_j(x))`` for ``j = 1 .. jmax``.

    Uses the three-term recurrence on normalized functions,

        h_j = x sqrt(2/(j-1)) h_{j-1} - sqrt((j-2)/(j-1)) h_{j-2},

    seeded with ``pi^{-1/4}`` and a separate log-scale array holding the
    Gaussian factor. Values below ~1e-300 flush to zero.

    Parameters
    ----------
    x : array_like
        Evaluation points (finite).
    jmax : int
        Largest index to produce.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("Hermite functions need finite arguments")
    if jmax < 1:
        raise DomainError("jmax must be >= 1")
    log_scale = -0.5 * x * x
    prev = np.zeros_like(x)
    cur = np.full_like(x, np.pi ** -0.25)
    for j in range(1, jmax + 1):
        if j == 2:
            prev, cur = cur, np.sqrt(2.0) * x * cur
        elif j > 2:
            nxt = x * np.sqrt(2.0 / (j - 1)) * cur - np.sqrt((j - 2) / (j - 1)) * prev
            prev, cur = cur, nxt
            big = np.abs(cur) > _RESCALE
            if big.any():
                prev = np.where(big, prev / _RESCALE, prev)
                cur = np.where(big, cur / _RESCALE, cur)
                log_scale = log_scale + np.where(big, _LOG_RESCALE, 0.0)
        yield j, _unscale(cur, log_scale)


def _unscale(values, log_scale):
    mag = np.abs(values)
    with np.errstate(divide="ignore"):
        log_mag = np.log(mag) + log_scale
    out = np.where(log_mag > -690.0, np.sign(values) * np.exp(np.minimum(log_mag, 700.0)), 0.0)
    return out


def hermite_functions(jmax, x):
    """Table of ``h_1 .. h_jmax`` at ``x``; row ``j-1`` holds ``h_j``."""
    x = np.asarray(x, dtype=float)
    out = np.empty((jmax,) + x.shape)
    for j, vals in iter_hermite(x, jmax):
        out[j - 1] = vals
    return out


def eval_hermite(j, x):
    """Evaluate the normalized Hermite function ``h_j`` at ``x``.

    >>> round(float(eval_hermite(1, 0.0)), 7)
    0.7511255
    """
    if int(j) != j or j < 1:
        raise DomainError(f"Hermite index must be a positive integer, got {j}")
    scalar = np.ndim(x) == 0
    vals = None
    for _, vals in iter_hermite(np.atleast_1d(x), int(j)):
        pass
    return float(vals[0]) if scalar else vals


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and positive weights of a 1D quadrature rule.

    For ``kind == "gauss_hermite"`` the weights integrate against ``exp(-x^2)``;
    for ``"truncated_trapezoid"`` they integrate plain functions on
    ``[-span, span]``.

    Attributes
    ----------
    nodes, weights : ndarray
    kind : str
    capacity : int
        Largest Hermite index ``j`` for which products ``h_j h_l`` (``l <= j``)
        integrate to 1e-10.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    capacity: int

    @property
    def rule_id(self):
        span = float(self.nodes[-1])
        return f"{self.kind}-m{self.nodes.size}-span{span:g}"

    def integrate(self, f, degree=None):
        """Integrate ``f`` over the real line.

        Parameters
        ----------
        f : callable
            Full integrand ``f(x)``. For Gauss-Hermite rules, ``f(x) exp(x^2)``
            must be a polynomial for exactness.
        degree : int, optional
            Polynomial degree of ``f(x) exp(x^2)``; checked against the
            Gauss-Hermite exactness limit ``2m - 1``.
        """
        if self.kind == "gauss_hermite":
            if degree is not None and degree > 2 * self.nodes.size - 1:
                raise CapacityError(
                    f"degree {degree} exceeds Gauss-Hermite exactness {2 * self.nodes.size - 1}"
                )
            x = self.nodes
            return float(np.sum(self.weights * f(x) * np.exp(x * x)))
        return float(np.sum(self.weights * f(self.nodes)))

    def effective_weights(self):
        """Weights for plain integrands ``f`` (Gauss-Hermite weights times ``e^{x^2}``)."""
        if self.kind == "gauss_hermite":
            return np.exp(np.log(self.weights) + self.nodes ** 2)
        return self.weights


def _trapezoid_capacity(span, step):
    by_span = ((span - SPAN_MARGIN) ** 2 / 2.0 + 1.0) / 2.0
    by_step = ((_TRAPEZOID_RESOLUTION / step) ** 2 / 2.0 + 1.0) / 2.0
    return int(np.floor(min(by_span, by_step) + 1e-9))


def build_rule(kind, m, span=None, capacity=None):
    """Construct a quadrature rule.

    Parameters
    ----------
    kind : {"gauss_hermite", "truncated_trapezoid"}
    m : int
        Number of nodes (>= 2).
    span : float, optional
        Half-width of the trapezoid grid; defaults to ``default_span(capacity)``.
    capacity : int, optional
        Required Hermite capacity; a ``CapacityError`` is raised if the rule
        cannot resolve it.

    Returns
    -------
    QuadratureRule
    """
    if m < 2:
        raise SpecError("a quadrature rule needs at least 2 nodes")
    if kind == "gauss_hermite":
        nodes, weights = hermgauss(m)
        cap = m
    elif kind == "truncated_trapezoid":
        if span is None:
            if capacity is None:
                raise SpecError("truncated_trapezoid needs span or capacity")
            span = default_span(capacity)
        nodes = np.linspace(-span, span, m)
        step = nodes[1] - nodes[0]
        weights = np.full(m, step)
        weights[0] = weights[-1] = 0.5 * step
        cap = _trapezoid_capacity(span, step)
    else:
        raise SpecError(f"unknown quadrature kind {kind!r}")
    if capacity is not None and capacity > cap:
        raise CapacityError(f"{kind} with m={m} resolves j <= {cap}, requested {capacity}")
    return QuadratureRule(nodes=nodes, weights=weights, kind=kind, capacity=int(cap))


def reference_rule(jmax):
    """Trapezoid rule with the default span and step for indices up to ``jmax``."""
    span = default_span(jmax)
    m = int(np.ceil(2 * span / default_step(jmax))) + 1
    return build_rule("truncated_trapezoid", m, span=span)


def log_weight(x, delta1):
    """Weight ``(1 + ln(1 + x^2))^{-2 delta1}``."""
    return (1.0 + np.log1p(np.asarray(x, dtype=float) ** 2)) ** (-2.0 * delta1)


def weighted_log_norm(j, delta1, rule):
    """Weighted norm ``(int h_j^2 (1 + ln(1 + x^2))^{-2 delta1} dx)^{1/2}``.

    Raises
    ------
    AccuracyError
        If ``j`` exceeds the rule capacity; ``residual`` carries the
        normalization defect of ``h_j`` on the rule.
    """
    if delta1 <= 0:
        raise DomainError("delta1 must be positive")
    w = rule.effective_weights()
    h = eval_hermite(j, rule.nodes)
    if j > rule.capacity:
        residual = abs(float(np.sum(w * h * h)) - 1.0)
        raise AccuracyError(f"rule {rule.rule_id} does not resolve h_{j}", residual)
    return float(np.sqrt(np.sum(w * h * h * log_weight(rule.nodes, delta1))))


def weighted_log_norm_profile(js, deltas, step=None):
    """Weighted norms for many indices and exponents in one recurrence sweep.

    The integrand is even, so the sweep runs over ``x >= 0`` only.

    Parameters
    ----------
    js : array_like of int
        Indices (any order, >= 1).
    deltas : array_like of float
        Exponents ``delta1 > 0``.
    step : float, optional
        Grid step; defaults to ``default_step(max(js))``.

    Returns
    -------
    norms : ndarray, shape (len(js), len(deltas))
    normalization : ndarray, shape (len(js),)
        ``int h_j^2`` on the same grid (should be 1).
    """
    js = np.asarray(js, dtype=int)
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    if np.any(deltas <= 0):
        raise DomainError("delta1 must be positive")
    jmax = int(js.max())
    step = default_step(jmax) if step is None else step
    span = default_span(jmax)
    x = np.arange(0.0, span + step, step)
    w = np.full(x.size, 2.0 * step)
    w[0] = step
    weights = [w * log_weight(x, d) for d in deltas]
    pos = {}
    for i, j in enumerate(js):
        pos.setdefault(int(j), []).append(i)
    norms = np.empty((js.size, deltas.size))
    normalization = np.empty(js.size)
    for j, h in iter_hermite(x, jmax):
        if j in pos:
            h2 = h * h
            vals = [np.sqrt(np.sum(wd * h2)) for wd in weights]
            nrm = float(np.sum(w * h2))
            for i in pos[j]:
                norms[i] = vals
                normalization[i] = nrm
    return norms, normalization


def log_spaced_indices(jmax, count):
    """At least ``count`` distinct log-spaced integers in ``[1, jmax]`` (1 and jmax included)."""
    if count > jmax:
        raise SpecError("cannot draw more distinct indices than jmax")
    n = count
    while True:
        js = np.unique(np.round(np.logspace(0.0, np.log10(jmax), n)).astype(int))
        if js.size >= count:
            return js
        n += 1
