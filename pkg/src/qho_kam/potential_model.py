"""Quasi-periodic potentials, Fourier block matrices and quadratic Hamiltonians.

Conventions
-----------
Complex normal coordinates ``zeta = (z, zbar)`` with ``z_j`` the coefficient
of ``h_j``. A quadratic Hamiltonian is stored by its Hessian in ``zeta``,

    H = 1/2 zeta^T B(theta) zeta,   B = [[E, A^T], [A, Ebar]],

so the three channels are

* ``"zzbar"``: ``A[j, l]`` is the coefficient of ``zbar_j z_l`` (the operator
  matrix acting on ``z``; Hermitian for real ``H``),
* ``"zz"``: ``E[j, l] = d^2 H / dz_j dz_l``,
* ``"zbarzbar"``: ``Ebar[j, l] = d^2 H / dzbar_j dzbar_l``.

Theta-dependence is a Fourier series over the lattice ``|k|_inf <= K``, stored
densely with ``k`` offset by ``K`` along each of the leading ``n`` axes.
"""

from dataclasses import dataclass, field
import itertools

import numpy as np
from scipy import fft as sp_fft

from .errors import AccuracyError, DomainError, SpecError
from .hermite_basis import hermite_functions, reference_rule

CHANNELS = ("zzbar", "zz", "zbarzbar")


def mode_grid(n, K):
    """All ``k`` with ``|k|_inf <= K`` in lexicographic order, shape ``((2K+1)^n, n)``."""
    rng = range(-K, K + 1)
    return np.array(list(itertools.product(rng, repeat=n)), dtype=int).reshape(-1, n)


def mode_l1(n, K):
    """``|k|_1`` on the dense lattice, shape ``(2K+1,)*n``."""
    axes = np.meshgrid(*([np.arange(-K, K + 1)] * n), indexing="ij")
    return sum(np.abs(a) for a in axes)


def mode_dot(n, K, omega):
    """``k . omega`` on the dense lattice, shape ``(2K+1,)*n``."""
    axes = np.meshgrid(*([np.arange(-K, K + 1)] * n), indexing="ij")
    return sum(a * w for a, w in zip(axes, np.atleast_1d(omega)))


class FourierBlockMatrix:
    """Theta-Fourier series of complex matrices.

    Parameters
    ----------
    coeffs : ndarray, shape ``(2K+1,)*n + (J1, J2)``
        ``coeffs[k + K]`` is the matrix multiplying ``exp(i k.theta)``.
    channel : str
        One of ``"zzbar"``, ``"zz"``, ``"zbarzbar"`` or ``"zeta"`` (full Hessian).
    """

    def __init__(self, coeffs, channel="zzbar"):
        coeffs = np.asarray(coeffs, dtype=complex)
        n = coeffs.ndim - 2
        if n < 1:
            raise SpecError("coefficient array needs at least one Fourier axis")
        size = coeffs.shape[0]
        if size % 2 == 0 or any(s != size for s in coeffs.shape[:n]):
            raise SpecError("Fourier axes must all have odd length 2K+1")
        self.coeffs = coeffs
        self.channel = channel

    @property
    def n(self):
        return self.coeffs.ndim - 2

    @property
    def K(self):
        return (self.coeffs.shape[0] - 1) // 2

    @property
    def J(self):
        return self.coeffs.shape[-1]

    @classmethod
    def zeros(cls, n, K, J, channel="zzbar"):
        return cls(np.zeros((2 * K + 1,) * n + (J, J), dtype=complex), channel)

    def copy(self):
        return FourierBlockMatrix(self.coeffs.copy(), self.channel)

    def _index(self, k):
        k = np.atleast_1d(np.asarray(k, dtype=int))
        if k.size != self.n:
            raise SpecError(f"mode {tuple(k)} has wrong dimension for n={self.n}")
        if np.max(np.abs(k)) > self.K:
            return None
        return tuple(k + self.K)

    def block(self, k):
        """Matrix at mode ``k`` (zero outside the stored lattice)."""
        idx = self._index(k)
        if idx is None:
            return np.zeros(self.coeffs.shape[-2:], dtype=complex)
        return self.coeffs[idx]

    def set_block(self, k, value):
        idx = self._index(k)
        if idx is None:
            raise SpecError(f"mode {tuple(k)} outside |k| <= {self.K}")
        self.coeffs[idx] = value

    def modes(self):
        return mode_grid(self.n, self.K)

    def nonzero_modes(self):
        flat = self.coeffs.reshape(-1, *self.coeffs.shape[-2:])
        keep = np.any(flat != 0, axis=(1, 2))
        return self.modes()[keep]

    def resized(self, K):
        """Zero-padded or truncated copy with cutoff ``K`` (tail discarded)."""
        out = FourierBlockMatrix.zeros(self.n, K, 1, self.channel)
        shape = (2 * K + 1,) * self.n + self.coeffs.shape[-2:]
        out.coeffs = np.zeros(shape, dtype=complex)
        m = min(K, self.K)
        src = tuple(slice(self.K - m, self.K + m + 1) for _ in range(self.n))
        dst = tuple(slice(K - m, K + m + 1) for _ in range(self.n))
        out.coeffs[dst] = self.coeffs[src]
        return out

    def truncate(self, K):
        """Split into the part with ``|k|_inf <= K`` and the majorant of the rest.

        Returns
        -------
        kept : FourierBlockMatrix
            Same storage size, modes beyond ``K`` zeroed.
        tail : float
            ``max_{j,l} sum_{|k|_inf > K} |c_k[j, l]|``.
        """
        kept = self.copy()
        if K >= self.K:
            return kept, 0.0
        mask = self.mode_mask(K)
        tail = np.abs(self.coeffs[~mask]).sum(axis=0).max() if (~mask).any() else 0.0
        kept.coeffs[~mask] = 0.0
        return kept, float(tail)

    def mode_mask(self, K):
        """Boolean lattice mask of modes with ``|k|_inf <= K``."""
        axes = np.meshgrid(*([np.arange(-self.K, self.K + 1)] * self.n), indexing="ij")
        return np.max(np.abs(np.stack(axes)), axis=0) <= K

    def majorant(self, s=0.0):
        """Entrywise Fourier majorant ``sum_k |c_k| exp(|k|_1 s)``."""
        w = np.exp(s * mode_l1(self.n, self.K))
        return np.tensordot(w, np.abs(self.coeffs), axes=(tuple(range(self.n)), tuple(range(self.n))))

    def reality_defect(self):
        """``max |c_{-k}[j,l] - conj(c_k[l,j])|`` (zero for a real zzbar form)."""
        flipped = self.coeffs[(slice(None, None, -1),) * self.n]
        return float(np.max(np.abs(flipped - np.conj(np.swapaxes(self.coeffs, -1, -2))), initial=0.0))

    def lattice_size(self):
        return 2 * self.K + 1

    def to_lattice(self, M):
        """Values on the uniform theta lattice with ``M`` points per dimension (``M >= 2K+1``)."""
        if M < 2 * self.K + 1:
            raise SpecError("lattice too coarse for the stored modes")
        return to_lattice(self.coeffs, self.n, M)

    @classmethod
    def from_lattice(cls, values, n, K, channel="zzbar"):
        """Fourier coefficients ``|k|_inf <= K`` from lattice values (modes above Nyquist dropped)."""
        return cls(from_lattice(values, n, K), channel)

    def evaluate(self, theta):
        """Matrix at the real angle vector ``theta``."""
        theta = np.atleast_1d(theta)
        phase = np.exp(1j * (self.modes() @ theta))
        flat = self.coeffs.reshape(-1, *self.coeffs.shape[-2:])
        return np.tensordot(phase, flat, axes=(0, 0))

    def __add__(self, other):
        K = max(self.K, other.K)
        return FourierBlockMatrix(self.resized(K).coeffs + other.resized(K).coeffs, self.channel)

    def __sub__(self, other):
        K = max(self.K, other.K)
        return FourierBlockMatrix(self.resized(K).coeffs - other.resized(K).coeffs, self.channel)

    def __mul__(self, c):
        return FourierBlockMatrix(self.coeffs * c, self.channel)

    __rmul__ = __mul__

    def to_dict(self):
        """JSON-ready dict; zero blocks omitted, ``k`` lexicographic, ``j, l`` 1-based."""
        blocks = []
        for k in self.nonzero_modes():
            b = self.block(k)
            nz = np.argwhere(b != 0)
            blocks.append({
                "k": [int(v) for v in k],
                "entries": [[int(j) + 1, int(l) + 1, float(b[j, l].real), float(b[j, l].imag)] for j, l in nz],
            })
        return {"n": self.n, "K_max": self.K, "shape": list(self.coeffs.shape[-2:]),
                "channel": self.channel, "index_base": 1, "blocks": blocks}

    @classmethod
    def from_dict(cls, d):
        shape = (2 * d["K_max"] + 1,) * d["n"] + tuple(d["shape"])
        coeffs = np.zeros(shape, dtype=complex)
        K = d["K_max"]
        for blk in d["blocks"]:
            idx = tuple(np.asarray(blk["k"]) + K)
            for j, l, re, im in blk["entries"]:
                coeffs[idx + (int(j) - 1, int(l) - 1)] = complex(re, im)
        return cls(coeffs, d["channel"])


def to_lattice(coeffs, n, M):
    """Inverse FFT of a centred coefficient array onto an ``M``-point lattice per axis."""
    K = (coeffs.shape[0] - 1) // 2
    shape = (M,) * n + coeffs.shape[n:]
    padded = np.zeros(shape, dtype=complex)
    # FFT order: k >= 0 at index k, k < 0 at index M + k
    idx = np.concatenate([np.arange(0, K + 1), np.arange(M - K, M)]) if K > 0 else np.array([0])
    order = np.concatenate([np.arange(K, 2 * K + 1), np.arange(0, K)])
    padded[np.ix_(*([idx] * n))] = coeffs[np.ix_(*([order] * n))]
    axes = tuple(range(n))
    return sp_fft.ifftn(padded, axes=axes, workers=-1) * (M ** n)


def from_lattice(values, n, K):
    """Forward FFT of lattice values to centred coefficients ``|k|_inf <= K``."""
    M = values.shape[0]
    if M < 2 * K + 1:
        raise SpecError("lattice too coarse for the requested modes")
    axes = tuple(range(n))
    spec = sp_fft.fftn(values, axes=axes, workers=-1) / (M ** n)
    idx = np.concatenate([np.arange(M - K, M), np.arange(0, K + 1)])
    return spec[np.ix_(*([idx] * n))]


def theta_lattice(n, M):
    """Lattice angles, shape ``(M,)*n + (n,)``."""
    g = 2 * np.pi * np.arange(M) / M
    return np.stack(np.meshgrid(*([g] * n), indexing="ij"), axis=-1)


@dataclass
class NormalForm:
    """Tangential frequencies ``omega`` and normal frequencies ``Omega_j``."""

    omega: np.ndarray
    Omega: np.ndarray

    def __post_init__(self):
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        self.Omega = np.asarray(self.Omega, dtype=float)

    @classmethod
    def harmonic(cls, omega, J):
        """Unperturbed oscillator: ``Omega_j = 2j - 1``."""
        return cls(omega, 2.0 * np.arange(1, J + 1) - 1.0)

    @property
    def reference(self):
        return 2.0 * np.arange(1, self.Omega.size + 1) - 1.0

    def copy(self):
        return NormalForm(self.omega.copy(), self.Omega.copy())


class QuadraticHamiltonian:
    """Theta-dependent quadratic form ``1/2 zeta^T B(theta) zeta``.

    Parameters
    ----------
    hessian : FourierBlockMatrix
        Series of symmetric ``(2J, 2J)`` matrices (channel ``"zeta"``).
    """

    def __init__(self, hessian):
        if hessian.coeffs.shape[-1] % 2:
            raise SpecError("zeta Hessian must have even size 2J")
        hessian.channel = "zeta"
        self.hessian = hessian

    @property
    def n(self):
        return self.hessian.n

    @property
    def K(self):
        return self.hessian.K

    @property
    def J(self):
        return self.hessian.coeffs.shape[-1] // 2

    @classmethod
    def zeros(cls, n, K, J):
        return cls(FourierBlockMatrix.zeros(n, K, 2 * J, "zeta"))

    @classmethod
    def from_channels(cls, zzbar=None, zz=None, zbarzbar=None):
        """Assemble from channel series (missing channels are zero)."""
        given = [c for c in (zzbar, zz, zbarzbar) if c is not None]
        if not given:
            raise SpecError("at least one channel is required")
        n, K, J = given[0].n, max(c.K for c in given), given[0].J
        B = np.zeros((2 * K + 1,) * n + (2 * J, 2 * J), dtype=complex)
        if zzbar is not None:
            A = zzbar.resized(K).coeffs
            B[..., J:, :J] = A
            B[..., :J, J:] = np.swapaxes(A, -1, -2)
        if zz is not None:
            E = zz.resized(K).coeffs
            B[..., :J, :J] = 0.5 * (E + np.swapaxes(E, -1, -2))
        if zbarzbar is not None:
            E = zbarzbar.resized(K).coeffs
            B[..., J:, J:] = 0.5 * (E + np.swapaxes(E, -1, -2))
        return cls(FourierBlockMatrix(B, "zeta"))

    def channel(self, name):
        """Channel view as a ``FourierBlockMatrix`` of ``(J, J)`` blocks."""
        J = self.J
        B = self.hessian.coeffs
        if name == "zzbar":
            c = B[..., J:, :J]
        elif name == "zz":
            c = B[..., :J, :J]
        elif name == "zbarzbar":
            c = B[..., J:, J:]
        else:
            raise SpecError(f"unknown channel {name!r}")
        return FourierBlockMatrix(c.copy(), name)

    def copy(self):
        return QuadraticHamiltonian(self.hessian.copy())

    def __add__(self, other):
        return QuadraticHamiltonian(self.hessian + other.hessian)

    def __sub__(self, other):
        return QuadraticHamiltonian(self.hessian - other.hessian)

    def __mul__(self, c):
        return QuadraticHamiltonian(self.hessian * c)

    __rmul__ = __mul__

    def value(self, theta, z, zbar=None):
        """Evaluate ``H(theta, z, zbar)``; ``zbar`` defaults to ``conj(z)``."""
        z = np.asarray(z, dtype=complex)
        zbar = np.conj(z) if zbar is None else np.asarray(zbar, dtype=complex)
        zeta = np.concatenate([z, zbar])
        return 0.5 * zeta @ self.hessian.evaluate(theta) @ zeta

    def reality_defect(self):
        """Defect of the reality symmetry pairing ``k`` with ``-k`` across channels."""
        J = self.J
        B = self.hessian.coeffs
        flipped = B[(slice(None, None, -1),) * self.n]
        d1 = np.abs(flipped[..., J:, :J] - np.conj(np.swapaxes(B[..., J:, :J], -1, -2)))
        d2 = np.abs(flipped[..., :J, :J] - np.conj(B[..., J:, J:]))
        return float(max(d1.max(initial=0.0), d2.max(initial=0.0)))

    def symmetry_defect(self):
        B = self.hessian.coeffs
        return float(np.abs(B - np.swapaxes(B, -1, -2)).max(initial=0.0))

    def off_normal(self):
        """Copy with the theta-average diagonal of the zzbar channel removed."""
        out = self.copy()
        J = self.J
        zero = (self.K,) * self.n
        d = np.arange(J)
        out.hessian.coeffs[zero + (J + d, d)] = 0.0
        out.hessian.coeffs[zero + (d, J + d)] = 0.0
        return out

    def to_dict(self):
        return {"J_max": self.J, "hessian": self.hessian.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(FourierBlockMatrix.from_dict(d["hessian"]))


# ----------------------------------------------------------------------------
# potentials


@dataclass
class Potential:
    """Real potential ``V(x, theta; omega)``, 2 pi periodic in ``theta``.

    Attributes
    ----------
    n : int
        Number of forcing frequencies.
    beta : float
        Log-decay exponent of the envelope.
    rho : float
        Theta-analyticity width.
    evaluator : callable
        ``evaluator(x, theta, omega)`` with ``x`` shape ``(Nx,)`` and ``theta``
        shape ``(Nt, n)`` returning shape ``(Nt, Nx)``.
    fourier_profiles : list of (tuple, callable), optional
        When ``V`` is a finite Fourier sum: pairs ``(k, c_k)`` with
        ``V = sum_k c_k(x, omega) exp(i k.theta)``.
    """

    n: int
    beta: float
    rho: float
    evaluator: object
    fourier_profiles: list = field(default=None)
    name: str = "custom"

    def __call__(self, x, theta, omega):
        return self.evaluator(np.asarray(x, dtype=float), np.atleast_2d(theta), omega)


def log_envelope(x, beta):
    """``(1 + ln(1 + x^2))^{-2 beta}``."""
    return (1.0 + np.log1p(np.asarray(x, dtype=float) ** 2)) ** (-2.0 * beta)


def _cosine_sum(n, profile, name, beta, rho=np.inf):
    def evaluator(x, theta, omega):
        return np.cos(theta).sum(axis=1)[:, None] * profile(x, omega)[None, :]

    terms = []
    for m in range(n):
        for sign in (1, -1):
            k = [0] * n
            k[m] = sign
            terms.append((tuple(k), lambda x, omega: 0.5 * profile(x, omega)))
    return Potential(n=n, beta=beta, rho=rho, evaluator=evaluator, fourier_profiles=terms, name=name)


def log_decay_potential(beta=6.0, n=1):
    """``(1 + ln(1 + x^2))^{-2 beta} sum_m cos theta_m``."""
    return _cosine_sum(n, lambda x, omega: log_envelope(x, beta), f"log_decay(beta={beta:g})", beta)


def gaussian_potential(n=1, beta=6.0):
    """``exp(-x^2) sum_m cos theta_m``."""
    return _cosine_sum(n, lambda x, omega: np.exp(-x * x), "gaussian", beta)


def x_independent_potential(n=1, beta=6.0):
    """``sum_m cos theta_m`` (no x dependence)."""
    return _cosine_sum(n, lambda x, omega: np.ones_like(x), "x_independent", beta)


def linear_potential():
    """``x cos theta_1``; unbounded, violates the decay condition."""
    return _cosine_sum(1, lambda x, omega: x, "linear_x", 0.0)


def omega_scaled_gaussian(n=1):
    """``omega_1 exp(-x^2) cos theta_1``."""
    def profile(x, omega):
        return np.atleast_1d(omega)[0] * np.exp(-x * x)

    def evaluator(x, theta, omega):
        return np.cos(theta[:, 0])[:, None] * profile(x, omega)[None, :]

    k1 = tuple([1] + [0] * (n - 1))
    km = tuple([-1] + [0] * (n - 1))
    terms = [(k1, lambda x, omega: 0.5 * profile(x, omega)), (km, lambda x, omega: 0.5 * profile(x, omega))]
    return Potential(n=n, beta=np.inf, rho=np.inf, evaluator=evaluator, fourier_profiles=terms,
                     name="omega_gaussian")


def poisson_kernel_potential(rho=0.5, beta=6.0, n=1):
    """Log-decay envelope times an analytic theta profile with coefficients ``exp(-rho |k|)``.

    ``sum_k exp(-rho|k|) e^{ik theta_1} - 1`` in closed form; not a finite
    Fourier sum, so matrix elements go through the lattice FFT path.
    """
    q = np.exp(-rho)

    def evaluator(x, theta, omega):
        c = np.cos(theta[:, 0])
        kern = (1 - q * q) / (1 - 2 * q * c + q * q) - 1.0
        return kern[:, None] * log_envelope(x, beta)[None, :]

    return Potential(n=n, beta=beta, rho=rho, evaluator=evaluator, name=f"poisson(rho={rho:g})")


_PROFILES = {
    "log": lambda beta, width: (lambda x, omega: log_envelope(x, beta)),
    "gauss": lambda beta, width: (lambda x, omega: np.exp(-(np.asarray(x) / width) ** 2)),
    "const": lambda beta, width: (lambda x, omega: np.ones_like(x)),
}


def fourier_sum_potential(n, beta, terms, rho=np.inf):
    """Real potential from a list of Fourier terms.

    Each term is a dict with keys ``k`` (list of n ints), ``amplitude`` (real)
    or ``re``/``im``, ``profile`` (``"log"``, ``"gauss"``, ``"const"``) and
    optional ``width``. The conjugate term at ``-k`` is added automatically.
    """
    profiles = []
    for t in terms:
        k = tuple(int(v) for v in t["k"])
        if len(k) != n:
            raise SpecError(f"term mode {k} does not match n={n}")
        amp = complex(t.get("re", t.get("amplitude", 0.0)), t.get("im", 0.0))
        kind = t.get("profile", "log")
        if kind not in _PROFILES:
            raise SpecError(f"unknown profile {kind!r}")
        prof = _PROFILES[kind](beta, float(t.get("width", 1.0)))
        if any(k):
            profiles.append((k, _scaled(prof, 0.5 * amp)))
            profiles.append((tuple(-v for v in k), _scaled(prof, 0.5 * np.conj(amp))))
        else:
            profiles.append((k, _scaled(prof, amp.real)))

    def evaluator(x, theta, omega):
        out = np.zeros((theta.shape[0], x.size), dtype=complex)
        for k, prof in profiles:
            out += np.exp(1j * (theta @ np.asarray(k)))[:, None] * prof(x, omega)[None, :]
        return out.real

    return Potential(n=n, beta=beta, rho=rho, evaluator=evaluator, fourier_profiles=profiles,
                     name="fourier_sum")


def _scaled(prof, c):
    return lambda x, omega: c * prof(x, omega)


BUILTIN_POTENTIALS = {
    "log_decay": lambda n, beta, **kw: log_decay_potential(beta, n),
    "gaussian": lambda n, beta, **kw: gaussian_potential(n, beta),
    "x_independent": lambda n, beta, **kw: x_independent_potential(n, beta),
    "poisson": lambda n, beta, rho=0.5, **kw: poisson_kernel_potential(rho, beta, n),
}


def potential_from_config(cfg):
    """Build a potential from a config table ``{type, n, beta, rho, coefficients}``."""
    kind = cfg.get("type", "log_decay")
    n = int(cfg.get("n", 1))
    beta = float(cfg.get("beta", 6.0))
    if kind == "fourier_sum":
        return fourier_sum_potential(n, beta, cfg.get("coefficients", []), cfg.get("rho", np.inf))
    if kind not in BUILTIN_POTENTIALS:
        raise SpecError(f"unknown potential type {kind!r}")
    return BUILTIN_POTENTIALS[kind](n, beta, rho=float(cfg.get("rho", 0.5)))


# ----------------------------------------------------------------------------
# condition checks and matrix elements


@dataclass
class ConditionReport:
    """Measured constants of the decay and smoothness conditions on a grid."""

    c0: float
    c1: float
    c2: float
    c0_omega: float
    x_max: float
    bound: float
    passed: bool

    def to_dict(self):
        return dict(self.__dict__)


def verify_conditions(V, x_max=20.0, nx=2001, n_theta=16, omegas=None, bound=None, h_omega=1e-5):
    """Smallest constants of the potential bounds over a sampling grid.

    Computes ``C0 = max |V| (1 + ln(1+x^2))^{2 beta}``, ``C1 = max |dV/dx|``,
    ``C2 = max |d2V/dx2|`` and the omega-gradient analogue of ``C0``;
    derivatives by central differences.

    Parameters
    ----------
    V : Potential
    x_max : float
        Grid covers ``|x| <= x_max``.
    nx, n_theta : int
        Points in x and per theta dimension.
    omegas : array_like, shape (m, n), optional
        Frequency samples; defaults to ``pi`` in every component.
    bound : float, optional
        Pass/fail threshold for the decay constants ``C0`` and its omega
        analogue (up to roundoff); the derivative constants only need to be
        finite. Without it only finiteness is checked.
    """
    x = np.linspace(-x_max, x_max, nx)
    dx = x[1] - x[0]
    if nx < 5 or dx > 0.25:
        raise SpecError(f"x grid too coarse for difference stencils (dx={dx:.3g})")
    th = theta_lattice(V.n, n_theta).reshape(-1, V.n)
    omegas = np.full((1, V.n), np.pi) if omegas is None else np.atleast_2d(omegas)
    env = (1.0 + np.log1p(x * x)) ** (2.0 * V.beta) if np.isfinite(V.beta) else np.ones_like(x)
    c0 = c1 = c2 = c0w = 0.0
    for om in omegas:
        vals = V(x, th, om)
        c0 = max(c0, float(np.max(np.abs(vals) * env)))
        d1 = (vals[:, 2:] - vals[:, :-2]) / (2 * dx)
        d2 = (vals[:, 2:] - 2 * vals[:, 1:-1] + vals[:, :-2]) / dx ** 2
        c1 = max(c1, float(np.max(np.abs(d1))))
        c2 = max(c2, float(np.max(np.abs(d2))))
        for m in range(V.n):
            e = np.zeros(V.n)
            e[m] = h_omega
            dv = (V(x, th, om + e) - V(x, th, om - e)) / (2 * h_omega)
            c0w = max(c0w, float(np.max(np.abs(dv) * env)))
    consts = (c0, c1, c2, c0w)
    ok = all(np.isfinite(consts)) and (bound is None or max(c0, c0w) <= bound * (1 + 1e-12))
    return ConditionReport(c0, c1, c2, c0w, float(x_max), np.inf if bound is None else float(bound), bool(ok))


def _fourier_profiles(V, x, omega, K):
    """Centred coefficient profiles ``c_k(x)``, shape ``(2K+1,)*n + (Nx,)``."""
    n = V.n
    out = np.zeros((2 * K + 1,) * n + (x.size,), dtype=complex)
    if V.fourier_profiles is not None:
        for k, prof in V.fourier_profiles:
            k = np.asarray(k)
            if np.max(np.abs(k)) <= K:
                out[tuple(k + K)] += prof(x, omega)
        return out
    M = max(4 * K, 8)
    th = theta_lattice(n, M).reshape(-1, n)
    vals = V(x, th, omega).reshape((M,) * n + (x.size,))
    return from_lattice(vals.astype(complex), n, K)


def matrix_elements(V, J, K, omega, rule=None, check=True):
    """Hermite-basis matrix elements of ``V`` as a theta-Fourier series.

    ``blocks(k)[j, l] = (2 pi)^{-n} int e^{-ik.theta} int V h_j h_l dx dtheta``.

    Parameters
    ----------
    V : Potential
    J, K : int
        Mode cutoff and Fourier cutoff.
    omega : array_like
        Frequency vector (potentials may depend on it).
    rule : QuadratureRule, optional
        Defaults to ``reference_rule(J)``.
    check : bool
        Verify orthonormality of the basis on the rule.

    Returns
    -------
    FourierBlockMatrix
    """
    rule = reference_rule(J) if rule is None else rule
    x = rule.nodes
    w = rule.effective_weights()
    H = hermite_functions(J, x)
    if check:
        if J > rule.capacity:
            raise AccuracyError(f"rule {rule.rule_id} resolves j <= {rule.capacity} < {J}")
        gram = (H * w) @ H.T
        res = float(np.abs(gram - np.eye(J)).max())
        if res > 1e-9:
            raise AccuracyError(f"orthonormality residual {res:.2e} on rule {rule.rule_id}", res)
    prof = _fourier_profiles(V, x, omega, K)
    flat = prof.reshape(-1, x.size)
    coeffs = np.zeros((flat.shape[0], J, J), dtype=complex)
    for i, c in enumerate(flat):
        if np.any(c != 0):
            re = (H * (w * c.real)) @ H.T
            im = (H * (w * c.imag)) @ H.T if np.any(c.imag != 0) else 0.0
            coeffs[i] = re + 1j * im
    coeffs = coeffs.reshape((2 * K + 1,) * V.n + (J, J))
    return FourierBlockMatrix(coeffs, "zzbar")


def omega_gradient_elements(V, J, K, omega, h=None, rule=None):
    """Central-difference omega-gradient of ``matrix_elements``, one series per component.

    Raises
    ------
    DomainError
        If ``omega +- h e_m`` leaves ``[0, 2 pi]^n``.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    h = 1e-5 * 2 * np.pi if h is None else h
    if h <= 0:
        raise DomainError("finite-difference step must be positive")
    if np.any(omega - h < 0) or np.any(omega + h > 2 * np.pi):
        raise DomainError("omega too close to the boundary of [0, 2 pi]^n for the stencil")
    rule = reference_rule(J) if rule is None else rule
    grads = []
    for m in range(omega.size):
        e = np.zeros_like(omega)
        e[m] = h
        plus = matrix_elements(V, J, K, omega + e, rule, check=False)
        minus = matrix_elements(V, J, K, omega - e, rule, check=False)
        grads.append(FourierBlockMatrix((plus.coeffs - minus.coeffs) / (2 * h), "zzbar"))
    return grads
