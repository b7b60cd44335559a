"""Newton (KAM) iteration reducing a quadratic quasi-periodic Hamiltonian to normal form.

Each frequency sample runs its own pipeline: truncate ``P`` at ``K_nu``,
solve the homological equation (excising the sample on a small divisor),
transform ``P`` by the time-1 map of the generator, update the normal
frequencies, and re-check non-resonance. The composed map is kept on a
theta lattice so the final reduction can be verified from scratch by
conjugating the original Hamiltonian.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
import csv
import hashlib
import io
import json
import math
import warnings

import numpy as np
from scipy.stats import qmc

from . import __version__
from .decay_norms import gamma_norm, log_weights, frequency_distance
from .errors import EmptyParameterSet, ResonanceError, SpecError, StepTooLargeError
from .homological_solver import SmallDivisorPolicy, nonresonance_margin, solve
from .potential_model import (FourierBlockMatrix, NormalForm, QuadraticHamiltonian, matrix_elements,
                              potential_from_config)
from .symplectic_flow import (SymplecticMap, conjugate, lattice_points, lie_transform,
                              normal_form_hessian, split_normal_part, time_one_map)

# desk-scale limits on the physical parameters
LIMITS = {"n": 2, "J_max": 400, "K_max": 16}


@dataclass
class KamConfig:
    """Run parameters; field names match the ``[kam]`` table of a run file."""

    potential: dict = field(default_factory=lambda: {"type": "log_decay", "beta": 6.0})
    n: int = 1
    J_max: int = 40
    K_max: int = 10
    epsilon: float = 1e-6
    beta: float = 6.0
    tau: float = 3.0
    s0: float = 1.0
    r0: float = 1.0
    p: float = 2.0
    alpha0: float = 0.01
    M0: float = 1.0
    c1: float = 1.0
    gamma0: float = 0.01
    K0: int = None
    samples: int = 256
    seed: int = 0
    omegas: list = None
    nu_max: int = 5
    target: float = 0.0
    sigma_rule: str = "geometric"
    excision_check: str = "all"
    smallness: str = "warn"
    export_maps: int = 1
    workers: int = 1

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown kam config keys: {sorted(extra)}")
        return cls(**d)

    def validate(self):
        for key, top in LIMITS.items():
            v = getattr(self, key)
            if not 1 <= int(v) <= top:
                raise SpecError(f"{key}={v} outside [1, {top}]")
        if self.epsilon < 0:
            raise SpecError("epsilon must be non-negative")
        if self.beta < 2 * self.tau:
            raise SpecError("need beta >= 2 tau (iota >= 2)")
        if self.tau < self.n + 2:
            raise SpecError("need tau >= n + 2")
        if not 0 < self.alpha0 <= 1:
            raise SpecError("alpha0 must lie in (0, 1]")
        if self.s0 <= 0 or self.r0 <= 0 or self.M0 <= 0:
            raise SpecError("s0, r0 and M0 must be positive")
        if self.sigma_rule not in ("geometric", "log"):
            raise SpecError(f"unknown sigma_rule {self.sigma_rule!r}")
        if self.excision_check not in ("all", "active"):
            raise SpecError(f"unknown excision_check {self.excision_check!r}")
        if self.smallness not in ("warn", "enforce", "off"):
            raise SpecError(f"unknown smallness mode {self.smallness!r}")
        if self.omegas is None and self.samples < 1:
            raise SpecError("need at least one frequency sample")
        if self.nu_max < 0:
            raise SpecError("nu_max must be >= 0")

    @property
    def iota(self):
        return self.beta / self.tau

    def to_dict(self):
        return asdict(self)

    def digest(self):
        """SHA-256 of the canonical JSON form."""
        text = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(text.encode()).hexdigest()


# ----------------------------------------------------------------------------
# schedule


@dataclass(frozen=True)
class StepParams:
    """Parameters of step ``nu``."""

    nu: int
    alpha: float
    M: float
    lam: float
    eps: float
    sigma: float
    eta: float
    s: float
    r: float
    K: int
    sigma_rule: str

    def policy(self, tau, beta):
        return SmallDivisorPolicy(self.alpha, tau, beta)


def default_K0(c1, gamma0):
    """``ceil(ln^2(1/(4 c1 gamma0)) / 4)``, at least 1."""
    arg = 1.0 / (4.0 * c1 * gamma0)
    if arg <= 1.0:
        return 1
    return max(1, math.ceil(math.log(arg) ** 2 / 4.0))


def _log_sigma(nu, eps):
    le = abs(math.log(eps)) if 0 < eps < 1 else 0.0
    if le == 0.0:
        return math.inf
    return 8.0 * 700.0 ** (nu - 1) / le ** (nu - 1)


def schedule(nu_max, alpha0, M0, eps0, s0, r0=1.0, c1=1.0, K0=1, K_max=None,
             sigma_rule="geometric"):
    """Step parameters for ``nu = 0 .. nu_max``.

    ``alpha_nu = (alpha0/2)(1 + 2^-nu)``, ``M_nu = M0 (2 - 2^-nu)``,
    ``eps_{nu+1} = c1 eps_nu^{133/100} / alpha_nu^{1/3}``,
    ``eta_nu^3 = eps_nu^{99/100} / alpha_nu``, ``s_{nu+1} = s_nu - 5 sigma_nu``,
    ``r_{nu+1} = eta_nu r_nu`` and ``K_nu = K0 (36/25)^nu`` (floored, capped at ``K_max``).

    With ``sigma_rule="log"`` the width loss is ``8 700^{nu-1} / |ln eps_nu|^{nu-1}``
    as long as it keeps ``s_nu > s0/2``; from the first step where it would
    not, the geometric rule ``sigma_nu = (s0/48) 2^-nu`` is used and the
    step is labelled ``"geometric-fallback"``.
    """
    out = []
    eps, s, r = float(eps0), float(s0), float(r0)
    fallback = sigma_rule != "log"
    for nu in range(nu_max + 1):
        alpha = 0.5 * alpha0 * (1.0 + 2.0 ** -nu)
        M = M0 * (2.0 - 2.0 ** -nu)
        geo = s0 / 48.0 * 2.0 ** -nu
        rule = "geometric"
        sigma = geo
        if not fallback:
            cand = _log_sigma(nu, eps)
            if s - 5.0 * cand > 0.5 * s0:
                sigma, rule = cand, "log"
            else:
                fallback = True
                rule = "geometric-fallback"
        eta = (eps ** 0.99 / alpha) ** (1.0 / 3.0) if eps > 0 else 0.0
        K = int(math.floor(K0 * (36.0 / 25.0) ** nu + 1e-12))
        if K_max is not None:
            K = min(K, K_max)
        out.append(StepParams(nu, alpha, M, alpha / M, eps, sigma, eta, s, r, max(K, 1), rule))
        eps = c1 * eps ** 1.33 / alpha ** (1.0 / 3.0) if eps > 0 else 0.0
        s = s - 5.0 * sigma
        r = eta * r
    return out


def smallness_gate(eps0, alpha0, gamma0, mode="warn"):
    """Check ``eps0 <= gamma0 alpha0^5``; returns whether it holds."""
    ok = eps0 <= gamma0 * alpha0 ** 5
    if not ok and mode != "off":
        msg = f"smallness gate eps0={eps0:g} > gamma0 alpha0^5 = {gamma0 * alpha0 ** 5:.3g}"
        if mode == "enforce":
            raise SpecError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return ok


def frequency_samples(n, count, seed=0):
    """Scrambled Sobol points in ``[0, 2 pi]^n``."""
    sob = qmc.Sobol(d=n, scramble=True, seed=seed)
    m = int(math.ceil(math.log2(max(count, 1))))
    pts = sob.random_base2(m)[:count]
    return 2.0 * np.pi * pts


# ----------------------------------------------------------------------------
# state


@dataclass
class SampleState:
    """One frequency sample: normal form, current perturbation and composed map."""

    index: int
    omega: np.ndarray
    Omega: np.ndarray
    P: QuadraticHamiltonian
    Phi: SymplecticMap
    alive: bool = True
    diverged: bool = False
    excision: dict = None
    gammas: list = field(default_factory=list)
    shifts: list = field(default_factory=list)
    tails: list = field(default_factory=list)
    lie_orders: list = field(default_factory=list)
    min_ratios: list = field(default_factory=list)

    @property
    def normal(self):
        return NormalForm(self.omega, self.Omega)


@dataclass
class KamState:
    """Samples at level ``nu`` plus per-step diagnostics."""

    config: KamConfig
    nu: int
    samples: list
    steps: list = field(default_factory=list)
    diverged: bool = False

    @property
    def alive(self):
        return [s for s in self.samples if s.alive]


def initial_perturbation(V, cfg, omega):
    """``eps`` times the Hermite matrix elements of ``V`` as a zzbar Hamiltonian."""
    A = matrix_elements(V, cfg.J_max, cfg.K_max, omega) * cfg.epsilon
    return QuadraticHamiltonian.from_channels(zzbar=A)


def _measure(P, cfg, params):
    return gamma_norm(P, cfg.beta, params.r, max(params.s, 0.0), cfg.p)


def kam_step(state, params, next_params):
    """Advance every surviving sample by one Newton step.

    Parameters
    ----------
    state : KamState
    params : StepParams
        Parameters of the current step ``nu``.
    next_params : StepParams
        Parameters of step ``nu + 1`` (its ``alpha`` is used for the re-check
        after the frequency update and its ``s, r`` for the new norm).

    Raises
    ------
    EmptyParameterSet
        When no sample survives.
    """
    cfg = state.config
    live = state.alive
    if not live:
        raise EmptyParameterSet("no frequency samples left")

    def work(smp):
        _advance(smp, cfg, params, next_params)
        return smp

    if cfg.workers > 1 and len(live) > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            list(pool.map(work, live))
    else:
        for smp in live:
            work(smp)
    state.nu = params.nu + 1
    row = _step_row(state, params)
    state.steps.append(row)
    if not state.alive:
        raise EmptyParameterSet(f"all samples excised at step {params.nu}")
    if row["diverged"]:
        state.diverged = True
    return state


def _advance(smp, cfg, params, next_params):
    n, J = cfg.n, cfg.J_max
    K = min(params.K, smp.P.K)
    R = QuadraticHamiltonian(smp.P.hessian.resized(K))
    try:
        sol = solve(R, smp.normal, params.policy(cfg.tau, cfg.beta), check=cfg.excision_check)
    except ResonanceError as err:
        smp.alive = False
        smp.excision = {"nu": params.nu, "reason": "small_divisor", "k": list(err.k), "j": err.j,
                        "l": err.l, "channel": err.channel, "divisor": err.value, "bound": err.bound}
        return
    try:
        step = time_one_map(sol.F, M=smp.Phi.M)
    except StepTooLargeError as err:
        smp.alive = False
        smp.diverged = True
        smp.excision = {"nu": params.nu, "reason": "step_too_large", "message": str(err)}
        return
    P_new, tail, order = lie_transform(smp.P, R, sol.Nhat, sol.F, K_out=cfg.K_max)
    smp.Omega = smp.Omega + sol.Omega_shift
    smp.shifts.append(sol.Omega_shift.copy())
    smp.tails.append(tail)
    smp.lie_orders.append(order)
    smp.min_ratios.append(sol.min_ratio)
    smp.Phi = smp.Phi.compose(step)
    smp.P = P_new
    smp.gammas.append(_measure(P_new, cfg, next_params))
    prev = smp.gammas[-2]
    if not np.isfinite(smp.gammas[-1]) or (prev > 0 and smp.gammas[-1] > prev):
        smp.diverged = True
    # frequency-shift re-check of the retained box with the next alpha
    margin = nonresonance_margin(n, K, smp.omega, smp.Omega[:J],
                                 next_params.policy(cfg.tau, cfg.beta))
    if margin["ratio"] < 1.0:
        smp.alive = False
        smp.excision = dict(margin, nu=params.nu, reason="frequency_shift")


def _step_row(state, params):
    cfg = state.config
    alive = state.alive
    gam = [s.gammas[-1] for s in alive if len(s.gammas) > params.nu + 1]
    prev = [s.gammas[params.nu] for s in state.samples if len(s.gammas) > params.nu]
    w = log_weights(cfg.J_max, 2 * cfg.beta)
    prof = [np.max(np.abs(s.shifts[-1]) * w) / params.alpha for s in alive if s.shifts]
    tails = [s.tails[-1] for s in alive if s.tails]
    return {
        "nu": params.nu,
        "K": params.K,
        "alpha": params.alpha,
        "sigma": params.sigma,
        "s": params.s,
        "eps_predicted": params.eps,
        "gamma_in": max(prev, default=0.0),
        "gamma_out": max(gam, default=0.0),
        "alive": len(alive),
        "excised": sum(1 for s in state.samples if not s.alive),
        "max_shift_profile": max(prof, default=0.0),
        "tail": max(tails, default=0.0),
        "diverged": any(s.diverged for s in state.samples),
    }


# ----------------------------------------------------------------------------
# driver


@dataclass
class ReducedNormalForm:
    """Final frequencies, optional composed map and certificate of one sample."""

    omega: np.ndarray
    Omega: np.ndarray
    Phi: SymplecticMap = None
    certificate: dict = field(default_factory=dict)


@dataclass
class RunResult:
    config: KamConfig
    schedule: list
    state: KamState
    reduced: list
    initial: dict = field(default_factory=dict)

    @property
    def steps(self):
        return self.state.steps

    @property
    def diverged(self):
        return self.state.diverged

    @property
    def survival(self):
        return sum(s.alive for s in self.state.samples) / len(self.state.samples)

    def gamma_sequence(self):
        """Largest ``<P_nu>`` over samples alive at the end, for every ``nu``."""
        alive = self.state.alive
        if not alive:
            return []
        m = min(len(s.gammas) for s in alive)
        return [max(s.gammas[i] for s in alive) for i in range(m)]

    def steps_csv(self):
        buf = io.StringIO()
        cols = list(self.steps[0]) if self.steps else ["nu"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.steps:
            w.writerow([_fmt(row[c]) for c in cols])
        return buf.getvalue()

    def certificate(self):
        cfg = self.config
        return {
            "version": __version__,
            "config_hash": cfg.digest(),
            "config": cfg.to_dict(),
            "survival": self.survival,
            "diverged": self.diverged,
            "gamma_sequence": self.gamma_sequence(),
            "samples": [_sample_summary(s, r) for s, r in zip(self.state.samples, self.reduced)],
        }


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return v


def _sample_summary(smp, rnf):
    out = {"index": smp.index, "omega": smp.omega.tolist(), "alive": smp.alive,
           "diverged": smp.diverged, "gammas": smp.gammas}
    if smp.excision:
        out["excision"] = smp.excision
    if rnf is not None:
        out["Omega"] = rnf.Omega.tolist()
        out.update(rnf.certificate)
    return out


def from_scratch_residual(P0, Omega0, Phi, omega, K_out):
    """Conjugate the original ``N + P0`` by the composed map and measure what is left.

    Returns
    -------
    dict
        ``offnormal``: largest entry majorant ``max_ab sum_k |c_ab(k)|`` of
        the off-normal part; ``Omega``: the recomputed normal frequencies;
        ``tail``: the Fourier tail dropped at ``K_out``.
    """
    H = P0.copy()
    H.hessian = H.hessian.resized(K_out)
    H.hessian.coeffs[(K_out,) * P0.n] += normal_form_hessian(Omega0)
    Hc, tail = conjugate(H, Phi, omega, K_out=K_out)
    Om, rest = split_normal_part(Hc)
    off = float(rest.hessian.majorant().max(initial=0.0))
    return {"offnormal": off, "Omega": Om, "tail": tail, "hamiltonian": rest}


def _initial_check(smp, cfg, params):
    """Remove samples violating the divisor bound before any step (the initial set)."""
    if cfg.excision_check != "all":
        return
    margin = nonresonance_margin(cfg.n, params.K, smp.omega, smp.Omega,
                                 params.policy(cfg.tau, cfg.beta))
    if margin["ratio"] < 1.0:
        smp.alive = False
        smp.excision = dict(margin, nu=0, reason="initial")


def run_sample(smp, cfg, sched):
    """Iterate one sample until its ``<P>`` reaches the target, it is excised, or ``nu_max``."""
    _initial_check(smp, cfg, sched[0])
    for nu in range(cfg.nu_max):
        if not smp.alive or smp.gammas[-1] <= cfg.target or smp.diverged:
            break
        _advance(smp, cfg, sched[nu], sched[nu + 1])
    return smp


def _merge_rows(samples, sched, cfg):
    """Per-step diagnostics merged over samples (reduction of independent pipelines)."""
    rows = []
    w = log_weights(cfg.J_max, 2 * cfg.beta)
    steps = max((len(s.shifts) for s in samples), default=0)
    for nu in range(steps):
        p = sched[nu]
        ran = [s for s in samples if len(s.shifts) > nu]
        gin = [s.gammas[nu] for s in ran]
        gout = [s.gammas[nu + 1] for s in ran if len(s.gammas) > nu + 1]
        excised = sum(1 for s in samples if not s.alive and s.excision and s.excision["nu"] <= nu)
        rows.append({
            "nu": nu, "K": p.K, "alpha": p.alpha, "sigma": p.sigma, "s": p.s,
            "eps_predicted": p.eps,
            "gamma_in": max(gin, default=0.0),
            "gamma_out": max(gout, default=0.0),
            "alive": len(samples) - excised,
            "excised": excised,
            "max_shift_profile": max((np.max(np.abs(s.shifts[nu]) * w) / p.alpha for s in ran),
                                     default=0.0),
            "tail": max((s.tails[nu] for s in ran), default=0.0),
            "diverged": any(s.diverged for s in ran),
        })
    return rows


def run(cfg, keep_state=False):
    """Run the iteration for every frequency sample.

    Samples are independent pipelines (optionally on ``cfg.workers``
    threads); step diagnostics are merged afterwards. Composed maps are kept
    for the first ``cfg.export_maps`` surviving samples only.

    Parameters
    ----------
    cfg : KamConfig or dict
    keep_state : bool
        Keep every composed map and final perturbation (memory heavy).

    Returns
    -------
    RunResult

    Raises
    ------
    EmptyParameterSet
        If every sample is excised.
    """
    if isinstance(cfg, dict):
        cfg = KamConfig.from_dict(cfg)
    V_cfg = dict(cfg.potential)
    V_cfg.setdefault("n", cfg.n)
    V_cfg.setdefault("beta", cfg.beta)
    V = potential_from_config(V_cfg)
    if V.n != cfg.n:
        raise SpecError("potential and run disagree on n")
    smallness_gate(cfg.epsilon, cfg.alpha0, cfg.gamma0, cfg.smallness)
    K0 = cfg.K0 if cfg.K0 is not None else default_K0(cfg.c1, cfg.gamma0)
    sched = schedule(cfg.nu_max + 1, cfg.alpha0, cfg.M0, cfg.epsilon, cfg.s0, cfg.r0, cfg.c1,
                     K0, cfg.K_max, cfg.sigma_rule)
    omegas = (np.atleast_2d(np.asarray(cfg.omegas, dtype=float)) if cfg.omegas is not None
              else frequency_samples(cfg.n, cfg.samples, cfg.seed))
    M = lattice_points(2 * cfg.K_max)
    J = cfg.J_max
    Omega0 = 2.0 * np.arange(1, J + 1) - 1.0

    def pipeline(item):
        i, om = item
        P0 = initial_perturbation(V, cfg, om)
        smp = SampleState(i, om, Omega0.copy(), P0, SymplecticMap.identity(cfg.n, J, M))
        smp.gammas.append(_measure(P0, cfg, sched[0]))
        run_sample(smp, cfg, sched)
        rnf = None
        if smp.alive:
            rnf = _certify(smp, P0, Omega0, cfg, sched)
        return smp, rnf

    items = list(enumerate(omegas))
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            out = list(pool.map(pipeline, items))
    else:
        out = [pipeline(it) for it in items]
    samples = [o[0] for o in out]
    reduced = [o[1] for o in out]
    kept = 0
    for smp, rnf in out:
        if rnf is not None and kept < cfg.export_maps:
            rnf.Phi = smp.Phi
            kept += 1
        if not keep_state:
            smp.Phi = None
            smp.P = None
    if not any(s.alive for s in samples):
        raise EmptyParameterSet("every frequency sample was excised")
    nu_done = max((len(s.shifts) for s in samples), default=0)
    state = KamState(cfg, nu_done, samples, _merge_rows(samples, sched, cfg))
    state.diverged = any(s.diverged for s in samples)
    return RunResult(cfg, sched, state, reduced, {"K0": K0})


def _certify(smp, P0, Omega0, cfg, sched):
    check = from_scratch_residual(P0, Omega0, smp.Phi, smp.omega, cfg.K_max)
    K_fin = sched[len(smp.shifts)].K if smp.shifts else sched[0].K
    margin = nonresonance_margin(cfg.n, K_fin, smp.omega, smp.Omega,
                                 SmallDivisorPolicy(cfg.alpha0 / 2.0, cfg.tau, cfg.beta))
    cert = {
        "steps": len(smp.shifts),
        "final_gamma": smp.gammas[-1],
        "offnormal_from_scratch": check["offnormal"],
        "from_scratch_tail": check["tail"],
        "Omega_from_scratch_gap": float(np.abs(check["Omega"] - smp.Omega).max()),
        "symplecticity_defect": smp.Phi.symplecticity_defect(),
        "block_structure_defect": smp.Phi.block_structure_defect(),
        "nonresonance_margin": margin,
        "frequency_distance": frequency_distance(smp.Omega, Omega0, cfg.beta),
        "omega_shift": 0.0,
    }
    return ReducedNormalForm(smp.omega.copy(), smp.Omega.copy(), None, cert)


def frequency_shift_check(result):
    """Per-step ``max_j |Omega_hat_j| (1 + ln j)^{2 beta} / alpha_nu`` over surviving samples.

    Returns
    -------
    dict
        ``profile``: list per step; ``bounded``: all finite and no step
        exceeds the first by more than a factor 10; ``per_mode``: the largest
        weighted cumulative shift of each mode (for CSV export).
    """
    cfg = result.config
    w = log_weights(cfg.J_max, 2 * cfg.beta)
    alive = result.state.alive
    steps = max((len(s.shifts) for s in alive), default=0)
    prof = []
    for nu in range(steps):
        a = result.schedule[nu].alpha
        vals = [np.max(np.abs(s.shifts[nu]) * w) / a for s in alive if len(s.shifts) > nu]
        prof.append(max(vals, default=0.0))
    Omega0 = 2.0 * np.arange(1, cfg.J_max + 1) - 1.0
    per_mode = np.zeros(cfg.J_max)
    for s in alive:
        per_mode = np.maximum(per_mode, np.abs(s.Omega - Omega0) * w)
    finite = all(np.isfinite(prof))
    bounded = finite and (not prof or prof[0] == 0 or max(prof) <= 10 * prof[0])
    return {"profile": prof, "bounded": bool(bounded), "per_mode": per_mode}


def convergence_constants(result):
    """``log10`` of the measured constant in the super-linear error bound per step.

    The bound is ``exp(7 (8/sigma)^{t1}) <P>^2 / (alpha eta^2) + eta <P>`` with
    ``t1 = tau / (beta - tau)``; evaluated in log space since the exponential
    factor overflows.
    """
    cfg = result.config
    t1 = cfg.tau / (cfg.beta - cfg.tau)
    seq = result.gamma_sequence()
    out = []
    for nu in range(len(seq) - 1):
        p = result.schedule[nu]
        g, g1 = seq[nu], seq[nu + 1]
        if g <= 0 or g1 <= 0 or p.eta <= 0:
            out.append(float("nan"))
            continue
        a = 7.0 * (8.0 / p.sigma) ** t1 + 2 * math.log(g) - math.log(p.alpha) - 2 * math.log(p.eta)
        b = math.log(p.eta) + math.log(g)
        out.append((math.log(g1) - np.logaddexp(a, b)) / math.log(10.0))
    return out
