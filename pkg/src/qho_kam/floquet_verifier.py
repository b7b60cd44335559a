"""Independent check of the reduction through the truncated Floquet operator.

The operator ``-i omega.d_theta + T + eps V`` acts on ``sum c_{jk} e^{ik.theta} h_j``
as the Hermitian matrix

    <(j, k)| K |(l, k')> = (k.omega + 2j - 1) delta + eps V_jl(k - k'),

on the box ``j <= J``, ``|k|_inf <= K``. The basis is ordered k-major,
j-minor. Its eigenvalues are compared with ``k.omega + Omega*_j`` from the
reduced normal form, and the time evolution of the driven oscillator is
integrated directly (Strang splitting) to follow Sobolev norms.
"""

from dataclasses import dataclass, field
import csv
import io
import math

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import BudgetError, QhoKamError, SpecError
from .potential_model import matrix_elements, mode_grid

DENSE_LIMIT = 4000
SPARSE_LIMIT = 200_000


def _k_box(n, K):
    """Modes of the box in basis order (C order over ``k + K``)."""
    return mode_grid(n, K)


def _potential_width(V, default=8):
    if V.fourier_profiles is not None:
        return max(int(np.max(np.abs(k))) for k, _ in V.fourier_profiles)
    return default


@dataclass
class FloquetMatrix:
    """Truncated Floquet operator.

    Attributes
    ----------
    matrix : ndarray or scipy.sparse matrix
    n, J, K : int
    omega : ndarray
    epsilon : float
    diagonal : ndarray
        ``k.omega + 2j - 1`` in basis order.
    coupling : ndarray
        ``V_jl(q)`` for ``|q|_inf <= 2K`` with ``j <= J + pad`` rows (used for
        the truncation-tail estimates), shape ``(4K+1,)*n + (J+pad, J)``.
    """

    matrix: object
    n: int
    J: int
    K: int
    omega: np.ndarray
    epsilon: float
    diagonal: np.ndarray
    coupling: np.ndarray = None

    @property
    def dim(self):
        return self.J * (2 * self.K + 1) ** self.n

    @property
    def sparse(self):
        return sps.issparse(self.matrix)

    def labels(self):
        """``(j, k)`` of every basis vector, as arrays ``j`` (dim,) and ``k`` (dim, n)."""
        ks = _k_box(self.n, self.K)
        j = np.tile(np.arange(1, self.J + 1), ks.shape[0])
        k = np.repeat(ks, self.J, axis=0)
        return j, k

    def hermiticity_residual(self):
        A = self.matrix
        D = A - A.conj().T
        if sps.issparse(D):
            return float(abs(D).max()) if D.nnz else 0.0
        return float(np.abs(D).max())


def assemble_floquet(V, omega, epsilon, J, K, pad=None, rule=None):
    """Assemble the truncated Floquet operator.

    Parameters
    ----------
    V : Potential
    omega : array_like
    epsilon : float
    J, K : int
        Mode and Fourier cutoffs.
    pad : int, optional
        Extra Hermite rows computed for the mode-truncation tail
        (default ``max(5, J // 8)``).

    Raises
    ------
    BudgetError
        If the dimension exceeds ``SPARSE_LIMIT``.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    n = omega.size
    if V.n != n:
        raise SpecError("potential and omega disagree on n")
    dim = J * (2 * K + 1) ** n
    if dim > SPARSE_LIMIT:
        raise BudgetError(f"Floquet dimension {dim} exceeds {SPARSE_LIMIT}")
    pad = max(5, J // 8) if pad is None else pad
    W = min(2 * K, max(_potential_width(V), 1))
    Vhat = matrix_elements(V, J + pad, W, omega, rule=rule).coeffs
    coupling = np.zeros((4 * K + 1,) * n + (J + pad, J), dtype=complex)
    inner = tuple(slice(2 * K - W, 2 * K + W + 1) for _ in range(n))
    coupling[inner] = Vhat[..., :, :J]
    ks = _k_box(n, K)
    diag = (ks @ omega)[:, None] + (2.0 * np.arange(1, J + 1) - 1.0)[None, :]
    diag = diag.reshape(-1)
    nk = ks.shape[0]
    blocks = coupling[..., :J, :]
    if dim <= DENSE_LIMIT:
        A = np.zeros((dim, dim), dtype=complex)
        for a in range(nk):
            diff = ks[a] - ks + 2 * K
            sub = blocks[tuple(diff.T)]
            A[a * J:(a + 1) * J, :] = epsilon * np.concatenate(list(sub), axis=1)
        A[np.diag_indices(dim)] += diag
    else:
        rows, cols, vals = [], [], []
        jj, ll = np.meshgrid(np.arange(J), np.arange(J), indexing="ij")
        for a in range(nk):
            diff = ks[a] - ks
            near = np.abs(diff).max(axis=1) <= W
            for b in np.nonzero(near)[0]:
                blk = blocks[tuple(diff[b] + 2 * K)]
                nz = blk != 0
                if epsilon != 0 and nz.any():
                    rows.append(a * J + jj[nz])
                    cols.append(b * J + ll[nz])
                    vals.append(epsilon * blk[nz])
        rows.append(np.arange(dim))
        cols.append(np.arange(dim))
        vals.append(diag.astype(complex))
        A = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(dim, dim))
    return FloquetMatrix(A, n, J, K, omega, float(epsilon), diag, coupling)


@dataclass
class Spectrum:
    """Quasi-energies with dominant labels.

    Attributes
    ----------
    values : ndarray
        Sorted eigenvalues.
    j, k : ndarray
        Dominant basis label of each eigenvector.
    weight : ndarray
        Squared modulus of the dominant component.
    trusted : ndarray of bool
        Label inside the interior of the box.
    k_tail, j_tail : ndarray
        Norm of ``K v`` leaving the box across the Fourier and the mode
        boundary (residual estimates of the truncation error).
    clusters : list of list of int
        Groups of eigenvalues closer than ``cluster_tol``.
    """

    values: np.ndarray
    j: np.ndarray
    k: np.ndarray
    weight: np.ndarray
    trusted: np.ndarray
    k_tail: np.ndarray
    j_tail: np.ndarray
    clusters: list = field(default_factory=list)
    omega: np.ndarray = None
    margins: tuple = ()

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "j", "k", "weight", "trusted", "k_tail", "j_tail"])
        for i in range(self.values.size):
            w.writerow([f"{self.values[i]:.17g}", int(self.j[i]),
                        " ".join(str(int(v)) for v in self.k[i]), f"{self.weight[i]:.6g}",
                        int(self.trusted[i]), f"{self.k_tail[i]:.6g}", f"{self.j_tail[i]:.6g}"])
        return buf.getvalue()


def trust_margins(J, K):
    """``(m_j, m_k)``: labels need ``j <= J - m_j`` and ``|k|_inf <= K - m_k``."""
    return max(5, J // 8), K // 4


def _tails(F, vecs):
    """Outgoing residual norms of eigenvectors across the k and j boundaries."""
    n, J, K = F.n, F.J, F.K
    nev = vecs.shape[1]
    v = vecs.reshape((2 * K + 1,) * n + (J, nev))
    C = F.coupling
    W = 2 * K
    ext = np.zeros((6 * K + 1,) * n + (J, nev), dtype=complex)
    nonzero = [q for q in np.ndindex(*C.shape[:n]) if np.any(C[q][:J])]
    for q in nonzero:
        shift = np.asarray(q) - W
        dst = tuple(slice(2 * K + s, 2 * K + s + 2 * K + 1) for s in shift)
        ext[dst] += np.einsum("jl,...ln->...jn", C[q][:J], v)
    ext[tuple(slice(2 * K, 4 * K + 1) for _ in range(n))] = 0.0
    k_tail = F.epsilon * np.sqrt((np.abs(ext) ** 2).reshape(-1, nev).sum(axis=0))
    # rows beyond J that the truncated basis cannot see
    out = np.zeros((2 * K + 1,) * n + (C.shape[-2] - J, nev), dtype=complex)
    for q in nonzero:
        shift = np.asarray(q) - W
        src, dst = [], []
        for s in shift:
            lo, hi = max(0, -s), min(2 * K + 1, 2 * K + 1 - s)
            src.append(slice(lo, hi))
            dst.append(slice(lo + s, hi + s))
        if all(sl.stop > sl.start for sl in src):
            out[tuple(dst)] += np.einsum("jl,...ln->...jn", C[q][J:], v[tuple(src)])
    j_tail = F.epsilon * np.sqrt((np.abs(out) ** 2).reshape(-1, nev).sum(axis=0))
    return k_tail, j_tail


def quasienergies(F, cluster_tol=1e-9, window=None):
    """Eigenvalues of the truncated operator labelled by eigenvector dominance.

    Parameters
    ----------
    F : FloquetMatrix
    cluster_tol : float
        Eigenvalues closer than this are grouped (rational ``omega`` gives
        large clusters).
    window : (center, count), optional
        Required for sparse matrices: ``count`` eigenvalues nearest ``center``
        by shift-invert Lanczos.

    Raises
    ------
    QhoKamError
        If the eigensolver fails.
    BudgetError
        For a sparse matrix without ``window``.
    """
    try:
        if F.sparse:
            if window is None:
                raise BudgetError(f"full spectrum of dimension {F.dim} needs the dense path")
            center, count = window
            w, vecs = spla.eigsh(F.matrix, k=int(count), sigma=float(center), which="LM")
            order = np.argsort(w)
            w, vecs = w[order], vecs[:, order]
        else:
            w, vecs = sla.eigh(F.matrix)
    except (np.linalg.LinAlgError, spla.ArpackError) as err:
        raise QhoKamError(f"eigensolver failed: {err}") from err
    jl, kl = F.labels()
    prob = np.abs(vecs) ** 2
    dom = np.argmax(prob, axis=0)
    mj, mk = trust_margins(F.J, F.K)
    j, k = jl[dom], kl[dom]
    trusted = (j <= F.J - mj) & (np.abs(k).max(axis=1) <= F.K - mk)
    k_tail, j_tail = _tails(F, vecs)
    clusters, cur = [], [0]
    for i in range(1, w.size):
        if w[i] - w[i - 1] < cluster_tol:
            cur.append(i)
        else:
            if len(cur) > 1:
                clusters.append(cur)
            cur = [i]
    if len(cur) > 1:
        clusters.append(cur)
    return Spectrum(w, j, k, prob[dom, np.arange(w.size)], trusted, k_tail, j_tail, clusters,
                    F.omega, (mj, mk))


def _predict(omega, Omega, j, k):
    return k @ omega + np.asarray(Omega)[j - 1]


def compare_reduction(rnf, spec, tol_floor=1e-10, tail_factor=5.0, inconclusive_at=0.2):
    """Compare trusted quasi-energies with ``k.omega + Omega*_j``.

    A trusted eigenvalue is label-matched when the prediction of its own
    label is the nearest one among all labels of the box (ties within
    ``1e-12``). The deviation is reported over matched labels; the set
    distance (nearest prediction of any label) is reported over all trusted
    eigenvalues.

    Parameters
    ----------
    rnf : ReducedNormalForm or (omega, Omega)
    spec : Spectrum

    Returns
    -------
    dict
        ``max_deviation``, ``set_deviation``, ``match_rate``, ``tolerance``
        (``max(tol_floor, tail_factor * max k_tail)`` over trusted labels),
        ``ok``, ``inconclusive``, ``trusted`` (count).
    """
    omega, Omega = (rnf.omega, rnf.Omega) if hasattr(rnf, "Omega") else rnf
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    Omega = np.asarray(Omega, dtype=float)
    if not np.allclose(omega, spec.omega, rtol=0, atol=1e-15):
        raise SpecError("reduction and spectrum use different omega")
    J = int(spec.j.max())
    if Omega.size < J:
        raise SpecError(f"reduction has {Omega.size} modes, spectrum needs {J}")
    t = spec.trusted
    if not t.any():
        return {"max_deviation": float("nan"), "set_deviation": float("nan"), "match_rate": 0.0,
                "tolerance": tol_floor, "ok": False, "inconclusive": True, "trusted": 0}
    lam, j, k = spec.values[t], spec.j[t], spec.k[t]
    own = _predict(omega, Omega, j, k)
    n = omega.size
    Kb = int(np.abs(spec.k).max())
    ks = mode_grid(n, Kb)
    allpred = np.sort(((ks @ omega)[:, None] + Omega[None, :J]).ravel())
    pos = np.clip(np.searchsorted(allpred, lam), 1, allpred.size - 1)
    nearest = np.minimum(np.abs(allpred[pos] - lam), np.abs(allpred[pos - 1] - lam))
    dev = np.abs(lam - own)
    matched = dev <= nearest + 1e-12
    rate = float(matched.mean())
    tol = max(tol_floor, tail_factor * float(spec.k_tail[t].max()))
    max_dev = float(dev[matched].max()) if matched.any() else float("nan")
    return {"max_deviation": max_dev, "set_deviation": float(nearest.max()), "match_rate": rate,
            "tolerance": tol, "ok": bool(matched.any() and max_dev <= tol),
            "inconclusive": bool(1.0 - rate > inconclusive_at), "trusted": int(t.sum()),
            "max_j_tail": float(spec.j_tail[t].max())}


def shift_symmetry_defect(spec):
    """Largest ``|lambda(j, k + e_m) - lambda(j, k) - omega_m|`` over interior label pairs."""
    t = spec.trusted
    table = {(int(j), tuple(int(v) for v in k)): lam
             for lam, j, k in zip(spec.values[t], spec.j[t], spec.k[t])}
    worst = 0.0
    for (j, k), lam in table.items():
        for m, om in enumerate(spec.omega):
            k2 = list(k)
            k2[m] += 1
            other = table.get((j, tuple(k2)))
            if other is not None:
                worst = max(worst, abs(other - lam - om))
    return worst


# ----------------------------------------------------------------------------
# time evolution


@dataclass
class SobolevTrace:
    """``||u(t)||_{H^p}`` (coefficient form ``sqrt(sum j^p |u_j|^2)``) along a trajectory."""

    times: np.ndarray
    values: np.ndarray
    p: float
    l2: np.ndarray
    states: np.ndarray = None

    @property
    def ratio_deviation(self):
        """``max_t | ||u(t)|| / ||u_0|| - 1 |``."""
        return float(np.abs(self.values / self.values[0] - 1.0).max())

    @property
    def l2_drift(self):
        return float(np.abs(self.l2 - self.l2[0]).max())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "hp_norm", "l2_norm"])
        for t, v, l in zip(self.times, self.values, self.l2):
            w.writerow([f"{t:.17g}", f"{v:.17g}", f"{l:.17g}"])
        return buf.getvalue()


def sobolev_norm(u, p):
    j = np.arange(1, u.shape[-1] + 1)
    return np.sqrt((j ** p * np.abs(u) ** 2).sum(axis=-1))


def _potential_matrices(Vhat, n, W, theta):
    """``V(theta) = sum_q Vhat_q e^{i q.theta}`` for a batch of angles, shape ``(T, J, J)``."""
    qs = mode_grid(n, W)
    phase = np.exp(1j * theta @ qs.T)
    flat = Vhat.reshape(qs.shape[0], *Vhat.shape[-2:])
    keep = [i for i in range(qs.shape[0]) if np.any(flat[i])]
    return np.einsum("tq,qjl->tjl", phase[:, keep], flat[keep])


def evolve(u0, V, omega, epsilon, T, dt, p=2.0, record_every=None, keep_states=False,
           chunk=2048, rule=None):
    """Integrate ``i u' = (T + eps V(., omega t)) u`` in the Hermite basis.

    Strang splitting: half-steps of the exact phases ``e^{-i dt (2j-1) / 2}``
    around a Cayley step ``(I + i dt eps V/2)^{-1} (I - i dt eps V/2)`` with
    ``V`` at the midpoint angle. Both factors are unitary, so the L2 norm is
    preserved up to rounding.

    Parameters
    ----------
    u0 : array_like
        Initial coefficients; its length sets the mode cutoff ``J``.
    T, dt : float
        Final time and step, ``dt (2J - 1) <= 0.1``.
    p : float
        Sobolev index of the recorded norm.
    record_every : int, optional
        Steps between trace points (default: about 1000 points).

    Raises
    ------
    SpecError
        On a step-size violation.
    """
    u = np.asarray(u0, dtype=complex).copy()
    J = u.size
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    n = omega.size
    if dt <= 0 or dt * (2 * J - 1) > 0.1 + 1e-15:
        raise SpecError(f"dt (2J - 1) = {dt * (2 * J - 1):.3g} exceeds 0.1")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise SpecError("T must be a whole number of steps")
    record_every = max(1, steps // 1000) if record_every is None else record_every
    W = _potential_width(V)
    Vhat = matrix_elements(V, J, W, omega, rule=rule).coeffs
    lam = 2.0 * np.arange(1, J + 1) - 1.0
    half = np.exp(-0.5j * dt * lam)
    eye = np.eye(J)
    times, norms, l2, states = [0.0], [sobolev_norm(u, p)], [np.linalg.norm(u)], [u.copy()]
    done = 0
    while done < steps:
        m = min(chunk, steps - done)
        tm = (done + np.arange(m) + 0.5) * dt
        A = 0.5j * dt * epsilon * _potential_matrices(Vhat, n, W, tm[:, None] * omega[None, :])
        U = np.linalg.solve(eye + A, eye - A)
        U = half[None, :, None] * U * half[None, None, :]
        for i in range(m):
            u = U[i] @ u
            step = done + i + 1
            if step % record_every == 0 or step == steps:
                times.append(step * dt)
                norms.append(sobolev_norm(u, p))
                l2.append(np.linalg.norm(u))
                if keep_states:
                    states.append(u.copy())
        done += m
    return SobolevTrace(np.array(times), np.array(norms), p, np.array(l2),
                        np.array(states) if keep_states else None)


def reconstruct(rnf, u0, times):
    """Solution from the reduction: ``u(t) = L11(omega t) e^{-i Omega* t} L11(0)^{-1} u0``.

    ``L11`` is the ``z``-block of the composed conjugating map, evaluated by
    its Fourier series. Uses the first ``len(u0)`` modes.
    """
    if rnf.Phi is None:
        raise SpecError("the reduction carries no exported map")
    Phi = rnf.Phi
    Jm = Phi.J
    u0 = np.asarray(u0, dtype=complex)
    J = u0.size
    if J > Jm:
        raise SpecError("initial state has more modes than the map")
    Kf = (Phi.M - 1) // 2
    coef = Phi.fourier(Kf).coeffs[..., :Jm, :Jm]
    qs = mode_grid(Phi.n, Kf)
    flat = coef.reshape(qs.shape[0], Jm, Jm)

    def L11(theta):
        ph = np.exp(1j * qs @ np.atleast_1d(theta))
        return np.eye(Jm) + np.einsum("q,qjl->jl", ph, flat)

    w0 = np.linalg.solve(L11(np.zeros(Phi.n)), np.concatenate([u0, np.zeros(Jm - J)]))
    out = []
    for t in times:
        w = np.exp(-1j * rnf.Omega[:Jm] * t) * w0
        out.append((L11(rnf.omega * t) @ w)[:J])
    return np.array(out)


def measured_constant(trace, epsilon):
    """``max_t | ||u(t)||_{H^p} / ||u_0||_{H^p} - 1 | / eps``."""
    if epsilon == 0:
        return 0.0
    return trace.ratio_deviation / epsilon


def smooth_initial_state(J, modes=5, seed=0):
    """Normalized state on the first ``modes`` Hermite functions with seeded phases."""
    rng = np.random.default_rng(seed)
    u = np.zeros(J, dtype=complex)
    m = min(modes, J)
    u[:m] = np.exp(2j * np.pi * rng.random(m)) / np.arange(1, m + 1)
    return u / np.linalg.norm(u)
