"""Propagators: exact diagonalisation, Heisenberg-evolved number operator,
the ideal many-body echo and driven Floquet evolution.

Pulse convention: a pulse belonging to time ``m * tau`` is applied right
before that time, so a state recorded at ``m * tau`` already contains it.
One drive period is ``[0, tau) -> e^{i pi N} -> [tau, 2 tau) -> e^{i pi N} e^{i Delta_0 N}``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .hilbert import ElementSet, SectorBasis
from .operators import SparseOperator

log = logging.getLogger(__name__)

DENSE_BUDGET = 20000


class EvolutionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class EigenSystem:
    basis: SectorBasis
    energies: np.ndarray
    vectors: np.ndarray

    def reconstruction_error(self, H: SparseOperator) -> float:
        Q, E = self.vectors, self.energies
        return float(np.abs(H.dense() - (Q * E) @ Q.conj().T).max())

    def evolve(self, psi0: np.ndarray, times) -> np.ndarray:
        """``(len(times), dim)`` array of ``exp(-i H t) psi0``."""
        c = self.vectors.conj().T @ psi0
        times = np.atleast_1d(np.asarray(times, dtype=float))
        phases = np.exp(-1j * np.outer(times, self.energies))
        return (phases * c[None, :]) @ self.vectors.T


def diagonalize(H: SparseOperator, budget: int = DENSE_BUDGET) -> EigenSystem:
    """Dense eigendecomposition of a Hermitian operator."""
    if H.dim > budget:
        raise EvolutionError(
            f"sector dimension {H.dim} exceeds dense budget {budget}; use Krylov propagation"
        )
    A = H.dense()
    if np.iscomplexobj(A) and np.abs(A.imag).max() == 0:
        A = A.real
    E, Q = sla.eigh(A, driver="evd")
    return EigenSystem(H.basis, E, Q)


@dataclass(frozen=True)
class TimeGrid:
    """``M = tau/dt + 1`` equidistant points ``t_1 = 0 ... t_M = tau``."""

    tau: float
    dt: float

    def __post_init__(self):
        if self.tau < 0 or self.dt <= 0:
            raise EvolutionError("need tau >= 0 and dt > 0")
        steps = self.tau / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise EvolutionError(f"dt={self.dt} does not divide tau={self.tau}")

    @property
    def steps(self) -> int:
        return int(round(self.tau / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.tau, self.steps + 1)

    @property
    def M(self) -> int:
        return self.steps + 1


@dataclass(frozen=True, eq=False)
class OperatorTrajectory:
    """Matrix elements of ``N_0(t_i)`` on ``S``; ``values`` has shape ``(|S|, M)``."""

    elements: ElementSet
    grid: TimeGrid
    values: np.ndarray
    trace_subtracted: bool
    trace_density: float

    @property
    def matrix(self) -> np.ndarray:
        return self.values


def number_in_eigenbasis(eig: EigenSystem) -> np.ndarray:
    """``Q^H N Q``; real whenever the eigenvectors are."""
    Q = eig.vectors
    n = eig.basis.counts.astype(float)
    return Q.conj().T @ (n[:, None] * Q)


def _block(E, Mnum, QrT, QcT, t):
    """Dense block ``<rows| N_0(t) |cols>`` from contiguous eigenvector slices."""
    c, s = np.cos(E * t), np.sin(E * t)
    MXr = Mnum @ (c[:, None] * QcT)
    MXi = Mnum @ (-s[:, None] * QcT)
    # multiply by e^{+iEt} on the left
    Zr = c[:, None] * MXr - s[:, None] * MXi
    Zi = s[:, None] * MXr + c[:, None] * MXi
    return QrT.T @ Zr + 1j * (QrT.T @ Zi)


def heisenberg_number(
    eig: EigenSystem,
    grid: TimeGrid,
    S: ElementSet,
    trace_subtract: bool = True,
    times=None,
) -> OperatorTrajectory:
    """``N_0(t) = e^{i H0 t} N e^{-i H0 t}`` on ``S`` for every grid time.

    The identity component ``(Tr N / Tr 1)`` is removed from diagonal elements
    when ``trace_subtract``.
    """
    if S.basis is not eig.basis:
        raise EvolutionError("element set and eigensystem use different bases")
    times = grid.times if times is None else np.asarray(times, dtype=float)
    Mnum = number_in_eigenbasis(eig)
    if np.iscomplexobj(eig.vectors) or np.iscomplexobj(Mnum):
        raise EvolutionError("heisenberg_number expects a real symmetric H0")
    rows_u, r_inv = np.unique(S.rows, return_inverse=True)
    cols_u, c_inv = np.unique(S.cols, return_inverse=True)
    QrT = np.ascontiguousarray(eig.vectors[rows_u, :].T)
    QcT = np.ascontiguousarray(eig.vectors[cols_u, :].T)
    nbar = float(eig.basis.counts.mean())
    diag = S.rows == S.cols
    out = np.empty((len(S), len(times)), dtype=complex)
    for k, t in enumerate(times):
        blk = _block(eig.energies, Mnum, QrT, QcT, t)
        out[:, k] = blk[r_inv, c_inv]
    if trace_subtract:
        out[diag, :] -= nbar
    return OperatorTrajectory(S, grid, out, trace_subtract, nbar)


def heisenberg_series(
    H: SparseOperator, A: SparseOperator, times, order: int | None = None, tol: float = 1e-18
) -> list[np.ndarray]:
    """``e^{iHt} A e^{-iHt}`` by its nested-commutator series (dense, small sectors).

    Entries at Hamming distance ``k`` only receive the ``t^{>=k}`` terms, so
    tiny early-time components are resolved without cancellation error.
    """
    Hd = H.dense()
    Ad = A.dense().astype(complex)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    tmax = float(np.abs(times).max()) if len(times) else 0.0
    hnorm = 2 * float(np.abs(Hd).sum(axis=1).max())
    if order is None:
        order = 1
        while (hnorm * tmax) ** order / math.factorial(order) > tol and order < 200:
            order += 1
        order += 2
    terms = [Ad]
    for _ in range(order):
        X = terms[-1]
        terms.append(Hd @ X - X @ Hd)
    out = []
    for t in times:
        acc = np.zeros_like(Ad)
        # sum small terms first
        for k in range(order, -1, -1):
            acc += (1j * t) ** k / math.factorial(k) * terms[k]
        out.append(acc)
    return out


def echo_unitary(eig: EigenSystem, tau: float) -> float:
    """``max |U_e(2 tau) - 1|`` with ``U_e = e^{-i pi N} e^{-i H0 tau} e^{-i pi N} e^{-i H0 tau}``."""
    if tau < 0:
        raise EvolutionError("tau must be nonnegative")
    Q, E = eig.vectors, eig.energies
    U0 = (Q * np.exp(-1j * E * tau)) @ Q.conj().T
    P = np.exp(-1j * np.pi * eig.basis.counts)
    U = (P[:, None] * U0)
    U = (P[:, None] * U0) @ U
    return float(np.abs(U - np.eye(len(E))).max())


@dataclass(frozen=True)
class DriveSchedule:
    """Continuous profile on ``[0, tau]`` mirrored onto ``[tau, 2 tau]``, pi pulses
    at ``m tau`` and an extra weight ``delta0`` at ``2 m tau``."""

    grid: TimeGrid
    profile: np.ndarray
    delta0: float = 0.0
    pi_pulses: bool = True

    def __post_init__(self):
        prof = np.asarray(self.profile, dtype=float)
        if prof.shape != (self.grid.M,):
            raise EvolutionError(f"profile length {prof.shape} does not match grid ({self.grid.M})")
        if not np.all(np.isfinite(prof)):
            raise EvolutionError("profile must be finite")
        object.__setattr__(self, "profile", prof)

    @property
    def tau(self) -> float:
        return self.grid.tau

    @property
    def period(self) -> float:
        return 2 * self.grid.tau

    def value(self, t) -> np.ndarray:
        """``Delta_p(t)`` for ``t`` anywhere, using ``2 tau`` periodicity and the mirror."""
        t = np.mod(np.asarray(t, dtype=float), self.period)
        t = np.where(t > self.tau, self.period - t, t)
        return np.interp(t, self.grid.times, self.profile)

    def scaled(self, eps: float) -> "DriveSchedule":
        return DriveSchedule(self.grid, eps * self.profile, eps * self.delta0, self.pi_pulses)


def lanczos_expm(
    H, v: np.ndarray, dt: float, tol: float = 1e-10, m_max: int = 40, shift=None
) -> np.ndarray:
    """``exp(-i (H - shift) dt) v`` for Hermitian ``H`` via an adaptive Lanczos basis.

    ``shift`` is an optional ``(coefficient, diagonal)`` pair adding
    ``-coefficient * diag`` to ``H``.
    """
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return np.zeros_like(v, dtype=complex)
    n = len(v)
    m_max = min(m_max, n)
    V = np.zeros((m_max + 1, n), dtype=complex)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    V[0] = v / beta0

    def apply(x):
        y = H @ x
        if shift is not None:
            y = y - shift[0] * (shift[1] * x)
        return y

    for j in range(m_max):
        w = apply(V[j])
        alpha[j] = np.real(np.vdot(V[j], w))
        w = w - alpha[j] * V[j] - (beta[j - 1] * V[j - 1] if j > 0 else 0)
        # full reorthogonalisation; subspaces stay small
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        m = j + 1
        T = np.diag(alpha[:m]) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
        ev, U = np.linalg.eigh(T)
        coef = U @ (np.exp(-1j * ev * dt) * U[0].conj())
        if b < 1e-14 or m == n:
            return beta0 * (V[:m].T @ coef)
        err = b * abs(coef[-1]) * abs(dt)
        if err < tol:
            return beta0 * (V[:m].T @ coef)
        beta[j] = b
        V[j + 1] = w / b
    raise EvolutionError(f"Lanczos did not converge within {m_max} vectors (err={err:.2e})")


@dataclass
class StateTrajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), dim) or (len(times), dim, k)
    labels: list = field(default_factory=list)


def _check_norm(psi: np.ndarray) -> None:
    norms = np.linalg.norm(psi, axis=0)
    if np.any(np.abs(norms - 1) > 1e-8):
        raise EvolutionError("initial state must be normalised")


def propagate_driven(
    state: np.ndarray,
    schedule: DriveSchedule,
    H0: SparseOperator,
    N: SparseOperator,
    n_periods: int,
    stroboscopic_only: bool = False,
    dt: float | None = None,
    method: str = "auto",
    tol: float = 1e-10,
) -> StateTrajectory:
    """Evolve under ``H0 - Delta(t) N`` with exact diagonal pulse unitaries.

    Each step of length ``dt`` uses the midpoint detuning. ``state`` may be a
    vector or a ``(dim, k)`` block of column states. ``method`` is
    ``"krylov"``, ``"dense"`` or ``"auto"`` (dense for blocks or small sectors).
    """
    psi = np.array(state, dtype=complex)
    _check_norm(psi)
    tau = schedule.tau
    dt = schedule.grid.dt if dt is None else dt
    steps = tau / dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise EvolutionError(f"dt={dt} does not divide tau={tau}")
    steps = int(round(steps))
    counts = N.diagonal().real
    if method == "auto":
        method = "dense" if (psi.ndim == 2 or H0.dim <= 600) else "krylov"
    pi_phase = np.exp(1j * np.pi * counts) if schedule.pi_pulses else np.ones_like(counts, dtype=complex)
    end_phase = pi_phase * np.exp(1j * schedule.delta0 * counts)

    H0m = H0.matrix
    if method == "dense":
        H0d = H0.dense()
        cache: dict[float, np.ndarray] = {}

        def step(x, d):
            U = cache.get(d)
            if U is None:
                E, Q = np.linalg.eigh(H0d - d * np.diag(counts))
                U = (Q * np.exp(-1j * E * dt)) @ Q.conj().T
                cache[d] = U
            return U @ x
    elif method == "krylov":
        if psi.ndim != 1:
            raise EvolutionError("Krylov propagation takes a single state vector")

        def step(x, d):
            return lanczos_expm(H0m, x, dt, tol=tol, shift=(d, counts))
    else:
        raise EvolutionError(f"unknown method {method!r}")

    first = schedule.value((np.arange(steps) + 0.5) * dt)
    second = schedule.value(tau + (np.arange(steps) + 0.5) * dt)

    def apply_phase(x, ph):
        return ph[:, None] * x if x.ndim == 2 else ph * x

    times = [0.0]
    out = [psi.copy()]
    t = 0.0
    for m in range(n_periods):
        for half, deltas in enumerate((first, second)):
            for k in range(steps):
                psi = step(psi, float(deltas[k]))
                if k == steps - 1:
                    psi = apply_phase(psi, pi_phase if half == 0 else end_phase)
                t = 2 * m * tau + half * tau + (k + 1) * dt
                if not stroboscopic_only:
                    times.append(t)
                    out.append(psi.copy())
        if stroboscopic_only:
            times.append(2 * (m + 1) * tau)
            out.append(psi.copy())
    return StateTrajectory(np.array(times), np.array(out))


def floquet_unitary(schedule: DriveSchedule, H0: SparseOperator, N: SparseOperator, dt=None) -> np.ndarray:
    """One-period propagator as a dense matrix (small sectors)."""
    eye = np.eye(H0.dim, dtype=complex)
    traj = propagate_driven(eye, schedule, H0, N, 1, stroboscopic_only=True, dt=dt, method="dense")
    return traj.states[-1]


def propagate_static(
    state: np.ndarray,
    H: SparseOperator,
    times,
    eig: EigenSystem | None = None,
    budget: int = DENSE_BUDGET,
    dt_max: float = 0.5,
    tol: float = 1e-10,
) -> StateTrajectory:
    """Evolve under a time-independent ``H``; eigendecomposition when affordable."""
    psi = np.asarray(state, dtype=complex)
    _check_norm(psi)
    times = np.asarray(times, dtype=float)
    if eig is None and H.dim <= budget:
        eig = diagonalize(H, budget)
    if eig is not None:
        return StateTrajectory(times, eig.evolve(psi, times))
    out = []
    t_prev = 0.0
    for t in times:
        span = t - t_prev
        n = max(1, int(math.ceil(abs(span) / dt_max)))
        for _ in range(n):
            psi = lanczos_expm(H.matrix, psi, span / n, tol=tol)
        out.append(psi.copy())
        t_prev = t
    return StateTrajectory(times, np.array(out))


def as_sparse(H) -> sp.csr_matrix:
    return H.matrix if isinstance(H, SparseOperator) else sp.csr_matrix(H)


def spectral_moments(
    H,
    psi0: np.ndarray,
    diagonals: list[np.ndarray],
    times,
    cutoff: float = 1e-10,
    eig: tuple[np.ndarray, np.ndarray] | None = None,
    chunk: int = 2048,
) -> list[np.ndarray]:
    """``<A(t)>`` for diagonal operators using the eigenstates that carry
    weight ``|<E|psi0>|^2 > cutoff``.

    Cheaper than full state reconstruction when long, densely sampled series
    are needed; the discarded weight bounds the error.
    """
    if eig is None:
        A = H.dense() if hasattr(H, "dense") else np.asarray(H)
        E, Q = np.linalg.eigh(A)
    else:
        E, Q = eig
    c = Q.conj().T @ psi0
    keep = np.abs(c) ** 2 > cutoff
    E, Qk, c = E[keep], Q[:, keep], c[keep]
    W = [Qk.conj().T @ (np.asarray(d, dtype=float)[:, None] * Qk) for d in diagonals]
    times = np.asarray(times, dtype=float)
    out = [np.empty(len(times)) for _ in diagonals]
    for s in range(0, len(times), chunk):
        a = np.exp(-1j * np.outer(times[s : s + chunk], E)) * c  # (t, K)
        for k, Wk in enumerate(W):
            out[k][s : s + chunk] = np.einsum("tj,tj->t", a.conj(), a @ Wk.T).real
    return out
