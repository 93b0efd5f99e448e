"""Detuning-profile optimisation and effective Hamiltonians.

The first-order effective Hamiltonian of a symmetric profile is
``H_eff = -(dt/tau) sum_i Delta_p(t_i) N_0(t_i) - Delta_0/(2 tau) N``.
The profile minimises ``||T - H_eff||_S^2 + lambda * dt * sum_i Delta_p(t_i)^2``
where ``||.||_S`` runs over the selected matrix elements only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .evolution import EigenSystem, OperatorTrajectory, TimeGrid, heisenberg_number, number_in_eigenbasis
from .hilbert import ElementSet, SectorBasis
from .operators import SparseOperator

log = logging.getLogger(__name__)

REALNESS_TOL = 1e-10


class EngineeringError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Dense Hermitian operator on a sector (effective Hamiltonians are dense)."""

    basis: SectorBasis
    array: np.ndarray
    name: str = ""

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def matrix(self) -> np.ndarray:
        return self.array

    def dense(self) -> np.ndarray:
        return self.array

    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.array)

    def __matmul__(self, other):
        return self.array @ other

    def hermiticity_error(self) -> float:
        return float(np.abs(self.array - self.array.conj().T).max())

    def number_change(self) -> np.ndarray:
        n = self.basis.counts
        return n[:, None] - n[None, :]


def sector_trace_density(op, basis: SectorBasis) -> float:
    """``Tr[A] / Tr[1]`` over the sector."""
    return complex(np.sum(op.diagonal())).real / basis.dim


@dataclass(frozen=True, eq=False)
class TargetOperator:
    """Weighted sum of named generators restricted to ``S``."""

    coefficients: dict
    elements: ElementSet
    values: np.ndarray
    trace_density: float

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def build_target(
    elements: ElementSet,
    generators: dict[str, SparseOperator],
    coefficients: dict[str, float],
    trace_subtract: bool = True,
) -> TargetOperator:
    """``T = sum_k c_k G_k`` on ``S`` with its trace part removed.

    ``generators`` maps names (``"N"``, ``"O6"``, ...) to operators on
    ``elements.basis``.
    """
    basis = elements.basis
    vals = np.zeros(len(elements), dtype=complex)
    trace = 0.0
    for name, c in coefficients.items():
        if c == 0:
            continue
        if name not in generators:
            raise EngineeringError(f"no generator named {name!r}")
        G = generators[name]
        if G.basis is not basis:
            raise EngineeringError(f"generator {name!r} lives on another basis")
        vals += c * elements.values(G.matrix)
        trace += c * sector_trace_density(G, basis)
    if trace_subtract:
        vals[elements.rows == elements.cols] -= trace
    else:
        trace = 0.0
    if not np.all(np.isfinite(vals)):
        raise EngineeringError("target has non-finite entries")
    return TargetOperator(dict(coefficients), elements, vals, trace)


@dataclass(frozen=True, eq=False)
class RidgeProblem:
    N0: np.ndarray  # (|S|, M)
    T: np.ndarray  # (|S|,)
    lam: float
    tau: float
    dt: float

    def __post_init__(self):
        N0 = np.asarray(self.N0)
        T = np.asarray(self.T)
        if N0.ndim != 2 or T.shape != (N0.shape[0],):
            raise EngineeringError(f"dimension mismatch: N0 {N0.shape}, T {T.shape}")
        if self.lam < 0 or self.tau <= 0 or self.dt <= 0:
            raise EngineeringError("need lambda >= 0, tau > 0, dt > 0")
        object.__setattr__(self, "N0", N0)
        object.__setattr__(self, "T", T)

    @classmethod
    def from_trajectory(cls, traj: OperatorTrajectory, target: TargetOperator, lam: float):
        if traj.elements is not target.elements and not (
            np.array_equal(traj.elements.rows, target.elements.rows)
            and np.array_equal(traj.elements.cols, target.elements.cols)
        ):
            raise EngineeringError("trajectory and target use different element sets")
        return cls(traj.values, target.values, lam, traj.grid.tau, traj.grid.dt)

    def with_lambda(self, lam: float) -> "RidgeProblem":
        return RidgeProblem(self.N0, self.T, lam, self.tau, self.dt)

    @property
    def weight(self) -> float:
        return self.dt / self.tau

    def gram(self) -> np.ndarray:
        """Real part of ``N0^H N0`` after checking the imaginary part vanishes."""
        G = self.N0.conj().T @ self.N0
        scale = max(1.0, float(np.abs(G).max()))
        if np.abs(G.imag).max() > 1e-9 * scale:
            raise EngineeringError("N0^H N0 is not real; parity structure violated")
        return G.real

    def effective(self, profile: np.ndarray) -> np.ndarray:
        return -self.weight * (self.N0 @ profile)

    def cost(self, profile: np.ndarray) -> float:
        r = self.T - self.effective(profile)
        return float(np.vdot(r, r).real + self.lam * self.dt * np.dot(profile, profile))


@dataclass
class SVDSummary:
    singular_values: np.ndarray
    profiles: np.ndarray  # (M, k) real right-singular vectors
    hamiltonians: np.ndarray  # (|S|, k) left-singular vectors
    rank: int

    def zero_crossings(self, k: int | None = None) -> np.ndarray:
        P = self.profiles if k is None else self.profiles[:, :k]
        return np.array([count_sign_changes(P[:, j]) for j in range(P.shape[1])])


@dataclass
class EngineeringReport:
    profile: np.ndarray
    hamiltonian: np.ndarray
    q_angle: float
    q_delta: float
    residual: float
    profile_norm: float
    cost: float
    lam: float
    tau: float
    dt: float
    pseudo_inverse: bool = False
    svd: SVDSummary | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "lambda": self.lam,
            "tau": self.tau,
            "dt": self.dt,
            "q_angle": self.q_angle,
            "q_delta": self.q_delta,
            "residual": self.residual,
            "profile_norm": self.profile_norm,
            "cost": self.cost,
            "pseudo_inverse": self.pseudo_inverse,
            "profile": self.profile.tolist(),
        }
        if self.svd is not None:
            out["top_singular_values"] = self.svd.singular_values[:14].tolist()
        out.update(self.extras)
        return out


def profile_norm(profile: np.ndarray, dt: float) -> float:
    """Discrete ``(int_0^tau |Delta_p|^2 dt)^{1/2}`` consistent with the cost."""
    return float(np.sqrt(dt * np.dot(profile, profile)))


def inner(A: np.ndarray, B: np.ndarray) -> float:
    """Real part of ``sum_S conj(A) B``."""
    return float(np.vdot(A, B).real)


def q_metrics(T: np.ndarray, H: np.ndarray, profile: np.ndarray, dt: float) -> tuple[float, float]:
    """Alignment ``Q_angle`` and efficiency ``Q_delta`` of ``H`` with ``T`` on ``S``."""
    nT = np.linalg.norm(T)
    nH = np.linalg.norm(H)
    nP = profile_norm(profile, dt)
    if nT == 0 or nH == 0 or nP == 0:
        raise EngineeringError("q metrics need nonzero target, Hamiltonian and profile")
    th = inner(T, H)
    return th / (nT * nH), th / (nT * nP)


def _real_rhs(problem: RidgeProblem) -> np.ndarray:
    b = problem.N0.conj().T @ problem.T
    scale = max(1.0, float(np.abs(b).max()))
    if np.abs(b.imag).max() > REALNESS_TOL * scale:
        raise EngineeringError(
            f"N0^H T has imaginary part {np.abs(b.imag).max():.2e}; target breaks parity structure"
        )
    return b.real


def solve_ridge(
    problem: RidgeProblem, rcond: float = 1e-10, with_svd: bool = False
) -> EngineeringReport:
    """Closed-form ridge solution via Cholesky of the normal matrix.

    ``lambda = 0`` falls back to a truncated-SVD pseudo-inverse keeping
    singular values above ``rcond`` times the largest.
    """
    w = problem.weight
    b = _real_rhs(problem)
    pinv = False
    if problem.lam > 0:
        A = w * problem.gram() + problem.tau * problem.lam * np.eye(problem.N0.shape[1])
        try:
            c = sla.cho_factor(A, lower=False, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise EngineeringError(f"normal matrix not positive definite: {exc}") from exc
        profile = -sla.cho_solve(c, b)
    else:
        pinv = True
        G = w * problem.gram()
        ev, V = np.linalg.eigh(G)
        keep = ev > rcond * max(ev.max(), 0.0)
        if not np.any(keep):
            raise EngineeringError("normal matrix is numerically zero")
        profile = -(V[:, keep] @ ((V[:, keep].T @ b) / ev[keep]))
    profile = np.asarray(profile, dtype=float)
    H = problem.effective(profile)
    if np.linalg.norm(problem.T) > 0 and np.linalg.norm(H) > 0:
        qa, qd = q_metrics(problem.T, H, profile, problem.dt)
    else:
        qa = qd = 0.0
    report = EngineeringReport(
        profile=profile,
        hamiltonian=H,
        q_angle=qa,
        q_delta=qd,
        residual=float(np.linalg.norm(problem.T - H)),
        profile_norm=profile_norm(profile, problem.dt),
        cost=problem.cost(profile),
        lam=problem.lam,
        tau=problem.tau,
        dt=problem.dt,
        pseudo_inverse=pinv,
    )
    if with_svd:
        report.svd = svd_analysis(problem.N0)
    return report


def count_sign_changes(x: np.ndarray, rel_tol: float = 1e-8) -> int:
    x = np.asarray(x, dtype=float)
    x = x[np.abs(x) > rel_tol * np.abs(x).max()]
    return int(np.count_nonzero(np.diff(np.sign(x)) != 0))


def svd_analysis(N0: np.ndarray, k: int | None = None) -> SVDSummary:
    """Singular values of ``N0`` with real right-singular vectors (profiles).

    ``N0^H N0`` is real, so its eigenvectors give a real ``V``; the left
    vectors follow as ``N0 V / D``.
    """
    G = N0.conj().T @ N0
    ev, V = np.linalg.eigh(G.real)
    order = np.argsort(ev)[::-1]
    ev = np.clip(ev[order], 0.0, None)
    V = V[:, order]
    D = np.sqrt(ev)
    tol = D[0] * max(N0.shape) * np.finfo(float).eps if len(D) else 0.0
    rank = int(np.count_nonzero(D > tol))
    k = len(D) if k is None else min(k, len(D))
    # fix the sign so every profile starts non-negative
    V = V[:, :k]
    s = np.sign(V[0, :])
    s[s == 0] = 1
    V = V * s
    W = np.zeros((N0.shape[0], k), dtype=N0.dtype)
    nz = D[:k] > tol
    W[:, nz] = (N0 @ V[:, nz]) / D[:k][nz]
    return SVDSummary(D[:k], V, W, rank)


def effective_on_elements(traj: OperatorTrajectory, profile: np.ndarray, delta0: float = 0.0) -> np.ndarray:
    """Effective Hamiltonian restricted to ``S``."""
    profile = np.asarray(profile, dtype=float)
    if profile.shape != (traj.grid.M,):
        raise EngineeringError("profile length does not match the time grid")
    grid = traj.grid
    H = -(grid.dt / grid.tau) * (traj.values @ profile)
    if delta0:
        el = traj.elements
        diag = el.rows == el.cols
        H[diag] -= delta0 / (2 * grid.tau) * el.basis.counts[el.rows[diag]]
    return H


def build_effective_hamiltonian(
    eig: EigenSystem,
    grid: TimeGrid,
    profile: np.ndarray,
    delta0: float = 0.0,
    trace_subtract: bool = True,
    chunk: int = 32,
) -> DenseOperator:
    """Effective Hamiltonian on the whole sector as a dense Hermitian matrix.

    Uses ``sum_i w_i N_0(t_i) = Q (M o K) Q^H`` with ``M = Q^H N Q`` and
    ``K_jk = sum_i w_i exp(i (E_j - E_k) t_i)``.
    """
    profile = np.asarray(profile, dtype=float)
    if profile.shape != (grid.M,):
        raise EngineeringError("profile length does not match the time grid")
    E, Q = eig.energies, eig.vectors
    w = -(grid.dt / grid.tau) * profile
    Mnum = number_in_eigenbasis(eig)
    D = len(E)
    K = np.zeros((D, D), dtype=complex)
    times = grid.times
    for s in range(0, len(times), chunk):
        ph = np.exp(1j * np.outer(times[s : s + chunk], E))  # (c, D)
        K += (ph.conj().T * w[s : s + chunk]) @ ph
    # K_jk built as sum_i w_i e^{-iE_j t} e^{iE_k t}; transpose gives e^{i(E_j-E_k)t}
    K = K.T
    core = Mnum * K
    H = Q @ core @ Q.conj().T
    H = 0.5 * (H + H.conj().T)
    n = eig.basis.counts.astype(float)
    if trace_subtract:
        H[np.diag_indices(D)] -= w.sum() * n.mean()
    if delta0:
        H[np.diag_indices(D)] -= delta0 / (2 * grid.tau) * n
    return DenseOperator(eig.basis, H, "H_eff")


def rescale_offdiagonal(H, N: SparseOperator, nu: float) -> DenseOperator:
    """``nu H + (1 - nu) (N, H) / ||N||^2 N`` with the full-sector trace product."""
    Hd = H.dense() if hasattr(H, "dense") else np.asarray(H)
    n = N.diagonal().real
    coef = np.real(np.sum(n * np.diagonal(Hd))) / np.dot(n, n)
    out = nu * Hd.astype(complex)
    out[np.diag_indices(len(n))] += (1 - nu) * coef * n
    return DenseOperator(N.basis, out, f"H_eff(nu={nu})")


def parity_gauge(H, counts: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Real symmetric ``D^H H D`` with ``D = diag(i^N)``.

    Elements between number sectors whose difference is odd are imaginary and
    the rest real, so the gauge removes every phase. Spectra and diagonal
    observables are unchanged; real matrices diagonalise several times faster.
    """
    Hd = H.dense() if hasattr(H, "dense") else np.asarray(H)
    ph = (1j) ** (np.asarray(counts) % 4)
    G = ph.conj()[:, None] * Hd * ph[None, :]
    scale = max(1.0, float(np.abs(G).max()))
    if np.abs(G.imag).max() > tol * scale:
        raise EngineeringError("operator lacks the parity structure needed for a real gauge")
    return np.ascontiguousarray(G.real)


def number_overlap(H, N: SparseOperator) -> float:
    Hd = H.dense() if hasattr(H, "dense") else np.asarray(H)
    return float(np.real(np.sum(N.diagonal().real * np.diagonal(Hd))))


@dataclass
class SweepRow:
    lam: float
    tau: float
    q_angle: float
    q_delta: float
    profile_norm: float
    residual: float


def hyperparameter_sweep(
    eig: EigenSystem,
    elements: ElementSet,
    target: TargetOperator,
    lambdas,
    taus,
    dt: float,
) -> list[SweepRow]:
    """Solve on every ``(lambda, tau)`` grid point; rows sorted by ``(tau, lambda)``.

    ``N_0`` is evaluated once on the longest period and sliced for shorter ones.
    """
    lambdas = sorted(float(x) for x in lambdas)
    taus = sorted(float(x) for x in taus)
    if not lambdas or not taus:
        raise EngineeringError("sweep grids must be nonempty")
    big = TimeGrid(taus[-1], dt)
    traj = heisenberg_number(eig, big, elements)
    rows = []
    for tau in taus:
        g = TimeGrid(tau, dt)
        N0 = traj.values[:, : g.M]
        for lam in lambdas:
            rep = solve_ridge(RidgeProblem(N0, target.values, lam, tau, dt))
            rows.append(SweepRow(lam, tau, rep.q_angle, rep.q_delta, rep.profile_norm, rep.residual))
    return rows


def monotonicity_violations(rows: list[SweepRow], tol: float = 1e-10) -> dict:
    """Largest increase of ``Q_angle`` and largest decrease of ``Q_delta`` along ``lambda``."""
    worst_a = worst_d = 0.0
    count = 0
    for tau in sorted({r.tau for r in rows}):
        seq = sorted((r for r in rows if r.tau == tau), key=lambda r: r.lam)
        if len(seq) < 2:
            continue
        up = np.diff([r.q_angle for r in seq])
        down = -np.diff([r.q_delta for r in seq])
        worst_a = max(worst_a, float(up.max()))
        worst_d = max(worst_d, float(down.max()))
        count += int(np.count_nonzero(up > tol) + np.count_nonzero(down > tol))
    return {"q_angle_increase": worst_a, "q_delta_decrease": worst_d, "count": count}
