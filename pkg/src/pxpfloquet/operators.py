"""Sparse operators on a :class:`~pxpfloquet.hilbert.SectorBasis`.

Energies are in units of the Rabi frequency (``Omega = 1``).

Spin conventions: ``n = 0`` is the ``sigma^z = +1`` state, so
``sigma^y |0> = i |1>`` and ``sigma^y |1> = -i |0>``; ``prod_i sigma^z_i``
equals ``(-1)^N``. In the zero-momentum basis a translation-invariant operator
``A`` has elements ``<a|A|b> = sqrt(O_b / O_a) * sum_{c in orbit(a)} A[c, b]``
with ``O`` the orbit sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .hilbert import FULL, MOMENTUM_K0, SectorBasis, canonicalize, enumerate_basis, popcount
from .lattice import simple_paths

_I_POWERS = np.array([1.0, 1.0j, -1.0, -1.0j])


class OperatorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """A sector-resolved operator stored as CSR."""

    basis: SectorBasis
    matrix: sp.csr_matrix
    hermitian: bool = True
    name: str = ""

    @property
    def dim(self) -> int:
        return self.basis.dim

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def number_change(self) -> np.ndarray:
        """``N_row - N_col`` for every stored entry."""
        r, c, _ = self.entries()
        n = self.basis.counts
        return n[r] - n[c]

    @cached_property
    def is_diagonal(self) -> bool:
        coo = self.matrix.tocoo()
        return bool(np.all(coo.row == coo.col))

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def __matmul__(self, other):
        return self.matrix @ other

    def scaled(self, c: complex, name: str = "") -> "SparseOperator":
        return SparseOperator(self.basis, (c * self.matrix).tocsr(), self.hermitian, name or self.name)

    def plus(self, other: "SparseOperator", name: str = "") -> "SparseOperator":
        if other.basis is not self.basis:
            raise OperatorError("operators live on different bases")
        return SparseOperator(
            self.basis, (self.matrix + other.matrix).tocsr(), self.hermitian and other.hermitian, name
        )

    def hermiticity_error(self) -> float:
        d = self.matrix - self.matrix.conj().T
        return float(abs(d).max()) if d.nnz else 0.0


def _diag(basis: SectorBasis, values, name: str) -> SparseOperator:
    m = sp.diags(np.asarray(values, dtype=float), format="csr")
    return SparseOperator(basis, m, True, name)


class _Assembler:
    """Collect (target configuration, source column, amplitude) triplets."""

    def __init__(self, basis: SectorBasis):
        self.basis = basis
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self._valid = None
        if basis.mode == MOMENTUM_K0:
            self._valid = enumerate_basis(basis.lattice)

    def add(self, cols: np.ndarray, targets: np.ndarray, amps: np.ndarray) -> None:
        if len(cols) == 0:
            return
        b = self.basis
        if b.mode == FULL:
            idx = b.index(targets)
            ok = idx >= 0
            self.rows.append(idx[ok])
            self.cols.append(cols[ok])
            self.vals.append(np.asarray(amps)[ok])
            return
        # drop blockade-violating targets before canonicalising
        pos = np.clip(np.searchsorted(self._valid, targets), 0, len(self._valid) - 1)
        ok = self._valid[pos] == targets
        cols, targets, amps = cols[ok], targets[ok], np.asarray(amps)[ok]
        if len(cols) == 0:
            return
        reps, _ = canonicalize(targets, b.lattice)
        idx = _rep_index(b, reps)
        ratio = np.sqrt(b.orbit_size[cols] / b.orbit_size[idx])
        self.rows.append(idx)
        self.cols.append(cols)
        self.vals.append(amps * ratio)

    def build(self, dtype=complex) -> sp.csr_matrix:
        D = self.basis.dim
        if not self.rows:
            return sp.csr_matrix((D, D), dtype=dtype)
        r = np.concatenate(self.rows)
        c = np.concatenate(self.cols)
        v = np.concatenate(self.vals).astype(dtype)
        m = sp.coo_matrix((v, (r, c)), shape=(D, D)).tocsr()
        m.sum_duplicates()
        m.eliminate_zeros()
        return m


def _rep_index(basis: SectorBasis, reps: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(basis.states, reps)
    if np.any(pos >= basis.dim) or np.any(basis.states[np.minimum(pos, basis.dim - 1)] != reps):
        raise OperatorError("representative missing from basis")
    return pos


def build_pxp(basis: SectorBasis) -> SparseOperator:
    """``H0 = 1/2 sum_i P sigma^x_i P``."""
    lat = basis.lattice
    masks = lat.neighbor_masks()
    s = basis.states
    cols = np.arange(basis.dim)
    asm = _Assembler(basis)
    for i in range(lat.n_sites):
        bit = np.int64(1 << i)
        ok = ((s & bit) != 0) | ((s & masks[i]) == 0)
        asm.add(cols[ok], s[ok] ^ bit, np.full(ok.sum(), 0.5))
    m = asm.build(float)
    return SparseOperator(basis, m, True, "H0")


def build_number(basis: SectorBasis) -> SparseOperator:
    return _diag(basis, basis.counts, "N")


def build_site_density(basis: SectorBasis, site: int) -> SparseOperator:
    if basis.mode != FULL:
        raise OperatorError("site densities need the full basis; use build_mean_density")
    if not 0 <= site < basis.n_sites:
        raise OperatorError(f"site index {site} out of range")
    return _diag(basis, (basis.states >> site) & 1, f"n_{site}")


def build_mean_density(basis: SectorBasis) -> SparseOperator:
    """Translation-averaged density ``N / n_sites``."""
    return _diag(basis, basis.counts / basis.n_sites, "n_mean")


def build_parity(basis: SectorBasis) -> SparseOperator:
    """``prod_i sigma^z_i = (-1)^N``."""
    return _diag(basis, 1 - 2 * (basis.counts % 2), "parity")


def _flip_set(basis: SectorBasis, asm: _Assembler, mask: int, y_mask: int) -> None:
    """Flip every site in ``mask``; sigma^y phases on ``y_mask`` sites."""
    s = basis.states
    m = np.int64(mask)
    up = popcount(np.int64(y_mask) & ~s)
    down = popcount(np.int64(y_mask) & s)
    amps = _I_POWERS[(up - down) % 4]
    asm.add(np.arange(basis.dim), s ^ m, amps)


def build_path_flip(basis: SectorBasis, gamma: int) -> SparseOperator:
    """``O_gamma = sum_{|Lambda| = gamma} P (prod sigma^y) P`` over path site sets."""
    if gamma < 1:
        raise OperatorError("gamma must be >= 1")
    if gamma > basis.n_sites:
        raise OperatorError(f"gamma={gamma} larger than site count {basis.n_sites}")
    asm = _Assembler(basis)
    for path in simple_paths(basis.lattice, gamma):
        mask = 0
        for i in path:
            mask |= 1 << i
        _flip_set(basis, asm, mask, mask)
    return SparseOperator(basis, asm.build(complex), True, f"O{gamma}")


def build_pair_flip(basis: SectorBasis, i: int, j: int, kind: str = "xx") -> SparseOperator:
    """``P sigma^a_i sigma^a_j P`` for a single pair, ``kind`` in {"xx", "yy"}."""
    if basis.mode != FULL:
        raise OperatorError("single-bond operators need the full basis")
    asm = _Assembler(basis)
    mask = (1 << i) | (1 << j)
    _flip_set(basis, asm, mask, mask if kind == "yy" else 0)
    return SparseOperator(basis, asm.build(complex), True, f"{kind}_{i}_{j}")


def build_plaquette_x(basis: SectorBasis, plaquette: tuple[int, ...]) -> SparseOperator:
    """``X_p = sigma^x_{p1} sigma^y_{p2} ... sigma^y_{p6}`` restricted to the basis."""
    if basis.mode != FULL:
        raise OperatorError("X_p is not translation invariant; use the full basis")
    if len(plaquette) != 6:
        raise OperatorError("plaquette must have 6 sites")
    mask = 0
    for i in plaquette:
        mask |= 1 << i
    asm = _Assembler(basis)
    _flip_set(basis, asm, mask, mask & ~(1 << plaquette[0]))
    return SparseOperator(basis, asm.build(complex), True, "X_p")


def build_nnn_counter(basis: SectorBasis) -> SparseOperator:
    """``V = sum_<<ij>> n_i n_j``."""
    s = basis.states
    v = np.zeros(basis.dim)
    for i, j in basis.lattice.nnn_bonds:
        v += ((s >> i) & 1) * ((s >> j) & 1)
    return _diag(basis, v, "V")


def build_gauss_charge(basis: SectorBasis, triangle: int) -> SparseOperator:
    """Vacancy indicator ``1 - sum_{i in triangle} n_i`` of one triangle."""
    if basis.mode != FULL:
        raise OperatorError("Gauss charges need the full basis")
    tris = basis.lattice.triangles
    if not tris:
        raise OperatorError("lattice has no triangles")
    if not 0 <= triangle < len(tris):
        raise OperatorError(f"triangle index {triangle} invalid")
    s = basis.states
    occ = sum(((s >> i) & 1) for i in tris[triangle].sites)
    return _diag(basis, 1 - occ, f"rho_{triangle}")


def gauss_law_violation(basis: SectorBasis) -> float:
    """Max over states and triangles of ``|1 - rho - sum n_i|`` with ``rho`` the vacancy."""
    s = basis.states
    worst = 0.0
    for tri in basis.lattice.triangles:
        occ = sum(((s >> i) & 1) for i in tri.sites)
        rho = (occ == 0).astype(int)
        worst = max(worst, float(np.abs(1 - rho - occ).max()))
    return worst


def static_sw_coefficients(delta: float) -> tuple[float, float, float]:
    """Prefactors of ``N``, ``O_2`` and ``O_6`` in the leading-order static Hamiltonian."""
    if delta == 0:
        raise OperatorError("delta must be nonzero")
    return -delta, -1.0 / (4.0 * delta), -3.0 / (32.0 * delta**5)


def build_static_sw(
    basis: SectorBasis, delta: float, cache: dict | None = None
) -> SparseOperator:
    """``-Delta N - (1/4 Delta) O_2 - (3/32 Delta^5) O_6``."""
    if delta <= 0:
        raise OperatorError("delta must be positive")
    cache = {} if cache is None else cache
    cN, c2, c6 = static_sw_coefficients(delta)
    if 2 not in cache:
        cache[2] = build_path_flip(basis, 2)
    if 6 not in cache:
        cache[6] = build_path_flip(basis, 6)
    m = cN * build_number(basis).matrix + c2 * cache[2].matrix + c6 * cache[6].matrix
    return SparseOperator(basis, m.tocsr(), True, "H_static")


def detuned_pxp(basis: SectorBasis, delta: float, H0: SparseOperator | None = None) -> SparseOperator:
    """``H0 - Delta N``."""
    H0 = build_pxp(basis) if H0 is None else H0
    m = H0.matrix - delta * build_number(basis).matrix
    return SparseOperator(basis, m.tocsr(), True, f"H0-{delta}N")


def commutator_norm(A, B) -> float:
    """Max-abs entry of ``[A, B]`` for sparse or dense matrices."""
    c = A @ B - B @ A
    if sp.issparse(c):
        return float(abs(c).max()) if c.nnz else 0.0
    return float(np.abs(c).max())


def full_to_k0_isometry(full, k0: SectorBasis) -> sp.csr_matrix:
    """Columns are the normalised k=0 states written in the full basis."""
    reps, _ = canonicalize(full.states, full.lattice)
    idx = np.searchsorted(k0.states, reps)
    vals = 1.0 / np.sqrt(k0.orbit_size[idx])
    return sp.csr_matrix((vals, (np.arange(full.dim), idx)), shape=(full.dim, k0.dim))


__all__ = [
    "SparseOperator",
    "OperatorError",
    "build_pxp",
    "build_number",
    "build_site_density",
    "build_mean_density",
    "build_parity",
    "build_path_flip",
    "build_pair_flip",
    "build_plaquette_x",
    "build_nnn_counter",
    "build_gauss_charge",
    "gauss_law_violation",
    "build_static_sw",
    "static_sw_coefficients",
    "detuned_pxp",
    "full_to_k0_isometry",
]
