"""Blockade-consistent configuration bases and the zero-momentum sector.

A configuration is an ``int64`` bitmask with bit ``i`` holding ``n_i``.
Representatives of translation orbits are the orbit's smallest integer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lattice import Lattice, LatticeError

log = logging.getLogger(__name__)

FULL = "full"
MOMENTUM_K0 = "momentum_k0"

# pruned enumeration is always used; the exhaustive oracle is capped here
BRUTE_FORCE_MAX_SITES = 24


class BasisError(ValueError):
    pass


def popcount(states: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.asarray(states, dtype=np.int64)).astype(np.int64)


def occupations(states: np.ndarray, n_sites: int) -> np.ndarray:
    """``(len(states), n_sites)`` array of 0/1 occupations."""
    states = np.asarray(states, dtype=np.int64)
    return ((states[:, None] >> np.arange(n_sites, dtype=np.int64)[None, :]) & 1).astype(np.int8)


def enumerate_basis(lattice: Lattice) -> np.ndarray:
    """All blockade-consistent configurations, sorted ascending.

    Sites are added one at a time; a site may be occupied only when none of its
    lower-index neighbours is, so invalid branches are never generated.
    """
    n = lattice.n_sites
    if n > 62:
        raise BasisError("bitmask basis supports at most 62 sites")
    lower = np.zeros(n, dtype=np.int64)
    for i, j in lattice.nn_bonds:
        a, b = min(i, j), max(i, j)
        lower[b] |= 1 << a
    states = np.zeros(1, dtype=np.int64)
    for i in range(n):
        ok = (states & lower[i]) == 0
        states = np.concatenate([states, states[ok] | np.int64(1 << i)])
    return np.sort(states)


def enumerate_basis_bruteforce(lattice: Lattice) -> np.ndarray:
    """Exhaustive filter over all ``2**n`` bitstrings (test oracle)."""
    n = lattice.n_sites
    if n > BRUTE_FORCE_MAX_SITES:
        raise BasisError("brute-force enumeration limited to small lattices")
    out = []
    bonds = lattice.nn_bonds
    for s in range(1 << n):
        if all(not ((s >> i) & 1 and (s >> j) & 1) for i, j in bonds):
            out.append(s)
    return np.array(out, dtype=np.int64)


def translate_states(states: np.ndarray, perm: tuple[int, ...]) -> np.ndarray:
    """Apply a site permutation to packed configurations."""
    states = np.asarray(states, dtype=np.int64)
    out = np.zeros_like(states)
    for i, j in enumerate(perm):
        out |= ((states >> i) & 1) << j
    return out


def all_translates(states: np.ndarray, lattice: Lattice) -> np.ndarray:
    """``(n_group, len(states))`` array of translated configurations."""
    return np.stack([translate_states(states, p) for p in lattice.translations])


def canonicalize(states: np.ndarray, lattice: Lattice) -> tuple[np.ndarray, np.ndarray]:
    """Orbit representative of each state and the group index mapping it there."""
    images = all_translates(states, lattice)
    g = np.argmin(images, axis=0)
    return images[g, np.arange(images.shape[1])], g


@dataclass(frozen=True, eq=False)
class SectorBasis:
    """Ordered basis of one sector.

    ``states`` are representatives (momentum mode) or plain configurations
    (full mode). ``norm`` holds the normalisation constant of
    ``sum_g T_g |r>`` and ``orbit_size`` the number of distinct translates.
    """

    lattice: Lattice
    mode: str
    states: np.ndarray
    orbit_size: np.ndarray
    norm: np.ndarray
    counts: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def group_order(self) -> int:
        return max(1, len(self.lattice.translations)) if self.mode == MOMENTUM_K0 else 1

    def index(self, configs: np.ndarray) -> np.ndarray:
        """Basis index for configurations; -1 where absent.

        In momentum mode configurations are first mapped to representatives.
        """
        configs = np.atleast_1d(np.asarray(configs, dtype=np.int64))
        if self.mode == MOMENTUM_K0:
            configs, _ = canonicalize(configs, self.lattice)
        pos = np.searchsorted(self.states, configs)
        pos = np.clip(pos, 0, self.dim - 1)
        hit = self.states[pos] == configs
        return np.where(hit, pos, -1)

    def lookup(self, config: int) -> tuple[int, int]:
        """``(r, g)`` with ``T_g(states[r]) == config``."""
        if self.mode != MOMENTUM_K0:
            r = int(self.index(np.array([config]))[0])
            if r < 0:
                raise BasisError(f"configuration {config:b} not in basis")
            return r, 0
        arr = np.array([config], dtype=np.int64)
        images = all_translates(arr, self.lattice)[:, 0]
        h = int(np.argmin(images))
        r = int(self.index(images[h : h + 1])[0])
        if r < 0:
            raise BasisError(f"configuration {config:b} not in basis")
        dx, dy = self.lattice.shifts[h]
        g = self.lattice.translation_index(-dx, -dy)
        return r, g

    def number(self) -> np.ndarray:
        return self.counts

    def number_sectors(self) -> dict[int, np.ndarray]:
        return {int(N): np.flatnonzero(self.counts == N) for N in np.unique(self.counts)}

    def trace_weight(self) -> np.ndarray:
        """Multiplicity of each basis vector in a trace over the sector (all ones)."""
        return np.ones(self.dim)


def full_basis(lattice: Lattice, configs: np.ndarray | None = None) -> SectorBasis:
    if configs is None:
        configs = enumerate_basis(lattice)
    configs = np.sort(np.asarray(configs, dtype=np.int64))
    ones = np.ones(len(configs))
    log.info("full basis: %d states", len(configs))
    return SectorBasis(lattice, FULL, configs, ones.astype(np.int64), ones, popcount(configs))


def symmetrize_k0(lattice: Lattice, configs: np.ndarray | None = None) -> SectorBasis:
    """Zero-momentum basis built from orbit representatives."""
    if not lattice.periodic:
        raise LatticeError("momentum symmetrization requires periodic boundaries")
    if configs is None:
        configs = enumerate_basis(lattice)
    configs = np.asarray(configs, dtype=np.int64)
    images = all_translates(configs, lattice)
    reps_all = images.min(axis=0)
    is_rep = reps_all == configs
    reps = np.sort(configs[is_rep])
    rep_images = all_translates(reps, lattice)
    orbit = np.array([len(np.unique(rep_images[:, k])) for k in range(len(reps))], dtype=np.int64)
    G = len(lattice.translations)
    norm = G / np.sqrt(orbit)
    log.info("k=0 basis: %d representatives from %d configurations", len(reps), len(configs))
    return SectorBasis(lattice, MOMENTUM_K0, reps, orbit, norm, popcount(reps))


def make_basis(lattice: Lattice, mode: str = FULL) -> SectorBasis:
    if mode == FULL:
        return full_basis(lattice)
    if mode == MOMENTUM_K0:
        return symmetrize_k0(lattice)
    raise BasisError(f"unknown basis mode {mode!r}")


@dataclass(frozen=True)
class SectorFilter:
    """Symmetric predicate over the excitation numbers of a matrix element."""

    predicate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    label: str = "custom"

    def __call__(self, n_row, n_col):
        return self.predicate(np.asarray(n_row), np.asarray(n_col))

    @classmethod
    def all(cls) -> "SectorFilter":
        return cls(lambda a, b: np.ones(np.broadcast(a, b).shape, dtype=bool), "all")

    @classmethod
    def sum_at_least(cls, total: int) -> "SectorFilter":
        return cls(lambda a, b: (a + b) >= total, f"sum>={total}")

    @classmethod
    def both_at_least(cls, n_min: int) -> "SectorFilter":
        return cls(lambda a, b: (a >= n_min) & (b >= n_min), f"both>={n_min}")

    @classmethod
    def both_equal(cls, n: int) -> "SectorFilter":
        return cls(lambda a, b: (a == n) & (b == n), f"both=={n}")

    @classmethod
    def from_spec(cls, spec: dict, lattice: Lattice) -> "SectorFilter":
        """Build from a protocol-file description.

        ``{"type": "six_body"}`` gives ``N + N' >= 2 L^2 - 1`` and
        ``{"type": "three_body"}`` gives ``N, N' >= L^2 - 1`` with ``L^2`` the
        number of unit cells.
        """
        kind = spec.get("type", "all")
        cells = lattice.n_cells
        if kind == "all":
            return cls.all()
        if kind == "six_body":
            return cls.sum_at_least(2 * cells - 1)
        if kind == "three_body":
            return cls.both_at_least(cells - 1)
        if kind == "sum_at_least":
            return cls.sum_at_least(int(spec["value"]))
        if kind == "both_at_least":
            return cls.both_at_least(int(spec["value"]))
        if kind == "both_equal":
            return cls.both_equal(int(spec["value"]))
        raise BasisError(f"unknown filter type {kind!r}")


@dataclass(frozen=True, eq=False)
class ElementSet:
    """Ordered matrix-element subset ``S`` (row-major)."""

    basis: SectorBasis
    rows: np.ndarray
    cols: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def row_states(self) -> np.ndarray:
        return np.unique(np.concatenate([self.rows, self.cols]))

    def values(self, matrix) -> np.ndarray:
        """Entries of a dense or sparse matrix on ``S``."""
        if hasattr(matrix, "tocsr"):
            m = matrix.tocsr()
            return np.asarray(m[self.rows, self.cols]).ravel()
        return np.asarray(matrix)[self.rows, self.cols]


def select_matrix_elements(basis: SectorBasis, flt: SectorFilter) -> ElementSet:
    # the predicate depends only on (N, N'), so work sector by sector
    sectors = basis.number_sectors()
    Ns = np.array(sorted(sectors))
    keep = flt(Ns[:, None], Ns[None, :])
    row_blocks, col_blocks = [], []
    for a, b in zip(*np.nonzero(keep)):
        ia, ib = sectors[int(Ns[a])], sectors[int(Ns[b])]
        row_blocks.append(np.repeat(ia, len(ib)))
        col_blocks.append(np.tile(ib, len(ia)))
    if not row_blocks:
        raise BasisError("filter selects no matrix elements")
    rows = np.concatenate(row_blocks)
    cols = np.concatenate(col_blocks)
    order = np.lexsort((cols, rows))
    return ElementSet(basis, rows[order], cols[order])
