"""Independent brute-force references.

Nothing here uses the bitmask machinery of the package: configurations are
enumerated over all ``2**n`` bitstrings, operators are Kronecker products of
Pauli matrices projected with the blockade projector, and the zero-momentum
basis is built from explicit orbit vectors.
"""

from __future__ import annotations

import itertools
from functools import reduce

import networkx as nx
import numpy as np
import scipy.sparse as sp

SX = sp.csr_matrix(np.array([[0, 1], [1, 0]], dtype=complex))
SY = sp.csr_matrix(np.array([[0, -1j], [1j, 0]], dtype=complex))
NUM = sp.csr_matrix(np.array([[0, 0], [0, 1]], dtype=complex))


def site_operator(op, site: int, n: int) -> sp.csr_matrix:
    """Operator on ``site`` where site ``i`` is bit ``i`` of the state index."""
    left = sp.identity(2 ** (n - 1 - site), format="csr")
    right = sp.identity(2**site, format="csr")
    return sp.kron(sp.kron(left, op), right, format="csr")


def blockade_states(n: int, bonds) -> np.ndarray:
    out = []
    for s in range(2**n):
        bits = [(s >> i) & 1 for i in range(n)]
        if all(not (bits[i] and bits[j]) for i, j in bonds):
            out.append(s)
    return np.array(out, dtype=np.int64)


def projector(n: int, bonds) -> sp.csr_matrix:
    keep = blockade_states(n, bonds)
    v = np.zeros(2**n)
    v[keep] = 1
    return sp.diags(v, format="csr")


def graph(n: int, bonds) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(bonds)
    return g


def path_site_sets(n: int, bonds, gamma: int) -> set[frozenset]:
    """Site sets of size ``gamma`` traversed by some simple path in the bond graph."""
    g = graph(n, bonds)
    if gamma == 1:
        return {frozenset([i]) for i in range(n)}
    out = set()
    for u, v in itertools.combinations(range(n), 2):
        for path in nx.all_simple_paths(g, u, v, cutoff=gamma - 1):
            if len(path) == gamma:
                out.add(frozenset(path))
    return out


def pxp_dense(n: int, bonds) -> tuple[np.ndarray, np.ndarray]:
    """``P (1/2 sum sigma^x) P`` restricted to blockade states, and those states."""
    P = projector(n, bonds)
    H = reduce(lambda a, b: a + b, (site_operator(SX, i, n) for i in range(n))) * 0.5
    H = P @ H @ P
    keep = blockade_states(n, bonds)
    return H[keep][:, keep].toarray(), keep


def path_operator_dense(n: int, bonds, gamma: int) -> tuple[np.ndarray, np.ndarray]:
    P = projector(n, bonds)
    keep = blockade_states(n, bonds)
    total = sp.csr_matrix((2**n, 2**n), dtype=complex)
    for sites in path_site_sets(n, bonds, gamma):
        term = reduce(lambda a, b: a @ b, (site_operator(SY, i, n) for i in sorted(sites)))
        total = total + term
    total = P @ total @ P
    return total[keep][:, keep].toarray(), keep


def k0_vectors(states: np.ndarray, translations) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal ``k = 0`` vectors (columns) in the configuration basis.

    Returns the matrix and the smallest configuration of each orbit.
    """
    index = {int(s): k for k, s in enumerate(states)}
    seen = set()
    cols, reps = [], []
    for s in states:
        s = int(s)
        if s in seen:
            continue
        orbit = set()
        for perm in translations:
            t = 0
            for i, j in enumerate(perm):
                if (s >> i) & 1:
                    t |= 1 << j
            orbit.add(t)
        seen |= orbit
        v = np.zeros(len(states))
        for t in orbit:
            v[index[t]] = 1.0
        cols.append(v / np.linalg.norm(v))
        reps.append(min(orbit))
    order = np.argsort(reps)
    return np.array(cols).T[:, order], np.array(reps)[order]


def heisenberg_dense(H: np.ndarray, A: np.ndarray, t: float) -> np.ndarray:
    from scipy.linalg import expm

    U = expm(-1j * H * t)
    return U.conj().T @ A @ U
