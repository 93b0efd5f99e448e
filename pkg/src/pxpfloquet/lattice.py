"""Periodic lattice geometries: chain, honeycomb (hexagonal) and Kagome.

Sites are stored cell-major, sublattice-minor: ``site = (x * L_y + y) * n_sub + s``.

Kagome conventions (fixed, documented for reproducibility):

* Bravais vectors ``a1 = (2, 0)``, ``a2 = (1, sqrt(3))``; nearest-neighbour distance 1.
* Sublattices ``A = (0, 0)``, ``B = (1, 0)``, ``C = (1/2, sqrt(3)/2)``, so the
  up-triangle ``A(R), B(R), C(R)`` points up and the down-triangle is
  ``A(R), B(R - a1), C(R - a2)``.
* Hexagon centres sit at ``R + (3/2, sqrt(3)/2)``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

KINDS = ("chain", "hexagonal", "kagome")

_SQ3 = np.sqrt(3.0)

_GEOMETRY = {
    "chain": {
        "a1": np.array([1.0, 0.0]),
        "a2": np.array([0.0, 1.0]),
        "sub": [np.array([0.0, 0.0])],
        "hex_centre": None,
    },
    "hexagonal": {
        "a1": np.array([_SQ3, 0.0]),
        "a2": np.array([_SQ3 / 2, 1.5]),
        "sub": [np.array([0.0, 0.0]), np.array([_SQ3 / 2, 0.5])],
        "hex_centre": np.array([0.0, 1.0]),
    },
    "kagome": {
        "a1": np.array([2.0, 0.0]),
        "a2": np.array([1.0, _SQ3]),
        "sub": [np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([0.5, _SQ3 / 2])],
        "hex_centre": np.array([1.5, _SQ3 / 2]),
    },
}

_TOL = 1e-8


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class Site:
    cell: tuple[int, int]
    sublattice: int
    position: tuple[float, float]


@dataclass(frozen=True)
class Triangle:
    sites: tuple[int, int, int]
    orientation: str  # "up" | "down"


@dataclass(frozen=True)
class Lattice:
    """Immutable lattice description.

    ``translations[g]`` maps site ``i`` to ``translations[g][i]`` under the
    unit-cell shift ``shifts[g]``. Empty for open boundaries.
    """

    kind: str
    cells: tuple[int, int]
    periodic: bool
    sites: tuple[Site, ...]
    nn_bonds: tuple[tuple[int, int], ...]
    nnn_bonds: tuple[tuple[int, int], ...]
    triangles: tuple[Triangle, ...]
    plaquettes: tuple[tuple[int, ...], ...]
    shifts: tuple[tuple[int, int], ...]
    translations: tuple[tuple[int, ...], ...]
    _neighbors: tuple[tuple[int, ...], ...] = field(repr=False, compare=False, default=())

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_cells(self) -> int:
        return self.cells[0] * self.cells[1]

    @property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        return self._neighbors

    def neighbor_masks(self) -> np.ndarray:
        """Bitmask of nearest neighbours for every site (int64)."""
        masks = np.zeros(self.n_sites, dtype=np.int64)
        for i, j in self.nn_bonds:
            masks[i] |= 1 << j
            masks[j] |= 1 << i
        return masks

    def translation_index(self, dx: int, dy: int) -> int:
        Lx, Ly = self.cells
        return self.shifts.index((dx % Lx, dy % Ly))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "cells": list(self.cells),
            "periodic": self.periodic,
            "sites": [
                {"cell": list(s.cell), "sublattice": s.sublattice, "position": list(s.position)}
                for s in self.sites
            ],
            "nn_bonds": [list(b) for b in self.nn_bonds],
            "nnn_bonds": [list(b) for b in self.nnn_bonds],
            "triangles": [
                {"sites": list(t.sites), "orientation": t.orientation} for t in self.triangles
            ],
            "plaquettes": [list(p) for p in self.plaquettes],
            "translations": [
                {"shift": list(s), "perm": list(p)} for s, p in zip(self.shifts, self.translations)
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; keys cache files."""
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()


def _site_index(x: int, y: int, s: int, Ly: int, nsub: int) -> int:
    return (x * Ly + y) * nsub + s


def build_lattice(kind: str, L_x: int, L_y: int = 1, periodic: bool = True) -> Lattice:
    """Build a lattice of ``L_x`` x ``L_y`` unit cells.

    Bonds are found geometrically: nearest neighbours at distance 1 and
    next-nearest neighbours at the second-smallest pair distance, both under
    the periodic minimum-image metric when ``periodic``.
    """
    if kind not in KINDS:
        raise LatticeError(f"unknown lattice kind {kind!r}")
    if L_x < 1 or L_y < 1:
        raise LatticeError("L_x and L_y must be >= 1")
    if kind == "chain" and L_y != 1:
        raise LatticeError("chain requires L_y = 1")
    if kind != "chain" and periodic and min(L_x, L_y) < 2:
        raise LatticeError(f"periodic {kind} needs at least 2 x 2 cells")

    geo = _GEOMETRY[kind]
    a1, a2, subs = geo["a1"], geo["a2"], geo["sub"]
    nsub = len(subs)

    sites = []
    for x in range(L_x):
        for y in range(L_y):
            for s, off in enumerate(subs):
                p = x * a1 + y * a2 + off
                sites.append(Site((x, y), s, (float(p[0]), float(p[1]))))
    pos = np.array([s.position for s in sites])
    n = len(sites)

    if periodic:
        images = [u * L_x * a1 + v * L_y * a2 for u in (-1, 0, 1) for v in (-1, 0, 1)]
        if kind == "chain":
            images = [u * L_x * a1 for u in (-1, 0, 1)]
    else:
        images = [np.zeros(2)]
    images = np.array(images)

    def min_image(d: np.ndarray) -> np.ndarray:
        cand = d[None, :] + images
        return cand[np.argmin(np.linalg.norm(cand, axis=1))]

    dist = np.full((n, n), np.inf)
    for i in range(n):
        d = pos[i][None, None, :] - pos[None, :, :] + images[:, None, :]
        dist[i] = np.linalg.norm(d, axis=2).min(axis=0)
    np.fill_diagonal(dist, np.inf)

    levels = np.unique(np.round(dist[np.isfinite(dist)], 6))
    nn_d = levels[0] if len(levels) else np.inf
    nnn_d = levels[1] if len(levels) > 1 else np.inf
    nn = [(i, j) for i in range(n) for j in range(i + 1, n) if abs(dist[i, j] - nn_d) < 1e-6]
    nnn = [(i, j) for i in range(n) for j in range(i + 1, n) if abs(dist[i, j] - nnn_d) < 1e-6]

    triangles: list[Triangle] = []
    if kind == "kagome":
        idx = {(s.cell, s.sublattice): k for k, s in enumerate(sites)}

        def lookup(x, y, s):
            if periodic:
                return idx[((x % L_x, y % L_y), s)]
            return idx.get(((x, y), s))

        for x in range(L_x):
            for y in range(L_y):
                up = (lookup(x, y, 0), lookup(x, y, 1), lookup(x, y, 2))
                triangles.append(Triangle(tuple(sorted(up)), "up"))
        for x in range(L_x):
            for y in range(L_y):
                down = (lookup(x, y, 0), lookup(x - 1, y, 1), lookup(x, y - 1, 2))
                if None not in down:
                    triangles.append(Triangle(tuple(sorted(down)), "down"))

    plaquettes: list[tuple[int, ...]] = []
    if geo["hex_centre"] is not None:
        for x in range(L_x):
            for y in range(L_y):
                centre = x * a1 + y * a2 + geo["hex_centre"]
                members = []
                for k in range(n):
                    d = min_image(pos[k] - centre)
                    if abs(np.linalg.norm(d) - 1.0) < 1e-6:
                        members.append((np.arctan2(d[1], d[0]), k))
                if len(members) != 6:
                    continue
                ring = [k for _, k in sorted(members)]
                start = ring.index(min(ring))
                plaquettes.append(tuple(ring[start:] + ring[:start]))

    shifts: list[tuple[int, int]] = []
    translations: list[tuple[int, ...]] = []
    if periodic:
        for dx in range(L_x):
            for dy in range(L_y):
                perm = tuple(
                    _site_index((s.cell[0] + dx) % L_x, (s.cell[1] + dy) % L_y, s.sublattice, L_y, nsub)
                    for s in sites
                )
                shifts.append((dx, dy))
                translations.append(perm)

    neigh = [set() for _ in range(n)]
    for i, j in nn:
        neigh[i].add(j)
        neigh[j].add(i)

    return Lattice(
        kind=kind,
        cells=(L_x, L_y),
        periodic=periodic,
        sites=tuple(sites),
        nn_bonds=tuple(nn),
        nnn_bonds=tuple(nnn),
        triangles=tuple(triangles),
        plaquettes=tuple(plaquettes),
        shifts=tuple(shifts),
        translations=tuple(translations),
        _neighbors=tuple(tuple(sorted(s)) for s in neigh),
    )


def translation_group(lattice: Lattice) -> list[tuple[int, ...]]:
    """All ``L_x * L_y`` site permutations, identity first."""
    if not lattice.periodic:
        raise LatticeError("translations undefined for open boundaries")
    return list(lattice.translations)


def compose(p: tuple[int, ...], q: tuple[int, ...]) -> tuple[int, ...]:
    """Permutation ``p o q`` (apply ``q`` first)."""
    return tuple(p[q[i]] for i in range(len(q)))


def simple_paths(lattice: Lattice, gamma: int) -> list[tuple[int, ...]]:
    """Distinct site sets of size ``gamma`` that admit a self-avoiding nn path.

    Each set is returned once, as the sorted tuple of its sites.
    """
    n = lattice.n_sites
    if gamma < 1:
        raise LatticeError("gamma must be >= 1")
    if gamma > n:
        raise LatticeError(f"gamma={gamma} exceeds the number of sites ({n})")
    neigh = lattice.neighbors
    found: set[tuple[int, ...]] = set()

    def extend(path: list[int], used: set[int]) -> None:
        if len(path) == gamma:
            found.add(tuple(sorted(path)))
            return
        for j in neigh[path[-1]]:
            if j not in used:
                used.add(j)
                path.append(j)
                extend(path, used)
                path.pop()
                used.discard(j)

    for start in range(n):
        extend([start], {start})
    return sorted(found)


def is_path_set(lattice: Lattice, sites: tuple[int, ...]) -> bool:
    """Brute force: does some ordering of ``sites`` form an nn path?"""
    bonds = {frozenset(b) for b in lattice.nn_bonds}
    if len(sites) == 1:
        return True
    for perm in itertools.permutations(sites):
        if perm[0] > perm[-1]:
            continue
        if all(frozenset((perm[k], perm[k + 1])) in bonds for k in range(len(perm) - 1)):
            return True
    return False
