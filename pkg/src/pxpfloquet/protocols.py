"""Named initial states and default protocol parameters."""

from __future__ import annotations

import numpy as np

from .hilbert import MOMENTUM_K0, SectorBasis, enumerate_basis, popcount
from .lattice import Lattice


class StateError(ValueError):
    pass


def plaquette_mask(plaquette) -> int:
    m = 0
    for s in plaquette:
        m |= 1 << s
    return m


def flippable_plaquettes(config: int, lattice: Lattice, valid: np.ndarray | None = None) -> list[int]:
    """Indices of plaquettes whose full six-site flip stays blockade-consistent
    and keeps the excitation number."""
    if valid is None:
        valid = enumerate_basis(lattice)
    out = []
    for k, p in enumerate(lattice.plaquettes):
        m = plaquette_mask(p)
        occ = bin(config & m).count("1")
        if occ != len(p) // 2:
            continue
        img = config ^ m
        pos = np.searchsorted(valid, img)
        if pos < len(valid) and valid[pos] == img:
            out.append(k)
    return out


def fully_packed_states(lattice: Lattice, valid: np.ndarray | None = None) -> np.ndarray:
    """Configurations with one excitation per Kagome triangle."""
    if lattice.kind != "kagome":
        raise StateError("fully packed states are defined on the Kagome lattice")
    if valid is None:
        valid = enumerate_basis(lattice)
    masks = np.array([plaquette_mask(t.sites) for t in lattice.triangles], dtype=np.int64)
    ok = np.ones(len(valid), dtype=bool)
    for m in masks:
        ok &= popcount(valid & m) == 1
    return valid[ok]


def psi1(lattice: Lattice) -> int:
    """Fully packed dimer state with the most flippable hexagons (smallest
    bitmask among ties)."""
    valid = enumerate_basis(lattice)
    packed = fully_packed_states(lattice, valid)
    if len(packed) == 0:
        raise StateError("lattice has no fully packed configuration")
    scores = [len(flippable_plaquettes(int(c), lattice, valid)) for c in packed]
    best = max(scores)
    return int(min(c for c, s in zip(packed, scores) if s == best))


def psi2(lattice: Lattice) -> int:
    """``psi1`` with its lowest occupied site de-excited: one pair of charges."""
    c = psi1(lattice)
    low = c & -c
    return int(c ^ low)


def parse_bitstring(bits: str, lattice: Lattice) -> int:
    """``bits[i]`` is the occupation of site ``i``."""
    bits = bits.strip()
    if len(bits) != lattice.n_sites or set(bits) - {"0", "1"}:
        raise StateError(f"bitstring must have {lattice.n_sites} characters of 0/1")
    return sum(1 << i for i, b in enumerate(bits) if b == "1")


def to_bitstring(config: int, n_sites: int) -> str:
    return "".join("1" if (config >> i) & 1 else "0" for i in range(n_sites))


def resolve_state(name: str, lattice: Lattice) -> int:
    if name == "psi1":
        return psi1(lattice)
    if name == "psi2":
        return psi2(lattice)
    return parse_bitstring(name, lattice)


def product_state(basis: SectorBasis, config: int) -> np.ndarray:
    """Normalised vector of a configuration; projected on ``k = 0`` in momentum mode."""
    r = int(basis.index(np.array([config]))[0])
    if r < 0:
        raise StateError("configuration is not blockade-consistent")
    v = np.zeros(basis.dim, dtype=complex)
    v[r] = 1.0
    return v


def momentum_state(basis: SectorBasis, config: int) -> np.ndarray:
    """Alias of :func:`product_state` that insists on the ``k = 0`` basis."""
    if basis.mode != MOMENTUM_K0:
        raise StateError("momentum_state needs a k=0 basis")
    return product_state(basis, config)


SIX_BODY = {
    "name": "six_body",
    "filter": {"type": "six_body"},
    "target": {"O6": 0.012},
    "tau": 6.0,
    "lambda": 0.1,
    "delta0": 0.7,
}

THREE_BODY = {
    "name": "three_body",
    "filter": {"type": "three_body"},
    "target": {"N": -0.22, "O3": 0.055, "O2": -0.055},
    "tau": 2.0,
    "lambda": 1.5,
    "delta0": 1.0,
}

STATIC = {"name": "static", "delta": 2.0}
