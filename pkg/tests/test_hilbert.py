import numpy as np
import pytest

import oracles
from pxpfloquet.hilbert import (
    FULL,
    MOMENTUM_K0,
    BasisError,
    SectorFilter,
    canonicalize,
    enumerate_basis,
    enumerate_basis_bruteforce,
    full_basis,
    make_basis,
    select_matrix_elements,
    symmetrize_k0,
    translate_states,
)
from pxpfloquet.lattice import LatticeError, build_lattice

KAGOME3_BY_N = [1, 27, 297, 1719, 5643, 10557, 10737, 5319, 1026, 42]
KAGOME3_K0_BY_N = [1, 3, 33, 199, 627, 1173, 1211, 591, 114, 12]


def test_chain_open_dimension():
    assert make_basis(build_lattice("chain", 4, periodic=False)).dim == 8


def test_kagome3_dimensions():
    lat = build_lattice("kagome", 3, 3)
    full = make_basis(lat, FULL)
    k0 = make_basis(lat, MOMENTUM_K0)
    assert full.dim == 35368
    assert k0.dim == 3964
    assert [len(full.number_sectors()[n]) for n in range(10)] == KAGOME3_BY_N
    assert [len(k0.number_sectors()[n]) for n in range(10)] == KAGOME3_K0_BY_N


def test_kagome2_dimensions():
    lat = build_lattice("kagome", 2, 2)
    assert make_basis(lat).dim == 108
    assert make_basis(lat, MOMENTUM_K0).dim == 36


@pytest.mark.parametrize(
    "kind,Lx,Ly,periodic",
    [("chain", 8, 1, False), ("chain", 12, 1, True), ("hexagonal", 2, 2, True), ("kagome", 2, 2, True)],
)
def test_enumeration_matches_bruteforce(kind, Lx, Ly, periodic):
    lat = build_lattice(kind, Lx, Ly, periodic)
    ref = oracles.blockade_states(lat.n_sites, lat.nn_bonds)
    assert np.array_equal(enumerate_basis(lat), ref)
    assert np.array_equal(enumerate_basis_bruteforce(lat), ref)


def test_orbit_normalisation():
    lat = build_lattice("kagome", 3, 3)
    k0 = symmetrize_k0(lat)
    assert k0.orbit_size.sum() == 35368
    np.testing.assert_allclose(k0.norm, 9 / np.sqrt(k0.orbit_size))
    assert np.all(9 % k0.orbit_size == 0)


def test_index_and_lookup():
    lat = build_lattice("kagome", 2, 2)
    k0 = symmetrize_k0(lat)
    full = full_basis(lat)
    rng = np.random.default_rng(0)
    for c in rng.choice(full.states, 20, replace=False):
        r, g = k0.lookup(int(c))
        assert translate_states(np.array([k0.states[r]]), lat.translations[g])[0] == c
    assert k0.index(np.array([3]))[0] == -1  # sites 0,1 are neighbours


def test_k0_requires_periodic():
    with pytest.raises(LatticeError):
        symmetrize_k0(build_lattice("chain", 4, periodic=False))


def test_filters():
    lat = build_lattice("kagome", 3, 3)
    six = SectorFilter.from_spec({"type": "six_body"}, lat)
    three = SectorFilter.from_spec({"type": "three_body"}, lat)
    assert six(9, 8) and not six(8, 8)
    assert three(8, 8) and not three(8, 7)
    with pytest.raises(BasisError):
        SectorFilter.from_spec({"type": "nope"}, lat)


def test_element_selection_sizes():
    lat = build_lattice("kagome", 3, 3)
    k0 = symmetrize_k0(lat)
    S6 = select_matrix_elements(k0, SectorFilter.from_spec({"type": "six_body"}, lat))
    S3 = select_matrix_elements(k0, SectorFilter.from_spec({"type": "three_body"}, lat))
    assert len(S6) == 12 * 12 + 2 * 12 * 114
    assert len(S3) == 126**2
    # row-major ordering
    key = S6.rows * k0.dim + S6.cols
    assert np.all(np.diff(key) > 0)


def test_empty_selection_errors():
    b = make_basis(build_lattice("kagome", 2, 2))
    with pytest.raises(BasisError, match="no matrix elements"):
        select_matrix_elements(b, SectorFilter.both_equal(100))


def test_canonical_representative_is_orbit_minimum():
    lat = build_lattice("kagome", 2, 2)
    states = enumerate_basis(lat)
    reps, g = canonicalize(states, lat)
    _, ref = oracles.k0_vectors(states, lat.translations)
    assert set(reps.tolist()) == set(ref.tolist())
