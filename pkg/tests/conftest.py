import os
import sys
from dataclasses import dataclass

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pxpfloquet.engineer import RidgeProblem, build_target, solve_ridge  # noqa: E402
from pxpfloquet.evolution import TimeGrid, diagonalize, heisenberg_number  # noqa: E402
from pxpfloquet.hilbert import FULL, MOMENTUM_K0, SectorFilter, make_basis, select_matrix_elements  # noqa: E402
from pxpfloquet.lattice import build_lattice  # noqa: E402
from pxpfloquet.operators import build_nnn_counter, build_number, build_path_flip, build_pxp  # noqa: E402
from pxpfloquet.protocols import SIX_BODY, THREE_BODY  # noqa: E402


@dataclass
class Sector:
    lattice: object
    basis: object
    H0: object
    N: object
    V: object
    eig: object
    _paths: dict

    def O(self, gamma):
        if gamma not in self._paths:
            self._paths[gamma] = build_path_flip(self.basis, gamma)
        return self._paths[gamma]

    def generators(self, names):
        gens = {}
        for k in names:
            gens[k] = self.N if k == "N" else self.O(int(k[1:]))
        return gens


def make_sector(kind, L, mode):
    lat = build_lattice(kind, L, L)
    b = make_basis(lat, mode)
    H0 = build_pxp(b)
    return Sector(lat, b, H0, build_number(b), build_nnn_counter(b), diagonalize(H0), {})


@pytest.fixture(scope="session")
def kagome2_full():
    return make_sector("kagome", 2, FULL)


@pytest.fixture(scope="session")
def kagome2_k0():
    return make_sector("kagome", 2, MOMENTUM_K0)


@pytest.fixture(scope="session")
def kagome3_k0():
    return make_sector("kagome", 3, MOMENTUM_K0)


@dataclass
class Protocol:
    sector: Sector
    elements: object
    target: object
    grid: object
    trajectory: object
    report: object
    params: dict


def optimise(sector, params, dt):
    S = select_matrix_elements(sector.basis, SectorFilter.from_spec(params["filter"], sector.lattice))
    T = build_target(S, sector.generators(params["target"]), params["target"])
    grid = TimeGrid(params["tau"], dt)
    traj = heisenberg_number(sector.eig, grid, S)
    rep = solve_ridge(RidgeProblem.from_trajectory(traj, T, params["lambda"]))
    return Protocol(sector, S, T, grid, traj, rep, params)


@pytest.fixture(scope="session")
def six_body_2(kagome2_k0):
    return optimise(kagome2_k0, SIX_BODY, 0.05)


@pytest.fixture(scope="session")
def three_body_2(kagome2_k0):
    return optimise(kagome2_k0, THREE_BODY, 0.05)


@pytest.fixture(scope="session")
def six_body_3(kagome3_k0):
    return optimise(kagome3_k0, SIX_BODY, 0.05)


@pytest.fixture(scope="session")
def three_body_3(kagome3_k0):
    return optimise(kagome3_k0, THREE_BODY, 0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
