import numpy as np
import pytest
import scipy.sparse.linalg as spla
from scipy.linalg import expm

import oracles
from pxpfloquet.evolution import (
    DriveSchedule,
    EvolutionError,
    TimeGrid,
    diagonalize,
    echo_unitary,
    floquet_unitary,
    heisenberg_number,
    heisenberg_series,
    lanczos_expm,
    propagate_driven,
    propagate_static,
    spectral_moments,
)
from pxpfloquet.hilbert import SectorFilter, make_basis, select_matrix_elements
from pxpfloquet.lattice import build_lattice
from pxpfloquet.operators import build_number, build_parity, build_pxp, detuned_pxp


def chain(L, periodic=False):
    b = make_basis(build_lattice("chain", L, periodic=periodic))
    return b, build_pxp(b), build_number(b)


def all_elements(basis):
    return select_matrix_elements(basis, SectorFilter.from_spec({"type": "all"}, basis.lattice))


def random_state(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def test_chain2_spectrum():
    _, H, _ = chain(2)
    eig = diagonalize(H)
    np.testing.assert_allclose(eig.energies, [-np.sqrt(2) / 2, 0, np.sqrt(2) / 2], atol=1e-15)


def test_kagome_spectrum_symmetric(kagome2_full):
    eig = kagome2_full.eig
    np.testing.assert_allclose(eig.energies, -eig.energies[::-1], atol=1e-12)
    Q = eig.vectors
    np.testing.assert_allclose(Q.T @ Q, np.eye(len(Q)), atol=1e-12)
    assert eig.reconstruction_error(kagome2_full.H0) < 1e-10


def test_dense_budget():
    _, H, _ = chain(6)
    with pytest.raises(EvolutionError, match="Krylov"):
        diagonalize(H, budget=5)


def test_time_grid():
    g = TimeGrid(6.0, 0.05)
    assert g.M == 121 and g.times[-1] == 6.0 and g.times[0] == 0.0
    np.testing.assert_allclose(np.diff(g.times), 0.05)
    with pytest.raises(EvolutionError, match="does not divide"):
        TimeGrid(1.0, 0.3)


@pytest.mark.parametrize("L,tau", [(4, 3.0), (8, 3.0), (5, 0.0)])
def test_echo_chain(L, tau):
    _, H, _ = chain(L)
    assert echo_unitary(diagonalize(H), tau) < 1e-10


def test_echo_kagome(kagome2_full):
    assert echo_unitary(kagome2_full.eig, 6.0) < 1e-10
    with pytest.raises(EvolutionError):
        echo_unitary(kagome2_full.eig, -1.0)


def test_heisenberg_initial_values(kagome2_k0):
    S = all_elements(kagome2_k0.basis)
    traj = heisenberg_number(kagome2_k0.eig, TimeGrid(0.5, 0.25), S)
    n = kagome2_k0.basis.counts
    diag = S.rows == S.cols
    np.testing.assert_allclose(traj.values[diag, 0], n[S.rows[diag]] - n.mean(), atol=1e-12)
    np.testing.assert_allclose(traj.values[~diag, 0], 0, atol=1e-12)
    assert traj.trace_density == pytest.approx(n.mean())


def test_heisenberg_matches_dense_exponential(kagome2_full):
    sec = kagome2_full
    S = all_elements(sec.basis)
    grid = TimeGrid(1.0, 0.25)
    traj = heisenberg_number(sec.eig, grid, S, trace_subtract=False)
    H, N = sec.H0.dense(), sec.N.dense()
    for k, t in enumerate(grid.times):
        ref = oracles.heisenberg_dense(H, N, t)
        np.testing.assert_allclose(traj.values[:, k], S.values(ref), atol=1e-12)


def test_heisenberg_rejects_foreign_elements(kagome2_k0, kagome2_full):
    S = all_elements(kagome2_full.basis)
    with pytest.raises(EvolutionError, match="different bases"):
        heisenberg_number(kagome2_k0.eig, TimeGrid(1.0, 0.5), S)


def test_parity_relation_every_time(kagome2_k0):
    S = all_elements(kagome2_k0.basis)
    traj = heisenberg_number(kagome2_k0.eig, TimeGrid(3.0, 0.1), S)
    n = kagome2_k0.basis.counts
    sign = (-1.0) ** (n[S.rows] + n[S.cols])
    V = traj.values
    assert np.abs(V - sign[:, None] * V.conj()).max() < 1e-12


def test_series_matches_eigen_route(kagome2_k0):
    sec = kagome2_k0
    times = [0.01, 0.1, 0.5]
    series = heisenberg_series(sec.H0, sec.N, times)
    for t, A in zip(times, series):
        np.testing.assert_allclose(A, oracles.heisenberg_dense(sec.H0.dense(), sec.N.dense(), t), atol=1e-11)


def test_continuity_in_time(kagome2_k0):
    S = all_elements(kagome2_k0.basis)
    H, N = kagome2_k0.H0.dense(), kagome2_k0.N.dense()
    bound = np.linalg.norm(H @ N - N @ H, 2)
    for dt in (0.1, 0.05):
        traj = heisenberg_number(kagome2_k0.eig, TimeGrid(2.0, dt), S)
        jump = np.abs(np.diff(traj.values, axis=1)).max()
        assert jump <= bound * dt


def test_lanczos_matches_expm_multiply(kagome2_full, rng):
    H = kagome2_full.H0.matrix
    v = random_state(rng, H.shape[0])
    for dt in (0.05, 0.7):
        ref = spla.expm_multiply(-1j * dt * H, v)
        np.testing.assert_allclose(lanczos_expm(H, v, dt), ref, atol=1e-10)
    n = kagome2_full.basis.counts.astype(float)
    ref = spla.expm_multiply(-1j * 0.3 * (H - 0.8 * kagome2_full.N.matrix), v)
    np.testing.assert_allclose(lanczos_expm(H, v, 0.3, shift=(0.8, n)), ref, atol=1e-10)
    assert np.all(lanczos_expm(H, np.zeros_like(v), 0.1) == 0)


def schedule(sector, tau, dt, profile=None, delta0=0.0):
    grid = TimeGrid(tau, dt)
    prof = np.zeros(grid.M) if profile is None else profile(grid.times)
    return DriveSchedule(grid, prof, delta0)


def test_schedule_mirror_and_period():
    grid = TimeGrid(2.0, 0.5)
    s = DriveSchedule(grid, grid.times**2)
    t = np.array([0.3, 1.1, 1.9])
    np.testing.assert_allclose(s.value(4.0 - t), s.value(t))
    np.testing.assert_allclose(s.value(t + 8.0), s.value(t))
    with pytest.raises(EvolutionError, match="does not match"):
        DriveSchedule(grid, np.zeros(3))


def test_pure_echo_returns_state(kagome2_full, rng):
    sec = kagome2_full
    psi = random_state(rng, sec.basis.dim)
    traj = propagate_driven(psi, schedule(sec, 6.0, 0.5), sec.H0, sec.N, 3, stroboscopic_only=True)
    assert traj.states.shape == (4, sec.basis.dim)
    for s in traj.states:
        assert abs(np.vdot(psi, s)) ** 2 > 1 - 1e-9


def test_pulse_weight_gives_sector_phases(kagome2_full, rng):
    sec = kagome2_full
    psi = random_state(rng, sec.basis.dim)
    d0 = 0.7
    traj = propagate_driven(psi, schedule(sec, 6.0, 0.5, delta0=d0), sec.H0, sec.N, 2, stroboscopic_only=True)
    n = sec.basis.counts
    for m, s in enumerate(traj.states):
        np.testing.assert_allclose(s, np.exp(1j * m * d0 * n) * psi, atol=1e-9)


def test_krylov_matches_dense(kagome2_full, rng):
    sec = kagome2_full
    psi = random_state(rng, sec.basis.dim)
    sch = schedule(sec, 3.0, 0.1, lambda t: 0.4 * np.sin(np.pi * t / 3.0) ** 2, 0.3)
    a = propagate_driven(psi, sch, sec.H0, sec.N, 2, method="dense")
    b = propagate_driven(psi, sch, sec.H0, sec.N, 2, method="krylov")
    assert len(a.times) == 2 * 2 * 30 + 1
    np.testing.assert_allclose(a.times, b.times)
    np.testing.assert_allclose(a.states, b.states, atol=1e-8)
    np.testing.assert_allclose(np.linalg.norm(b.states, axis=1), 1, atol=1e-9)


def test_floquet_unitary_is_unitary(kagome2_k0):
    sec = kagome2_k0
    sch = schedule(sec, 2.0, 0.1, lambda t: np.cos(t), 1.0)
    U = floquet_unitary(sch, sec.H0, sec.N)
    np.testing.assert_allclose(U.conj().T @ U, np.eye(sec.basis.dim), atol=1e-12)


def test_midpoint_rule_is_second_order(kagome2_k0, rng):
    sec = kagome2_k0
    psi = random_state(rng, sec.basis.dim)
    grid = TimeGrid(2.0, 0.001)
    sch = DriveSchedule(grid, 0.8 * np.sin(grid.times))
    ref = propagate_driven(psi, sch, sec.H0, sec.N, 1, True).states[-1]
    errs = [
        np.linalg.norm(propagate_driven(psi, sch, sec.H0, sec.N, 1, True, dt=dt).states[-1] - ref)
        for dt in (0.1, 0.05)
    ]
    assert np.log2(errs[0] / errs[1]) > 1.8


def test_driven_input_checks(kagome2_k0):
    sec = kagome2_k0
    sch = schedule(sec, 2.0, 0.5)
    with pytest.raises(EvolutionError, match="normalised"):
        propagate_driven(np.ones(sec.basis.dim), sch, sec.H0, sec.N, 1)
    psi = np.zeros(sec.basis.dim)
    psi[0] = 1
    with pytest.raises(EvolutionError, match="does not divide"):
        propagate_driven(psi, sch, sec.H0, sec.N, 1, dt=0.3)
    with pytest.raises(EvolutionError, match="unknown method"):
        propagate_driven(psi, sch, sec.H0, sec.N, 1, method="rk4")


def test_static_eigenstate_is_stationary(kagome2_full):
    sec = kagome2_full
    H = detuned_pxp(sec.basis, 2.0)
    eig = diagonalize(H)
    psi = eig.vectors[:, 5]
    traj = propagate_static(psi, H, np.linspace(0, 10, 11), eig=eig)
    n = sec.basis.counts
    dens = (np.abs(traj.states) ** 2) @ n
    np.testing.assert_allclose(dens, dens[0], atol=1e-12)


def test_static_energy_conserved_and_krylov(kagome2_full, rng):
    sec = kagome2_full
    H = detuned_pxp(sec.basis, 2.0)
    psi = random_state(rng, sec.basis.dim)
    times = np.linspace(0, 100, 6)
    a = propagate_static(psi, H, times)
    b = propagate_static(psi, H, times, budget=0)
    np.testing.assert_allclose(a.states, b.states, atol=1e-7)
    Hm = H.matrix
    energies = [np.vdot(s, Hm @ s).real for s in b.states]
    np.testing.assert_allclose(energies, energies[0], atol=1e-9)


def test_spectral_moments_match_states(kagome2_full, rng):
    sec = kagome2_full
    H = detuned_pxp(sec.basis, 1.0)
    psi = random_state(rng, sec.basis.dim)
    times = np.linspace(0, 20, 41)
    n = sec.basis.counts.astype(float)
    got, got2 = spectral_moments(H, psi, [n, n**2], times, cutoff=0.0)
    states = propagate_static(psi, H, times).states
    p = np.abs(states) ** 2
    np.testing.assert_allclose(got, p @ n, atol=1e-10)
    np.testing.assert_allclose(got2, p @ n**2, atol=1e-10)


def test_parity_maps_time_to_minus_time(kagome2_full):
    # P H P = -H, so P e^{-iHt} P = e^{iHt}
    sec = kagome2_full
    P = build_parity(sec.basis).dense()
    H = sec.H0.dense()
    U = expm(-1j * 0.9 * H)
    np.testing.assert_allclose(P @ U @ P, U.conj().T, atol=1e-12)
