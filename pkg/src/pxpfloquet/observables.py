"""Measurement post-processing on state trajectories.

All functions take states as rows of a ``(n_times, dim)`` array in the basis
of the operators passed alongside.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .hilbert import FULL, SectorBasis, occupations, popcount
from .lattice import Lattice

log = logging.getLogger(__name__)

MIXED_CUT = 0.3


class ObservableError(ValueError):
    pass


@dataclass
class ObservableSeries:
    times: np.ndarray
    channels: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        names = list(self.channels)
        data = np.column_stack([self.times] + [np.asarray(self.channels[k]) for k in names])
        np.savetxt(path, data, delimiter=",", header=",".join(["t"] + names), comments="", fmt="%.12g")


def _probs(states: np.ndarray) -> np.ndarray:
    states = np.atleast_2d(states)
    return np.abs(states) ** 2


def _diag_values(op) -> np.ndarray:
    if hasattr(op, "is_diagonal") and not op.is_diagonal:
        raise ObservableError(f"operator {getattr(op, 'name', '')!r} is not diagonal")
    return np.real(op.diagonal())


def expectation_series(states: np.ndarray, op) -> np.ndarray:
    """``<psi(t)| A |psi(t)>`` for a diagonal operator."""
    return _probs(states) @ _diag_values(op)


def density_series(states: np.ndarray, basis: SectorBasis) -> np.ndarray:
    """``n(t) = <N> / n_sites``."""
    return _probs(states) @ basis.counts / basis.n_sites


def variance_series(states: np.ndarray, V) -> np.ndarray:
    """``<V^2> - <V>^2`` per time for diagonal ``V``."""
    v = _diag_values(V)
    p = _probs(states)
    m = p @ v
    return np.clip(p @ (v * v) - m * m, 0.0, None)


def general_expectation(states: np.ndarray, op) -> np.ndarray:
    states = np.atleast_2d(states)
    A = op.matrix
    return np.einsum("ti,ti->t", states.conj(), (A @ states.T).T)


def ensemble_site_means(basis: SectorBasis) -> dict[int, np.ndarray]:
    """Flat average of ``n_i`` over all configurations of each excitation number."""
    if basis.mode != FULL:
        raise ObservableError("ensemble averages need the full configuration basis")
    occ = occupations(basis.states, basis.n_sites).astype(float)
    return {N: occ[idx].mean(axis=0) for N, idx in basis.number_sectors().items()}


def site_density_series(states: np.ndarray, basis: SectorBasis) -> np.ndarray:
    """``(n_times, n_sites)`` array of ``<n_i(t)>``."""
    if basis.mode != FULL:
        raise ObservableError("site densities need the full configuration basis")
    occ = occupations(basis.states, basis.n_sites).astype(float)
    return _probs(states) @ occ


def autocorrelation(
    states: np.ndarray,
    basis: SectorBasis,
    initial: int,
    ensemble: dict[int, np.ndarray] | None = None,
) -> np.ndarray:
    """``C(t) = (1/N) sum_i [<n_i(t)> - <n_i>_N] <n_i>_psi`` for a product initial state."""
    if basis.mode != FULL:
        raise ObservableError("autocorrelation needs the full configuration basis")
    if basis.index(np.array([initial]))[0] < 0:
        raise ObservableError("initial state not in basis")
    if ensemble is None:
        ensemble = ensemble_site_means(basis)
    n0 = occupations(np.array([initial]), basis.n_sites)[0].astype(float)
    N = int(n0.sum())
    if N == 0:
        raise ObservableError("autocorrelation is undefined for the empty state")
    nt = site_density_series(states, basis)
    return ((nt - ensemble[N][None, :]) @ n0) / N


def plaquette_expectations(state: np.ndarray, plaquette_ops) -> np.ndarray:
    if not plaquette_ops:
        raise ObservableError("empty plaquette registry")
    return np.array([np.vdot(state, op.matrix @ state) for op in plaquette_ops])


def max_plaquette_resonance(state: np.ndarray, plaquette_ops) -> tuple[float, int]:
    """``max_p |<X_p>|`` and the maximising plaquette index."""
    vals = np.abs(plaquette_expectations(state, plaquette_ops))
    k = int(np.argmax(vals))
    return float(vals[k]), k


def resonance_series(states: np.ndarray, plaquette_ops) -> np.ndarray:
    return np.array([max_plaquette_resonance(s, plaquette_ops)[0] for s in np.atleast_2d(states)])


def fourier_spectrum(series, dt: float, pad: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Angular frequencies and ``|F|`` of the mean-subtracted series.

    Rectangular window. ``pad`` zero-pads to ``pad * len(series)`` samples,
    refining the grid below ``2 pi / T``.
    """
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = len(x) * max(1, int(pad))
    F = np.abs(np.fft.rfft(x, n=n))
    w = 2 * np.pi * np.fft.rfftfreq(n, d=dt)
    return w, F


def dominant_frequency(series, dt: float, exclude_zero: bool = True, pad: int = 1) -> float:
    """Angular frequency of the largest Fourier peak, skipping ``omega = 0``."""
    x = np.asarray(series, dtype=float)
    if len(x) < 16:
        raise ObservableError("series needs at least 16 samples")
    if np.ptp(x) <= 1e-14 * max(1.0, np.abs(x).max()):
        raise ObservableError("no nonzero spectral content")
    w, F = fourier_spectrum(x, dt, pad)
    start = 1 if exclude_zero else 0
    return float(w[start + int(np.argmax(F[start:]))])


def fit_power_law(x, y) -> tuple[float, float]:
    """Least-squares ``log y = a log x + b``; returns ``(a, b)``."""
    a, b = np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)
    return float(a), float(b)


@dataclass
class SnapshotHistogram:
    times: np.ndarray
    probabilities: np.ndarray  # (n_times, gamma_max + 1)

    def p(self, gamma: int) -> np.ndarray:
        return self.probabilities[:, gamma]

    def to_long(self) -> list[tuple[float, int, float]]:
        return [
            (float(t), g, float(self.probabilities[k, g]))
            for k, t in enumerate(self.times)
            for g in range(self.probabilities.shape[1])
        ]


def difference_cluster_table(configs: np.ndarray, initial: int, lattice: Lattice) -> np.ndarray:
    """``(len(configs), n_sites + 1)`` site fractions per cluster size.

    For every configuration the sites differing from ``initial`` are split
    into nn-connected clusters; each site contributes ``1/n_sites`` to the
    column of its cluster size, non-differing sites to column 0.
    """
    n = lattice.n_sites
    masks = lattice.neighbor_masks().tolist()
    diffs = (np.asarray(configs, dtype=np.int64) ^ np.int64(initial)).tolist()
    table = np.zeros((len(diffs), n + 1))
    cache: dict[int, np.ndarray] = {}
    for row, d in enumerate(diffs):
        hist = cache.get(d)
        if hist is None:
            hist = np.zeros(n + 1)
            rest = d
            while rest:
                seed = rest & -rest
                comp = seed
                frontier = seed
                while frontier:
                    grow = 0
                    f = frontier
                    while f:
                        low = f & -f
                        grow |= masks[low.bit_length() - 1]
                        f ^= low
                    frontier = grow & rest & ~comp
                    comp |= frontier
                size = bin(comp).count("1")
                hist[size] += size
                rest &= ~comp
            hist[0] = n - bin(d).count("1")
            hist /= n
            cache[d] = hist
        table[row] = hist
    return table


def snapshot_probabilities(
    states: np.ndarray,
    basis: SectorBasis,
    initial: int,
    times=None,
    table: np.ndarray | None = None,
) -> SnapshotHistogram:
    """Probabilities ``p_gamma(t)`` of flipped-site clusters relative to ``initial``."""
    if basis.mode != FULL:
        raise ObservableError("snapshots need the full configuration basis")
    if basis.index(np.array([initial]))[0] < 0:
        raise ObservableError("initial configuration not in basis")
    if table is None:
        table = difference_cluster_table(basis.states, initial, basis.lattice)
    states = np.atleast_2d(states)
    p = _probs(states)
    p = p / p.sum(axis=1, keepdims=True)
    probs = p @ table
    times = np.arange(len(states), dtype=float) if times is None else np.asarray(times)
    return SnapshotHistogram(times, probs)


@dataclass
class SpectralScatter:
    energies: np.ndarray
    n_expect: np.ndarray
    sector: np.ndarray  # rounded N, -1 for mixed
    bandwidths: dict
    slopes: dict

    def __len__(self) -> int:
        return len(self.energies)

    def weighted_slope(self, min_states: int = 3) -> float:
        """Band-size weighted mean of ``|dE/d<N>|`` over bands with enough states."""
        num = den = 0.0
        for N, s in self.slopes.items():
            k = int(np.count_nonzero(self.sector == N))
            if k >= min_states and np.isfinite(s):
                num += k * abs(s)
                den += k
        return num / den if den else float("nan")

    def rows(self):
        return zip(self.energies.tolist(), self.n_expect.tolist(), self.sector.tolist())


def spectral_scatter(H, N, budget: int = 20000) -> SpectralScatter:
    """Eigenstates resolved by energy and ``<N>``, with per-band width and tilt."""
    if H.dim > budget:
        raise ObservableError(f"dimension {H.dim} exceeds dense budget {budget}")
    A = H.dense()
    if np.iscomplexobj(A) and np.abs(A.imag).max() == 0:
        A = A.real
    E, Q = np.linalg.eigh(A)
    n = np.real(N.diagonal())
    nexp = (np.abs(Q) ** 2).T @ n
    r = np.rint(nexp)
    sector = np.where(np.abs(nexp - r) > MIXED_CUT, -1, r).astype(int)
    widths, slopes = {}, {}
    for s in np.unique(sector):
        if s < 0:
            continue
        sel = sector == s
        widths[int(s)] = float(np.ptp(E[sel]))
        x = nexp[sel]
        if sel.sum() >= 2 and np.ptp(x) > 1e-12:
            slopes[int(s)] = float(np.polyfit(x, E[sel], 1)[0])
        else:
            slopes[int(s)] = 0.0
    return SpectralScatter(E, nexp, sector, widths, slopes)


def time_average(series, window: tuple[float, float] | None = None, times=None) -> float:
    """Mean over ``window = (t_start, t_end)``; the window is part of the report."""
    x = np.asarray(series, dtype=float)
    if window is None:
        return float(x.mean())
    t = np.asarray(times, dtype=float)
    sel = (t >= window[0]) & (t <= window[1])
    if not np.any(sel):
        raise ObservableError("averaging window contains no samples")
    return float(x[sel].mean())


def config_number(configs: np.ndarray) -> np.ndarray:
    return popcount(configs)
