"""Command line pipeline: ``pxpfloquet {basis,optimize,run,spectrum,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .cache import CacheError, CacheStore, sha256_file
from .engineer import (
    EngineeringError,
    RidgeProblem,
    build_effective_hamiltonian,
    build_target,
    hyperparameter_sweep,
    solve_ridge,
    svd_analysis,
)
from .evolution import (
    DriveSchedule,
    EigenSystem,
    EvolutionError,
    TimeGrid,
    diagonalize,
    heisenberg_number,
    propagate_driven,
    propagate_static,
)
from .hilbert import FULL, MOMENTUM_K0, BasisError, SectorFilter, make_basis, select_matrix_elements
from .lattice import LatticeError, build_lattice
from .observables import (
    ObservableError,
    ObservableSeries,
    autocorrelation,
    density_series,
    difference_cluster_table,
    resonance_series,
    snapshot_probabilities,
    spectral_scatter,
    variance_series,
)
from .operators import (
    OperatorError,
    build_nnn_counter,
    build_number,
    build_path_flip,
    build_plaquette_x,
    build_pxp,
    detuned_pxp,
)
from .protocols import StateError, product_state, resolve_state

log = logging.getLogger("pxpfloquet")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

_NUM = {"type": "number"}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["version", "lattice"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": 1},
        "name": {"type": "string"},
        "lattice": {
            "type": "object",
            "required": ["kind", "L_x"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["chain", "hexagonal", "kagome"]},
                "L_x": {"type": "integer", "minimum": 1},
                "L_y": {"type": "integer", "minimum": 1},
                "periodic": {"type": "boolean"},
            },
        },
        "sector": {"enum": [FULL, MOMENTUM_K0]},
        "filter": {
            "type": "object",
            "required": ["type"],
            "properties": {"type": {"type": "string"}, "value": {"type": "integer"}},
        },
        "target": {"type": "object", "additionalProperties": _NUM},
        "hyper": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda": {"type": "number", "minimum": 0},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "delta0": _NUM,
            },
        },
        "sweep": {
            "type": "object",
            "required": ["lambdas", "taus"],
            "properties": {
                "lambdas": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
                "taus": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "initial_states": {"type": "array", "items": {"type": "string"}},
        "evolution": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "periods": {"type": "integer", "minimum": 0},
                "stroboscopic_only": {"type": "boolean"},
                "effective": {"type": "boolean"},
                "static_delta": {"type": ["number", "null"]},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "profile_scale": _NUM,
            },
        },
        "observables": {
            "type": "array",
            "items": {"enum": ["density", "variance", "autocorrelation", "resonance", "snapshots"]},
        },
        "spectrum": {
            "type": "object",
            "properties": {"operator": {"enum": ["static", "effective", "number"]}, "delta": _NUM},
        },
        "profile": {"type": "array", "items": _NUM},
        "seed": {"type": "integer"},
    },
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config: {exc.message} at {list(exc.absolute_path)}") from exc
    h = cfg.get("hyper", {})
    if "tau" in h and "dt" in h:
        steps = h["tau"] / h["dt"]
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError("dt must divide tau")
    if "profile" in cfg and "tau" in h and "dt" in h:
        if len(cfg["profile"]) != int(round(h["tau"] / h["dt"])) + 1:
            raise ConfigError("inline profile length does not match tau/dt + 1")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


class Pipeline:
    """Lazily built objects shared by the subcommands."""

    def __init__(self, cfg: dict, cache_dir, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache = CacheStore(cache_dir)
        self.files: list[Path] = []
        lat = cfg["lattice"]
        try:
            self.lattice = build_lattice(lat["kind"], lat["L_x"], lat.get("L_y", 1), lat.get("periodic", True))
        except LatticeError as exc:
            raise ConfigError(str(exc)) from exc
        self.mode = cfg.get("sector", MOMENTUM_K0 if self.lattice.periodic else FULL)
        self._basis = {}
        self._ops = {}
        self._eig = None

    # building blocks -------------------------------------------------
    def basis(self, mode: str | None = None):
        mode = mode or self.mode
        if mode not in self._basis:
            self._basis[mode] = self.cache.basis(self.lattice, mode, lambda: make_basis(self.lattice, mode))
        return self._basis[mode]

    def op(self, name: str, mode: str | None = None):
        b = self.basis(mode)
        key = (name, b.mode)
        if key not in self._ops:
            builders = {
                "H0": lambda: build_pxp(b),
                "N": lambda: build_number(b),
                "V": lambda: build_nnn_counter(b),
            }
            if name.startswith("O"):
                builders[name] = lambda: build_path_flip(b, int(name[1:]))
            if name not in builders:
                raise ConfigError(f"unknown operator {name!r}")
            self._ops[key] = self.cache.operator(b, name, builders[name])
        return self._ops[key]

    def eig(self) -> EigenSystem:
        if self._eig is None:
            b = self.basis()
            H0 = self.op("H0")
            a = self.cache.arrays(
                self.lattice, b.mode, "eig-H0",
                lambda: dict(zip(("energies", "vectors"), _eig_arrays(H0))),
            )
            self._eig = EigenSystem(b, a["energies"], a["vectors"])
        return self._eig

    def hyper(self) -> dict:
        h = self.cfg.get("hyper", {})
        missing = {"tau", "dt"} - set(h)
        if missing:
            raise ConfigError(f"hyper is missing {sorted(missing)}")
        return {"lambda": h.get("lambda", 0.1), "tau": h["tau"], "dt": h["dt"], "delta0": h.get("delta0", 0.0)}

    def elements(self):
        flt = SectorFilter.from_spec(self.cfg.get("filter", {"type": "all"}), self.lattice)
        return select_matrix_elements(self.basis(), flt)

    def target(self, S):
        coeffs = self.cfg.get("target")
        if not coeffs:
            raise ConfigError("optimisation needs a target")
        gens = {k: self.op(k) for k in coeffs}
        return build_target(S, gens, coeffs)

    def trajectory(self, S, grid: TimeGrid):
        tag = f"traj-{config_hash({'f': self.cfg.get('filter'), 'tau': grid.tau, 'dt': grid.dt})[:12]}"
        b = self.basis()

        def build():
            tr = heisenberg_number(self.eig(), grid, S)
            return {"values": tr.values, "rows": S.rows, "cols": S.cols}

        a = self.cache.arrays(self.lattice, b.mode, tag, build)
        if not (np.array_equal(a["rows"], S.rows) and np.array_equal(a["cols"], S.cols)):
            raise CacheError("cached trajectory does not match the element set")
        return a["values"]

    def optimise(self):
        h = self.hyper()
        grid = TimeGrid(h["tau"], h["dt"])
        S = self.elements()
        T = self.target(S)
        N0 = self.trajectory(S, grid)
        rep = solve_ridge(RidgeProblem(N0, T.values, h["lambda"], h["tau"], h["dt"]))
        rep.svd = svd_analysis(N0, k=14)
        rep.extras.update({"elements": len(S), "dimension": self.basis().dim, "delta0": h["delta0"]})
        return grid, rep

    def profile(self):
        h = self.hyper()
        grid = TimeGrid(h["tau"], h["dt"])
        if "profile" in self.cfg:
            return grid, np.asarray(self.cfg["profile"], dtype=float)
        if not self.cfg.get("target"):
            return grid, np.zeros(grid.M)
        return grid, self.optimise()[1].profile

    # output ----------------------------------------------------------
    def write_json(self, name: str, obj) -> Path:
        p = self.out / name
        p.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))
        self.files.append(p)
        return p

    def write_rows(self, name: str, header: list[str], rows) -> Path:
        p = self.out / name
        with open(p, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        self.files.append(p)
        return p

    def write_series(self, name: str, series: ObservableSeries) -> Path:
        p = self.out / name
        series.to_csv(p)
        self.files.append(p)
        return p

    def manifest(self, command: str, started: str) -> Path:
        entries = [{"path": p.name, "sha256": sha256_file(p)} for p in self.files]
        p = self.out / "manifest.json"
        p.write_text(
            json.dumps(
                {
                    "command": command,
                    "config_hash": config_hash(self.cfg),
                    "code_version": __version__,
                    "started": started,
                    "finished": _now(),
                    "files": entries,
                },
                indent=2,
            )
        )
        return p


def _eig_arrays(H0):
    e = diagonalize(H0)
    return e.energies, e.vectors


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _fmt(x):
    return f"{x:.12g}" if isinstance(x, (float, np.floating)) else x


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


# subcommands -------------------------------------------------------------
def cmd_basis(p: Pipeline) -> dict:
    modes = [FULL] + ([MOMENTUM_K0] if p.lattice.periodic and p.lattice.translations else [])
    summary = {"lattice": p.lattice.kind, "cells": list(p.lattice.cells), "n_sites": p.lattice.n_sites}
    for m in modes:
        b = p.basis(m)
        summary[m] = {"dimension": b.dim, "by_number": {str(k): len(v) for k, v in b.number_sectors().items()}}
        log.info("%s dimension: %d", m, b.dim)
    summary["cache_hits"] = p.cache.hits
    p.write_json("basis.json", summary)
    return summary


def cmd_optimize(p: Pipeline) -> dict:
    grid, rep = p.optimise()
    p.write_json("report.json", rep.to_dict())
    p.write_rows("profile.csv", ["t", "delta_p"], zip(grid.times, rep.profile))
    return rep.to_dict()


def cmd_sweep(p: Pipeline) -> dict:
    sw = p.cfg.get("sweep")
    if not sw:
        raise ConfigError("sweep needs a 'sweep' section")
    S = p.elements()
    T = p.target(S)
    rows = hyperparameter_sweep(p.eig(), S, T, sw["lambdas"], sw["taus"], p.hyper()["dt"])
    p.write_rows(
        "sweep.csv",
        ["lambda", "tau", "q_angle", "q_delta", "profile_norm", "residual"],
        [(r.lam, r.tau, r.q_angle, r.q_delta, r.profile_norm, r.residual) for r in rows],
    )
    return {"rows": len(rows)}


def _observe(p: Pipeline, states, times, basis, label, config, extra_ops) -> ObservableSeries:
    wanted = p.cfg.get("observables", ["density", "variance"])
    ser = ObservableSeries(np.asarray(times), meta={"state": label})
    if "density" in wanted:
        ser.channels["n"] = density_series(states, basis)
    if "variance" in wanted:
        ser.channels["var_V"] = variance_series(states, extra_ops["V"])
    if basis.mode == FULL:
        if "autocorrelation" in wanted:
            ser.channels["C"] = autocorrelation(states, basis, config)
        if "resonance" in wanted:
            ser.channels["max_Xp"] = resonance_series(states, extra_ops["X"])
        if "snapshots" in wanted:
            tab = difference_cluster_table(basis.states, config, basis.lattice)
            hist = snapshot_probabilities(states, basis, config, times, tab)
            for g in range(hist.probabilities.shape[1]):
                ser.channels[f"p{g}"] = hist.p(g)
    return ser


def cmd_run(p: Pipeline) -> dict:
    ev = p.cfg.get("evolution", {})
    b = p.basis()
    H0, N, V = p.op("H0"), p.op("N"), p.op("V")
    extra = {"V": V}
    if b.mode == FULL and "resonance" in p.cfg.get("observables", []):
        extra["X"] = [build_plaquette_x(b, pl) for pl in p.lattice.plaquettes]
    h = p.hyper()
    grid, prof = p.profile()
    prof = prof * ev.get("profile_scale", 1.0)
    sched = DriveSchedule(grid, prof, h["delta0"])
    periods = ev.get("periods", 1)
    strobe = ev.get("stroboscopic_only", True)
    Heff = None
    if ev.get("effective", True):
        if b.mode == FULL and p.mode != FULL:
            raise ConfigError("effective Hamiltonian requires the optimisation sector")
        Heff = build_effective_hamiltonian(p.eig(), grid, prof, h["delta0"])
    out = {}
    for name in p.cfg.get("initial_states", ["psi1"]):
        try:
            config = resolve_state(name, p.lattice)
        except StateError as exc:
            raise ConfigError(str(exc)) from exc
        psi = product_state(b, config)
        drv = propagate_driven(psi, sched, H0, N, periods, strobe, dt=ev.get("dt"), method="auto")
        p.write_series(f"driven_{name}.csv", _observe(p, drv.states, drv.times, b, name, config, extra))
        strobe_times = np.arange(periods + 1) * 2 * grid.tau
        if Heff is not None:
            eff = propagate_static(psi, Heff, strobe_times)
            p.write_series(f"effective_{name}.csv", _observe(p, eff.states, eff.times, b, name, config, extra))
        if ev.get("static_delta") is not None:
            Hs = detuned_pxp(b, ev["static_delta"], H0)
            st = propagate_static(psi, Hs, strobe_times)
            p.write_series(f"static_{name}.csv", _observe(p, st.states, st.times, b, name, config, extra))
        out[name] = {"final_density": float(density_series(drv.states[-1:], b)[0])}
    return out


def cmd_spectrum(p: Pipeline) -> dict:
    spec = p.cfg.get("spectrum", {"operator": "static", "delta": 3.0})
    b = p.basis()
    N = p.op("N")
    kind = spec.get("operator", "static")
    if kind == "number":
        H = N.scaled(-1.0, "-N")
    elif kind == "static":
        H = detuned_pxp(b, spec.get("delta", 3.0), p.op("H0"))
    else:
        grid, prof = p.profile()
        H = build_effective_hamiltonian(p.eig(), grid, prof, p.hyper()["delta0"])
    sc = spectral_scatter(H, N)
    p.write_rows("spectrum.csv", ["E", "N_expect", "sector"], sc.rows())
    return {"bandwidths": sc.bandwidths, "slopes": sc.slopes}


COMMANDS = {
    "basis": cmd_basis,
    "optimize": cmd_optimize,
    "run": cmd_run,
    "spectrum": cmd_spectrum,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pxpfloquet", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--cache", type=Path, default=Path(".pxpcache"))
        s.add_argument("--out", type=Path, default=Path("out"))
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    started = _now()
    try:
        cfg = load_config(args.config)
        with threadpool_limits(limits=max(1, args.threads)):
            p = Pipeline(cfg, args.cache, args.out)
            result = COMMANDS[args.command](p)
            p.manifest(args.command, started)
        print(json.dumps(result, default=_json_default, sort_keys=True))
        return EXIT_OK
    except (ConfigError, BasisError, StateError, OperatorError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvolutionError, EngineeringError, ObservableError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
