"""Command-line front end.

Verbs: ``family``, ``simulate``, ``integrals``, ``apsidal``, ``spectrum``, ``sweep``.

Exit codes: 0 success, 2 configuration or parameter error, 3 domain exit,
4 drift budget exceeded, 5 no turning points, 6 spectral mismatch.

Settings are resolved in three layers: built-in defaults, then the JSON
file given by ``--config`` (which must carry ``"schema": 1``), then flags
given explicitly on the command line.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import pdm_map as pm
from . import quantum_spectrum as qs
from .dynamics import integrals as dint
from .dynamics import orbits
from .dynamics.integrators import IntegratorConfig, integrate
from .errors import BertrandError, DegeneracyMismatch, DomainError, DriftExceeded, LevelMismatch, RegimeError
from .io import dumps_csv, dumps_json, write_text

SCHEMA = 1
VERBS = ("family", "simulate", "integrals", "apsidal", "spectrum", "sweep")
PRESETS = ("kepler", "oscillator", "curved-kepler", "curved-oscillator", "darboux", "darboux-exterior")

EXIT_OK, EXIT_CONFIG = 0, 2


class ConfigError(BertrandError):
    exit_code = EXIT_CONFIG


DEFAULTS = {
    "format": "json", "out": None, "seed": 0, "threads": None,
    # system
    "preset": None, "type": None, "n": None, "m": None, "K": 0.0, "D": 0.0, "G": 0.0,
    "branch": 1, "lam": None, "kappa": 0.0, "omega": 1.0, "A": None, "dim": 3,
    # family
    "points": 11,
    # orbits
    "q": None, "p": None, "E": None, "L": None, "excitation": None,
    "periods": 100.0, "t_end": None, "dt": None, "stages": 3, "method": "gauss",
    "budget": 1e-8, "sample_every": 1, "trajectory": True, "half_periods": 4,
    # spectrum
    "hbar": 1.0, "n_max": 4, "grid_points": None,
    # sweep
    "command": None, "grid": None, "base": None,
}


# -- argument parsing ------------------------------------------------------------------

def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _global_flags(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="JSON settings file with \"schema\": 1")
    parser.add_argument("--format", choices=("csv", "json"), default=d)
    parser.add_argument("--out", default=d, help="directory for output files")
    parser.add_argument("--seed", type=int, default=d)
    parser.add_argument("--threads", type=int, default=d, help="worker processes (env BERTRAND_THREADS)")


def _system_flags(p):
    g = p.add_argument_group("system")
    g.add_argument("--preset", choices=PRESETS)
    g.add_argument("--type", choices=("I", "II"))
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--K", type=float)
    g.add_argument("--D", type=float)
    g.add_argument("--G", type=float)
    g.add_argument("--branch", type=int, choices=(1, -1))
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--kappa", type=float)
    g.add_argument("--omega", type=float)
    g.add_argument("--A", type=float, help="potential amplitude (A1 for Kepler, A2 for oscillator types)")
    g.add_argument("--N", dest="dim", type=int, help="configuration-space dimension")


def _orbit_flags(p, with_ic=True):
    if with_ic:
        p.add_argument("--q", type=_floats, help="initial position, comma separated")
        p.add_argument("--p", type=_floats, help="initial momentum, comma separated")
    p.add_argument("--E", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--excitation", type=float, help="pericenter at (1 - excitation) times the circular radius")


def _integrator_flags(p):
    p.add_argument("--periods", type=float, help="duration in radial periods")
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--stages", type=int, choices=(1, 2, 3, 4))
    p.add_argument("--method", choices=("gauss", "midpoint", "rk"))
    p.add_argument("--sample-every", dest="sample_every", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bertrand", description="Bertrand spaces as PDM systems")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("family", help="tabulate h(r), V(r), rho(r) and M(rho)")
    _global_flags(p, True)
    _system_flags(p)
    p.add_argument("--points", type=int)

    p = sub.add_parser("simulate", help="integrate a trajectory and report integral drift")
    _global_flags(p, True)
    _system_flags(p)
    _orbit_flags(p)
    _integrator_flags(p)
    p.add_argument("--budget", type=float, help="max relative drift allowed (exit 4 above it)")

    p = sub.add_parser("integrals", help="integrals, Poisson brackets and rank at a state")
    _global_flags(p, True)
    _system_flags(p)
    p.add_argument("--q", type=_floats)
    p.add_argument("--p", type=_floats)

    p = sub.add_parser("apsidal", help="apsidal angle by quadrature and by integration")
    _global_flags(p, True)
    _system_flags(p)
    _orbit_flags(p, with_ic=False)
    _integrator_flags(p)
    p.add_argument("--no-trajectory", dest="trajectory", action="store_const", const=False)
    p.add_argument("--half-periods", dest="half_periods", type=int)

    p = sub.add_parser("spectrum", help="analytic and finite-difference Darboux III levels")
    _global_flags(p, True)
    p.add_argument("--N", dest="dim", type=int)
    p.add_argument("--hbar", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--grid-points", dest="grid_points", type=int)

    p = sub.add_parser("sweep", help="run a verb over a Cartesian parameter grid")
    _global_flags(p, True)
    p.add_argument("--command", choices=VERBS[:-1])
    p.add_argument("--grid", action="append",
                   help="KEY=V1,V2,... ; tuple keys like n:m=1:1,2:1 (repeatable)")
    p.add_argument("base", nargs=argparse.REMAINDER, help="flags passed to every cell, after --")
    return parser


def resolve_settings(args: argparse.Namespace) -> dict:
    explicit = {k: v for k, v in vars(args).items() if v is not None and k not in ("verb", "config")}
    cfg = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict) or data.get("schema") != SCHEMA:
            raise ConfigError(f"config must be a JSON object with \"schema\": {SCHEMA}")
        unknown = set(data) - set(DEFAULTS) - {"schema", "verb"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update({k: v for k, v in data.items() if k in DEFAULTS})
    cfg.update(explicit)
    if cfg.get("base") == []:
        cfg["base"] = None
    cfg["threads"] = _threads(cfg.get("threads"))
    return cfg


def _threads(value):
    if value is None:
        env = os.environ.get("BERTRAND_THREADS")
        if env:
            try:
                value = int(env)
            except ValueError as exc:
                raise ConfigError(f"BERTRAND_THREADS must be an integer, got {env!r}") from exc
    value = 1 if value is None else int(value)
    if value < 1:
        raise ConfigError("threads must be >= 1")
    return value


# -- system construction ------------------------------------------------------------------

def _need(cfg, key, flag):
    if cfg.get(key) is None:
        raise ConfigError(f"{flag} is required here")
    return cfg[key]


def build_family(cfg) -> geo.BertrandFamily:
    preset = cfg.get("preset")
    if preset in ("darboux", "darboux-exterior"):
        return geo.BertrandFamily.darboux(_need(cfg, "lam", "--lambda"))
    if preset == "kepler":
        return geo.BertrandFamily.euclidean_kepler()
    if preset == "oscillator":
        return geo.BertrandFamily.flat_oscillator()
    if preset == "curved-kepler":
        return geo.BertrandFamily.curved_kepler(cfg["kappa"])
    if preset == "curved-oscillator":
        return geo.BertrandFamily.curved_oscillator(cfg["kappa"])
    kind = cfg.get("type")
    if kind is None:
        raise ConfigError("give --preset or --type")
    n, m = _need(cfg, "n", "--n"), _need(cfg, "m", "--m")
    if kind == "I":
        return geo.BertrandFamily.type_i(n, m, cfg["K"], cfg["G"])
    return geo.BertrandFamily.type_ii(n, m, cfg["K"], cfg["D"], cfg["G"], cfg["branch"])


def build_system(cfg) -> pm.PDMSystem:
    preset = cfg.get("preset")
    N = int(cfg["dim"])
    if N < 2:
        raise ConfigError("--N must be at least 2")
    A = cfg.get("A")
    omega = cfg["omega"]
    if not omega > 0:
        raise ConfigError("--omega must be positive")
    if preset == "darboux":
        return pm.darboux_system(_need(cfg, "lam", "--lambda"), omega, N)
    if preset == "darboux-exterior":
        lam = _need(cfg, "lam", "--lambda")
        if lam >= 0:
            raise ConfigError("the exterior regime needs --lambda < 0")
        return pm.darboux_exterior_system(lam, omega, N)
    if preset == "kepler":
        return pm.flat_kepler_system(-A if A is not None else 1.0, N)
    if preset == "oscillator":
        return pm.flat_oscillator_system(omega, N)
    if preset == "curved-kepler":
        return pm.curved_kepler_system(cfg["kappa"], -1.0 if A is None else A, N)
    if preset == "curved-oscillator":
        return pm.curved_oscillator_system(cfg["kappa"], 0.5 if A is None else A, N)
    family = build_family(cfg)
    if family.kind == geo.TYPE_I:
        return pm.type_i_system(family, -1.0 if A is None else A, N)
    return pm.type_ii_system(family, 0.5 if A is None else A, N)


_RELEVANT = {
    "kepler": ("A",), "oscillator": ("omega",), "curved-kepler": ("kappa", "A"),
    "curved-oscillator": ("kappa", "A"), "darboux": ("lam", "omega"), "darboux-exterior": ("lam", "omega"),
    "I": ("n", "m", "K", "G", "A"), "II": ("n", "m", "K", "D", "G", "branch", "A"),
}


def _system_record(cfg):
    kind = cfg.get("preset") or cfg.get("type")
    head = {"preset": cfg["preset"]} if cfg.get("preset") else {"type": cfg.get("type")}
    keys = _RELEVANT.get(kind, ()) + ("dim",)
    return {**head, **{k: cfg[k] for k in keys if cfg.get(k) is not None}}


# -- commands -------------------------------------------------------------------------------

class Output:
    """What a command produced: a JSON payload plus an optional CSV table."""

    def __init__(self, payload, table=None, exit_code=EXIT_OK, name="result"):
        self.payload = payload
        self.table = table  # (header, rows) or None
        self.exit_code = exit_code
        self.name = name


def cmd_family(cfg) -> Output:
    family = build_family(cfg)
    system = build_system(cfg)
    profile = geo.make_profile(family)
    cmap = system.mass.map
    exterior = isinstance(cmap, pm.DarbouxExteriorMap)
    lo, hi = cmap.r_domain
    count = int(cfg["points"])
    if count < 2:
        raise ConfigError("--points must be at least 2")
    if math.isfinite(hi):
        rs = np.linspace(lo, hi, count + 2)[1:-1]
    else:
        start = max(1.5 * lo, 0.1)
        rs = np.geomspace(start, 20.0 * start, count)
    rows = []
    for r in rs:
        rho = float(cmap.rho_of_r(r))
        # the exterior chart is not one of the Bertrand profiles
        v_perlick = float("nan") if exterior else float(geo.perlick_potential(profile, r))
        rows.append([float(r), float(cmap.h(r)), v_perlick, rho, float(cmap.mass_factor(rho)),
                     float(system.V(rho))])
    header = ["r", "h", "V_perlick", "rho", "M", "V_pdm"]
    payload = {
        "command": "family",
        "seed": cfg["seed"],
        "system": _system_record(cfg),
        "family": {"kind": family.kind, "n": family.n, "m": family.m, "K": family.K, "D": family.D,
                   "G": family.G, "branch": family.branch, "apsidal_ratio": family.apsidal_ratio},
        "domain": [list(iv) for iv in profile.domain],
        "rho_domain": list(cmap.rho_domain),
        "columns": header,
        "rows": rows,
    }
    return Output(payload, (header, rows), name="family")


def _initial_state(cfg, system):
    N = system.dimension
    if cfg.get("q") is not None or cfg.get("p") is not None:
        if cfg.get("E") is not None or cfg.get("excitation") is not None:
            raise ConfigError("give either an initial state or (E, L), not both")
        q = np.asarray(_need(cfg, "q", "--q"), dtype=float)
        p = np.asarray(_need(cfg, "p", "--p"), dtype=float)
        if q.size != N or p.size != N:
            raise ConfigError(f"--q and --p need {N} components")
        rho = float(np.linalg.norm(q))
        if not system.in_domain(rho):
            raise DomainError(f"|q0|={rho} outside the configuration domain {system.rho_domain}")
        return q, p, "state"
    if cfg.get("E") is not None or cfg.get("excitation") is not None:
        E, L = _energy_and_L(cfg, system, chart="rho")
        q, p = orbits.state_at_pericenter(system, E, L)
        return q, p, "EL"
    rng = np.random.default_rng(cfg["seed"])
    box = 0.5 * min(1.0, system.rho_domain[1]) if math.isfinite(system.rho_domain[1]) else 1.0
    q, p = orbits.random_bounded_states(system, rng, 1, box=box)
    return q[0], p[0], "random"


def _energy_and_L(cfg, system, chart="r"):
    L = cfg.get("L") if cfg.get("L") is not None else 1.0
    if cfg.get("E") is not None:
        return float(cfg["E"]), float(L)
    exc = cfg.get("excitation")
    return orbits.orbit_from_excitation(system, L, 0.2 if exc is None else exc, chart)


def _integrator_config(cfg):
    return IntegratorConfig(method=cfg["method"], stages=cfg["stages"], dt=cfg.get("dt"),
                            sample_every=cfg["sample_every"])


def cmd_simulate(cfg) -> Output:
    system = build_system(cfg)
    q0, p0, source = _initial_state(cfg, system)
    E0, L0 = orbits.energy_and_L(system, q0, p0)
    if cfg.get("t_end") is not None:
        t_end = float(cfg["t_end"])
        T = None
    else:
        T = orbits.radial_period(system, E0, L0, chart="rho")
        t_end = float(cfg["periods"]) * T
    darboux = dint.darboux_params(system)
    integ = _integrator_config(cfg)
    try:
        traj = integrate(system, (q0, p0), t_end, integ)
    except DomainError as exc:
        part = getattr(exc, "trajectory", None)
        raise DomainError(f"{exc} (partial samples: {len(part) if part is not None else 0})") from exc
    values = dint.conserved_set(system, traj.q, traj.p, darboux)
    drift = dint.conservation_report(system, traj, values)
    worst = max(drift.values())
    budget = float(cfg["budget"])
    N = system.dimension
    header = ["t"] + [f"q{i + 1}" for i in range(N)] + [f"p{i + 1}" for i in range(N)] + list(values)
    cols = [traj.t] + [traj.q[:, i] for i in range(N)] + [traj.p[:, i] for i in range(N)] + list(values.values())
    rows = np.column_stack(cols).tolist()
    payload = {
        "command": "simulate",
        "seed": cfg["seed"],
        "system": _system_record(cfg),
        "initial_state": {"q": q0, "p": p0, "source": source, "E": E0, "L": L0},
        "t_end": t_end,
        "radial_period": T,
        "integrator": {"method": integ.method, "stages": integ.stages, **traj.stats},
        "drift": drift,
        "max_drift": worst,
        "budget": budget,
        "within_budget": bool(worst <= budget),
        "samples": len(traj),
    }
    code = EXIT_OK if worst <= budget else DriftExceeded.exit_code
    return Output(payload, (header, rows), code, name="trajectory")


def cmd_integrals(cfg) -> Output:
    system = build_system(cfg)
    N = system.dimension
    if cfg.get("q") is None or cfg.get("p") is None:
        rng = np.random.default_rng(cfg["seed"])
        qs_, ps_ = orbits.random_bounded_states(system, rng, 1)
        q, p = qs_[0], ps_[0]
    else:
        q = np.asarray(cfg["q"], dtype=float)
        p = np.asarray(cfg["p"], dtype=float)
        if q.size != N or p.size != N:
            raise ConfigError(f"--q and --p need {N} components")
        if not system.in_domain(float(np.linalg.norm(q))):
            raise DomainError("state outside the configuration domain")
    darboux = dint.darboux_params(system)
    values = {k: float(v) for k, v in dint.conserved_set(system, q, p, darboux).items()}
    H = dint.hamiltonian_integral(system)
    brackets = {}
    for m in range(2, N + 1):
        for upper in (True, False):
            f = dint.angular_integral(N, m, upper)
            brackets[f"{{H,{f.name}}}"] = float(dint.poisson_bracket(H, f, q, p))
    payload = {"command": "integrals", "seed": cfg["seed"], "system": _system_record(cfg),
               "state": {"q": q, "p": p}, "values": values, "brackets_with_H": brackets}
    if darboux is not None:
        lam, omega = darboux
        sets = dint.involutive_sets(lam, omega, N)
        worst = [max(abs(float(dint.poisson_bracket(a, b, q, p))) for a in s for b in s) for s in sets]
        C = dint.fradkin_tensor(lam, omega, q, p)
        payload.update({
            "involution_max": {"upper": worst[0], "lower": worst[1], "diagonal": worst[2]},
            "rank": dint.independence_rank(dint.independence_set(lam, omega, N), q, p),
            "expected_rank": 2 * N - 1,
            "trace_identity_residual": abs(0.5 * float(np.trace(C)) - values["H"]),
        })
    rows = sorted(values.items())
    return Output(payload, (["quantity", "value"], rows), name="integrals")


def cmd_apsidal(cfg) -> Output:
    system = build_system(cfg)
    E, L = _energy_and_L(cfg, system)
    chart = "r" if system.chart is not None else "rho"
    angle = orbits.apsidal_angle(system, E, L, chart)
    angle_rho = orbits.apsidal_angle(system, E, L, "rho")
    expected = math.pi * system.apsidal_ratio if system.apsidal_ratio is not None else None
    payload = {
        "command": "apsidal", "seed": cfg["seed"], "system": _system_record(cfg),
        "E": E, "L": L, "chart": chart,
        "quadrature_angle": angle, "quadrature_angle_rho": angle_rho,
        "expected": expected,
        "quadrature_deviation": None if expected is None else angle - expected,
    }
    measured = None
    if cfg["trajectory"]:
        q0, p0 = orbits.state_at_pericenter(system, E, L)
        m = orbits.measured_apsidal_angle(system, q0, p0, int(cfg["half_periods"]), _integrator_config(cfg))
        measured = m.mean
        payload.update({"measured_angle": m.mean, "measured_spread": m.spread,
                        "measured_deviation": None if expected is None else m.mean - expected})
    row = [E, L, angle, measured if measured is not None else float("nan"),
           expected if expected is not None else float("nan")]
    return Output(payload, (["E", "L", "quadrature", "measured", "expected"], [row]), name="apsidal")


def cmd_spectrum(cfg) -> Output:
    lam = _need(cfg, "lam", "--lambda")
    if lam < 0:
        raise RegimeError("the quantum spectrum is solved for lambda >= 0 only")
    params = qs.QuantumParams(int(cfg["dim"]), float(cfg["hbar"]), float(lam), float(cfg["omega"]))
    n_max = int(cfg["n_max"])
    grid = qs.default_grid(params, n_max, cfg.get("grid_points"))
    result, code, message = None, EXIT_OK, None
    try:
        result = qs.assemble_spectrum(params, n_max, grid)
    except (LevelMismatch, DegeneracyMismatch) as exc:
        result, code, message = exc.result, exc.exit_code, str(exc)
    header = ["n", "E_analytic", "E_numeric", "degeneracy_expected", "degeneracy_found"]
    rows = result.as_rows()
    payload = {
        "command": "spectrum", "seed": cfg["seed"],
        "parameters": {"N": params.N, "hbar": params.hbar, "lambda": params.lam, "omega": params.omega,
                       "n_max": n_max},
        "continuum_bottom": result.continuum_bottom,
        "grid": {"rho_max": grid.rho_max, "points": grid.points},
        "boundary_amplitude": result.boundary_amplitude,
        "max_relative_error": result.max_level_error,
        "levels": [dict(zip(header, r)) for r in rows],
        "ok": code == EXIT_OK,
    }
    if message:
        payload["error"] = message
    return Output(payload, (header, rows), code, name="spectrum")


# -- sweep ---------------------------------------------------------------------------------------

def parse_grid(specs) -> list:
    """``["n:m=1:1,2:1", "K=-0.2,0"]`` -> ``[(("n", "m"), [("1","1"), ("2","1")]), (("K",), [...])]``."""
    axes = []
    for spec in specs or []:
        if isinstance(spec, str):
            if "=" not in spec:
                raise ConfigError(f"grid entry {spec!r} must look like KEY=V1,V2")
            key, vals = spec.split("=", 1)
            values = [v for v in vals.split(",") if v != ""]
        else:
            key, values = spec
        keys = tuple(key.split(":"))
        parsed = []
        for v in values:
            parts = tuple(str(v).split(":")) if len(keys) > 1 else (str(v),)
            if len(parts) != len(keys):
                raise ConfigError(f"value {v!r} does not match key {key!r}")
            parsed.append(parts)
        axes.append((keys, parsed))
    return axes


def _sort_key(params):
    out = []
    for _, v in params:
        try:
            out.append((0, float(v), ""))
        except ValueError:
            out.append((1, 0.0, v))
    return tuple(out)


def _flag_for(key):
    return {"lambda": "--lambda", "lam": "--lambda", "N": "--N", "dim": "--N"}.get(key, "--" + key.replace("_", "-"))


def run_cell(argv):
    """Run one verb in-process; returns ``(exit code, payload)``."""
    code, output, error = execute(argv)
    payload = output.payload if output is not None else {"error": error}
    return code, payload


def cmd_sweep(cfg) -> Output:
    verb = cfg.get("command")
    if verb not in VERBS[:-1]:
        raise ConfigError("sweep needs --command with one of " + ", ".join(VERBS[:-1]))
    grid = cfg.get("grid")
    if isinstance(grid, dict):
        grid = list(grid.items())
    axes = parse_grid(grid)
    base = cfg.get("base") or []
    if isinstance(base, dict):
        base = [x for k, v in sorted(base.items()) for x in (_flag_for(k), str(v))]
    base = [b for b in base if b != "--"]
    if not axes or any(not vals for _, vals in axes):
        raise ConfigError("the parameter grid is empty")
    cells = []
    for combo in itertools.product(*[vals for _, vals in axes]):
        params, argv = [], [verb, *base, "--seed", str(cfg["seed"])]
        for (keys, _), values in zip(axes, combo):
            for k, v in zip(keys, values):
                params.append((k, v))
                argv += [_flag_for(k), v]
        cells.append((params, argv))
    cells.sort(key=lambda c: _sort_key(c[0]))
    if cfg["threads"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["threads"]) as pool:
            results = list(pool.map(run_cell, [argv for _, argv in cells]))
    else:
        results = [run_cell(argv) for _, argv in cells]
    merged = [{"params": dict(params), "exit_code": code, "result": payload}
              for (params, _), (code, payload) in zip(cells, results)]
    worst = max(code for code, _ in results)
    payload = {"command": "sweep", "verb": verb, "seed": cfg["seed"], "cells": merged, "exit_code": worst}
    keys = [k for keys, _ in axes for k in keys]
    rows = [[c["params"][k] for k in keys] + [c["exit_code"]] for c in merged]
    return Output(payload, (keys + ["exit_code"], rows), worst, name="sweep")


COMMANDS = {"family": cmd_family, "simulate": cmd_simulate, "integrals": cmd_integrals,
            "apsidal": cmd_apsidal, "spectrum": cmd_spectrum, "sweep": cmd_sweep}


# -- entry points ----------------------------------------------------------------------------------

def execute(argv):
    """Parse and run; returns ``(exit code, Output or None, error message or None)``."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0), None, "invalid arguments"
    try:
        cfg = resolve_settings(args)
        output = COMMANDS[args.verb](cfg)
    except BertrandError as exc:
        return exc.exit_code, None, f"{type(exc).__name__}: {exc}"
    except (ValueError, argparse.ArgumentTypeError) as exc:
        return EXIT_CONFIG, None, f"{type(exc).__name__}: {exc}"
    output.payload["exit_code"] = output.exit_code
    output.cfg = cfg
    return output.exit_code, output, None


def emit(output, cfg, stream=None):
    stream = stream or sys.stdout
    text_json = dumps_json(output.payload)
    text_csv = dumps_csv(*output.table) if output.table is not None else None
    if cfg.get("out"):
        out = Path(cfg["out"])
        write_text(out / f"{output.name}.json", text_json)
        if text_csv is not None:
            write_text(out / f"{output.name}.csv", text_csv)
    if cfg["format"] == "csv" and text_csv is not None:
        stream.write(text_csv)
    else:
        stream.write(text_json)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    code, output, error = execute(argv)
    if output is None:
        if error and error != "invalid arguments":
            print(f"bertrand: {error}", file=sys.stderr)
        return code
    try:
        emit(output, output.cfg)
    except BrokenPipeError:
        # downstream closed early (e.g. piped into head)
        sys.stderr.close()
    return code


if __name__ == "__main__":
    sys.exit(main())
