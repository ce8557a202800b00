"""Command-line front end: ``polycurve <command> [options]``.

Exit codes: 0 success, 1 verification failed, 2 validation error,
3 numerical non-convergence, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from . import families as fam
from .ambient import CircleAnsatzCurve, DiscreteCurve, curve_from_dict, curve_to_dict, sample
from .geometry import frenet_data
from .residuals import (
    conjecture_probe,
    residual_extrinsic,
    residual_geodesic,
    residual_intrinsic,
    residual_ode,
)
from .variational import FlowOptions, euler_lagrange_residual_generic, gradient_flow

EXIT_OK, EXIT_FAILED, EXIT_VALIDATION, EXIT_NONCONVERGENCE, EXIT_IO = 0, 1, 2, 3, 4

COMMANDS = ("verify", "residual", "classify", "solve", "minimize", "sweep", "probe")
CONFIG_KEYS = {"command", "inputs", "params", "output", "format"}
ODE_NAMES = {2: "residual_biharmonic_ode", 3: "residual_triharmonic_ode", 4: "residual_fourharmonic_ode"}


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    """Raised after artifacts are written when an iteration did not converge."""


def _bool(v):
    if isinstance(v, bool):
        return v
    if str(v).lower() in ("1", "true", "yes"):
        return True
    if str(v).lower() in ("0", "false", "no"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _int(v):
    if isinstance(v, bool):
        raise ConfigError(f"not an integer: {v!r}")
    f = float(v)
    if f != int(f):
        raise ConfigError(f"not an integer: {v!r}")
    return int(f)


def _choice(*opts):
    def conv(v):
        if v not in opts:
            raise ConfigError(f"expected one of {opts}, got {v!r}")
        return v
    return conv


FAMILIES = ("great-circle", "r-circle", "circle", "biharmonic-two-freq", "triharmonic-two-freq")

# per-command parameter schema: name -> (converter, default)
SCHEMA: Dict[str, Dict[str, tuple]] = {
    "verify": {"family": (_choice(*FAMILIES), None), "r": (_int, None), "a2": (float, None),
               "n": (_int, 3), "tol": (float, 1e-8)},
    "residual": {"kind": (_choice("intrinsic", "ode", "extrinsic", "geodesic", "euler-lagrange"), "intrinsic"),
                 "r": (_int, None), "lagrangian": (str, None), "full": (_bool, True)},
    "classify": {"K": (float, 1.0), "r": (_int, None), "k": (float, None), "tau": (float, None),
                 "tol": (float, fam.TOL_CLASS)},
    "solve": {"system": (_choice("single-freq", "triharmonic-two-freq", "biharmonic-three-freq"), None),
              "r": (_int, None), "n_freq": (_int, 25), "n_simplex": (_int, 16),
              "random_seeds": (_int, 0), "seed": (_int, 0), "tol": (float, 1e-12)},
    "minimize": {"r": (_int, 2), "mode": (_choice("full", "restricted"), "restricted"),
                 "alpha2": (float, None), "N": (_int, 128), "max_iters": (_int, 5000),
                 "tol_flow": (float, 1e-6), "perturb": (float, 0.0)},
    "sweep": {"grid": (_choice("single-freq", "two-freq"), "single-freq"), "r": (_int, None),
              "a2_min": (float, 0.5), "a2_max": (float, 5.0), "n": (_int, 50),
              "b2_min": (float, None), "b2_max": (float, None), "nb": (_int, None),
              "refine": (_bool, True)},
    "probe": {"alpha": (float, None), "beta": (float, None), "s_min": (float, 1.0),
              "s_max": (float, 10.0), "n": (_int, 200)},
}
DEFAULT_FORMAT = {"classify": "csv", "sweep": "csv"}


@dataclass
class RunConfig:
    command: str
    inputs: List[str] = field(default_factory=list)
    params: Dict[str, Any] = field(default_factory=dict)
    output: Optional[str] = None
    format: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "command" not in data:
            raise ConfigError("config needs a command")
        cfg = cls(data["command"], list(data.get("inputs", [])), dict(data.get("params", {})),
                  data.get("output"), data.get("format"))
        cfg.validate()
        return cfg

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        schema = SCHEMA[self.command]
        unknown = set(self.params) - set(schema)
        if unknown:
            raise ConfigError(f"unknown parameters for {self.command}: {sorted(unknown)}")
        clean = {}
        for name, (conv, default) in schema.items():
            v = self.params.get(name)
            if v is None:
                clean[name] = default
            else:
                try:
                    clean[name] = conv(v)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"parameter {name}: {exc}") from exc
        self.params = clean
        if self.format is None:
            self.format = DEFAULT_FORMAT.get(self.command, "json")
        if self.format not in ("json", "csv"):
            raise ConfigError(f"format must be json or csv, got {self.format!r}")
        if not all(isinstance(p, str) for p in self.inputs):
            raise ConfigError("inputs must be paths")
        return self


# ---------------------------------------------------------------------------
# Serialization


def _fmt_real(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 0) -> str:
    """JSON with reals at 17 significant digits; keys keep insertion order."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_real(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _csv_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else format(float(v), ".17g")
    return "" if v is None else str(v)


def to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.writer(buf, lineterminator="\n")
    header = list(rows[0])
    w.writerow(header)
    for row in rows:
        w.writerow([_csv_cell(row.get(h)) for h in header])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Helpers


def load_curve(path: str):
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return curve_from_dict(data)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _threads() -> int:
    v = os.environ.get("POLYCURVE_THREADS")
    if v is None:
        return 1
    try:
        n = int(v)
    except ValueError as exc:
        raise ConfigError(f"POLYCURVE_THREADS must be an integer, got {v!r}") from exc
    if n < 1:
        raise ConfigError("POLYCURVE_THREADS must be >= 1")
    return n


def _pmap(fn: Callable, items: Sequence) -> list:
    n = _threads()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _need(p: dict, *names):
    missing = [n for n in names if p.get(n) is None]
    if missing:
        raise ConfigError(f"missing parameters: {missing}")


def build_family(p: dict):
    """Curve and the natural r for a named family."""
    name, n = p["family"], p["n"]
    if name == "great-circle":
        return fam.make_great_circle(n), p.get("r") or 2
    if name == "r-circle":
        _need(p, "r")
        return fam.make_r_circle(p["r"], n), p["r"]
    if name == "circle":
        _need(p, "a2")
        return fam.make_circle(p["a2"], n), p.get("r") or 2
    if name == "biharmonic-two-freq":
        _need(p, "a2")
        return fam.make_biharmonic_two_freq(math.sqrt(p["a2"]), n), p.get("r") or 2
    _need(p, "a2")
    return fam.make_triharmonic_two_freq(p["a2"], n), p.get("r") or 3


def _mean_frenet(curve) -> dict:
    fd = frenet_data(curve)
    k = float(np.mean(fd.k))
    tau = float(np.mean(np.abs(fd.tau))) if fd.tau_defined.all() else None
    return {"k": k, "tau_abs": tau, "k_spread": float(np.ptp(fd.k)),
            "tau_defined": bool(fd.tau_defined.all())}


def _classify_curve(curve, r: int) -> dict:
    fr = _mean_frenet(curve)
    chk = fam.check_relation(1.0, r, fr["k"], fr["tau_abs"] or 0.0)
    return {**fr, "relation_lhs": chk.lhs, "relation_rhs": chk.rhs, "relation_satisfied": chk.satisfied}


# ---------------------------------------------------------------------------
# Commands; each returns (payload, csv_rows or None, exit_code)


def cmd_verify(cfg: RunConfig):
    p = cfg.params
    if cfg.inputs:
        curve = load_curve(cfg.inputs[0])
        r = p["r"] or 2
    else:
        _need(p, "family")
        curve, r = build_family(p)
    tol = p["tol"]
    out: Dict[str, Any] = {"command": "verify", "r": r, "tol": tol, "curve": curve_to_dict(curve),
                           "residuals": {}}
    passed = True
    if r in ODE_NAMES:
        rep = residual_ode(curve, r)
        out["residuals"][ODE_NAMES[r]] = rep.to_dict(full=False)
        passed &= rep.max_norm <= tol
    if not (isinstance(curve, DiscreteCurve) and 2 * r > 8):
        rep = residual_intrinsic(curve, r)
        out["residuals"]["residual_intrinsic"] = rep.to_dict(full=False)
        passed &= rep.max_norm <= tol
    out["classification"] = _classify_curve(curve, r)
    out["passed"] = bool(passed)
    rows = [{"check": k, "max_norm": v["max_norm"], "l2_norm": v["l2_norm"]} for k, v in out["residuals"].items()]
    return out, rows, EXIT_OK if passed else EXIT_FAILED


def cmd_residual(cfg: RunConfig):
    p = cfg.params
    if len(cfg.inputs) != 1:
        raise ConfigError("residual needs exactly one input curve")
    curve = load_curve(cfg.inputs[0])
    kind, r = p["kind"], p["r"]
    if kind == "geodesic":
        rep = residual_geodesic(curve)
    elif kind == "euler-lagrange":
        _need(p, "lagrangian")
        rep = euler_lagrange_residual_generic(p["lagrangian"], curve, r)
    else:
        _need(p, "r")
        rep = {"intrinsic": residual_intrinsic, "ode": residual_ode, "extrinsic": residual_extrinsic}[kind](curve, r)
    lam = rep.lambda_estimate
    rows = [{"s": float(s), "residual": float(v), "lambda": None if lam is None else float(lam[i])}
            for i, (s, v) in enumerate(zip(rep.s, rep.per_sample))]
    return rep.to_dict(full=p["full"]), rows, EXIT_OK


def cmd_classify(cfg: RunConfig):
    p = cfg.params
    if cfg.inputs:
        _need(p, "r")
        rows = []
        for path in cfg.inputs:
            curve = load_curve(path)
            c = _classify_curve(curve, p["r"])
            rows.append({"input": path, "K": 1.0, "r": p["r"], "k": c["k"], "tau": c["tau_abs"],
                         "lhs": c["relation_lhs"], "rhs": c["relation_rhs"],
                         "satisfied": c["relation_satisfied"]})
    else:
        _need(p, "r", "k", "tau")
        if p["r"] < 1:
            raise ConfigError("r must be >= 1")
        chk = fam.check_relation(p["K"], p["r"], p["k"], p["tau"], p["tol"])
        rows = [{"K": chk.K, "r": chk.r, "k": chk.k, "tau": chk.tau, "lhs": chk.lhs, "rhs": chk.rhs,
                 "satisfied": chk.satisfied}]
    return {"command": "classify", "rows": rows}, rows, EXIT_OK


def cmd_solve(cfg: RunConfig):
    p = cfg.params
    _need(p, "system")
    system = p["system"]
    if system == "single-freq":
        _need(p, "r")
        roots = fam.solve_single_freq_polynomial(p["r"])
        rows = [{"a2": rt.value, "multiplicity": rt.multiplicity, "is_geodesic": rt.is_geodesic} for rt in roots]
        return {"command": "solve", "system": system, "r": p["r"], "roots": rows}, rows, EXIT_OK
    if system == "biharmonic-three-freq":
        sol = fam.solve_biharmonic_three_freq()
        rows = [{**sol.unknowns, "residual": sol.residual, "is_geodesic": sol.is_geodesic}]
        return {"command": "solve", "system": system, "solutions": [sol.to_dict()]}, rows, EXIT_OK
    seeds = fam.default_triharmonic_seeds(p["n_freq"], p["n_simplex"])
    if p["random_seeds"]:
        rng = np.random.default_rng(p["seed"])
        n = p["random_seeds"]
        A, B = rng.uniform(0.05, 6.0, n), rng.uniform(0.05, 6.0, n)
        q = rng.uniform(0.0, 1.0, n)
        seeds = np.vstack([seeds, np.c_[A, B, q, 1 - q, rng.uniform(-10, 10, n)]])
    res = fam.solve_triharmonic_two_freq(seeds, tol=p["tol"])
    sols = [s.to_dict() for s in res.solutions]
    rows = [{**s.unknowns, "residual": s.residual, "is_geodesic": s.is_geodesic} for s in res.solutions]
    out = {"command": "solve", "system": system, "n_seeds": int(len(seeds)),
           "n_solutions": len(sols), "n_proper": len(res.proper), "n_failures": len(res.failures),
           "only_geodesic": len(res.proper) == 0, "solutions": sols}
    return out, rows, EXIT_OK if sols else EXIT_NONCONVERGENCE


def cmd_minimize(cfg: RunConfig):
    p = cfg.params
    r = p["r"]
    if cfg.inputs:
        initial = load_curve(cfg.inputs[0])
    else:
        _need(p, "alpha2")
        if not 0.0 < p["alpha2"] < 1.0:
            raise ConfigError("alpha2 must lie in (0, 1)")
        initial = sample(fam.make_circle(1.0 / p["alpha2"]), p["N"])
    if p["perturb"]:
        if isinstance(initial, CircleAnsatzCurve):
            initial = sample(initial, p["N"])
        X = initial.samples.copy()
        X[:, -1] += p["perturb"] * np.sin(3 * 2 * np.pi * initial.s / initial.L)
        initial = DiscreteCurve.from_points(X, initial.L)
    opts = FlowOptions(mode=p["mode"], max_iters=p["max_iters"], tol_flow=p["tol_flow"])
    trace = gradient_flow(initial, r, opts, N=p["N"])
    rows = [vars(it) for it in trace.iterations]
    code = EXIT_OK if trace.status == "converged" else EXIT_NONCONVERGENCE
    return trace.to_dict(), rows, code


def _single_freq_row(r: int, a2: float) -> dict:
    row = {"a2": a2, "alpha2": 1.0 / a2, "feasible": a2 >= 1.0}
    if a2 < 1.0:
        return {**row, "residual": math.nan, "k": math.nan, "tau": math.nan,
                "relation_residual": math.nan, "satisfied": False}
    curve = fam.make_circle(a2)
    rep = residual_ode(curve, r) if r in ODE_NAMES else residual_intrinsic(curve, r)
    fd = frenet_data(curve)
    k = float(np.mean(fd.k))
    chk = fam.check_relation(1.0, r, k, 0.0)
    return {**row, "residual": rep.max_norm, "k": k, "tau": 0.0,
            "relation_residual": abs(chk.lhs - chk.rhs), "satisfied": chk.satisfied}


def _two_freq_row(r: int, a2: float, b2: float) -> dict:
    row = {"a2": a2, "b2": b2}
    p = (1.0 - b2) / (a2 - b2) if a2 != b2 else math.nan
    if not (0.0 < p < 1.0):
        return {**row, "alpha1_sq": p, "feasible": False, "residual": math.nan, "k": math.nan,
                "tau": math.nan, "relation_residual": math.nan, "satisfied": False}
    curve = fam.make_two_freq(a2, b2, p)
    rep = residual_ode(curve, r) if r in ODE_NAMES else residual_intrinsic(curve, r)
    fd = frenet_data(curve)
    k = float(np.mean(fd.k))
    tau = float(np.mean(np.abs(fd.tau))) if fd.tau_defined.all() else 0.0
    chk = fam.check_relation(1.0, r, k, tau)
    return {**row, "alpha1_sq": p, "feasible": True, "residual": rep.max_norm, "k": k, "tau": tau,
            "relation_residual": abs(chk.lhs - chk.rhs), "satisfied": chk.satisfied}


def refine_minimum(r: int, lo: float, hi: float) -> float:
    """Bounded scalar minimization of the single-frequency residual on [lo, hi]."""
    from scipy.optimize import minimize_scalar

    f = lambda a2: _single_freq_row(r, float(a2))["residual"]
    return float(minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                 options={"xatol": 1e-12}).x)


def sweep_single_freq(r: int, a2_values: Sequence[float], refine: bool = True) -> List[dict]:
    rows = _pmap(lambda a2: _single_freq_row(r, float(a2)), sorted(a2_values))
    res = [row["residual"] if row["feasible"] else math.inf for row in rows]
    for i, row in enumerate(rows):
        left = res[i - 1] if i > 0 else math.inf
        right = res[i + 1] if i + 1 < len(rows) else math.inf
        is_min = row["feasible"] and res[i] <= left and res[i] <= right
        row["local_min"] = bool(is_min)
        row["refined_a2"] = math.nan
        if is_min and refine:
            lo = max(rows[i - 1]["a2"], 1.0) if i > 0 else row["a2"]
            hi = rows[i + 1]["a2"] if i + 1 < len(rows) else row["a2"]
            row["refined_a2"] = refine_minimum(r, lo, hi) if hi > lo else row["a2"]
    return rows


def sweep_two_freq(r: int, a2_values: Sequence[float], b2_values: Sequence[float]) -> List[dict]:
    grid = [(float(a), float(b)) for a in sorted(a2_values) for b in sorted(b2_values)]
    return _pmap(lambda ab: _two_freq_row(r, *ab), grid)


def cmd_sweep(cfg: RunConfig):
    p = cfg.params
    _need(p, "r")
    if p["n"] < 1 or not p["a2_min"] <= p["a2_max"]:
        raise ConfigError("empty grid")
    a2 = np.linspace(p["a2_min"], p["a2_max"], p["n"])
    if p["grid"] == "single-freq":
        rows = sweep_single_freq(p["r"], a2, p["refine"])
    else:
        b_lo = p["a2_min"] if p["b2_min"] is None else p["b2_min"]
        b_hi = p["a2_max"] if p["b2_max"] is None else p["b2_max"]
        nb = p["n"] if p["nb"] is None else p["nb"]
        if nb < 1 or not b_lo <= b_hi:
            raise ConfigError("empty grid")
        rows = sweep_two_freq(p["r"], a2, np.linspace(b_lo, b_hi, nb))
    return {"command": "sweep", "grid": p["grid"], "r": p["r"], "rows": rows}, rows, EXIT_OK


def cmd_probe(cfg: RunConfig):
    p = cfg.params
    _need(p, "alpha", "beta")
    rep = conjecture_probe(p["alpha"], p["beta"], (p["s_min"], p["s_max"]), p["n"])
    rows = [{"s": float(s), "value": float(v)} for s, v in zip(rep.s, rep.values)]
    out = {"command": "probe", "alpha": p["alpha"], "beta": p["beta"], **rep.to_dict()}
    return out, rows, EXIT_OK


HANDLERS = {"verify": cmd_verify, "residual": cmd_residual, "classify": cmd_classify, "solve": cmd_solve,
            "minimize": cmd_minimize, "sweep": cmd_sweep, "probe": cmd_probe}


def render(cfg: RunConfig, payload, rows) -> str:
    if cfg.format == "csv":
        return to_csv(rows)
    return dumps(payload) + "\n"


def run(cfg: RunConfig, stdout=None) -> int:
    """Execute a validated config; writes the artifact only on success paths."""
    stdout = stdout or sys.stdout
    cfg.validate()
    payload, rows, code = HANDLERS[cfg.command](cfg)
    text = render(cfg, payload, rows)
    if cfg.output:
        tmp = cfg.output + ".tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, cfg.output)
    else:
        stdout.write(text)
    return code


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polycurve", description="Polyharmonic curves on spheres.")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("inputs", nargs="*", help="curve JSON files")
        sp.add_argument("--config", help="RunConfig JSON; flags override its params")
        sp.add_argument("--output", "-o")
        sp.add_argument("--format", choices=("json", "csv"))
        for key in SCHEMA[name]:
            sp.add_argument(f"--{key.replace('_', '-')}", dest=f"p_{key}")
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    if ns.config:
        with open(ns.config) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{ns.config}: invalid JSON ({exc})") from exc
        if isinstance(data, dict) and data.get("command", ns.command) != ns.command:
            raise ConfigError("config command does not match the subcommand")
        cfg = RunConfig.from_dict({**data, "command": ns.command}) if isinstance(data, dict) \
            else RunConfig.from_dict(data)
        params = dict(cfg.params)
    else:
        cfg = RunConfig(ns.command)
        params = {}
    for key, value in vars(ns).items():
        if key.startswith("p_") and value is not None:
            params[key[2:]] = value
    cfg.params = params
    if ns.inputs:
        cfg.inputs = list(ns.inputs)
    if ns.output:
        cfg.output = ns.output
    if ns.format:
        cfg.format = ns.format
    return cfg.validate()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.print_help(sys.stderr)
        return EXIT_VALIDATION
    try:
        cfg = config_from_args(ns)
        return run(cfg)
    except OSError as exc:
        print(f"polycurve: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ConfigError) as exc:
        print(f"polycurve: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, RuntimeError) as exc:
        print(f"polycurve: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
