"""Experiment harness: config parsing, the five commands, CSV/JSON reports.

Usage:  ksctl <command> --config <path> [--section.key=value ...]

Commands: simulate, carleman, control-linear, control-nonlinear, eps-sweep.
Outputs land in ``<outdir>/<command>-<hash>.csv`` and ``.json`` where the
hash digests the fully resolved configuration; rerunning an identical
config at a fixed thread count reproduces the CSV byte for byte (timings
live only in the JSON record).  Exit codes: 0 success, 1 configuration or
usage error, 2 solver non-convergence, 3 invariant falsification.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import _kernels
from .carleman_check import lemma31_report, lemmaA1_report, theorem22_report
from .grid import Grid, build_grid, l2_norm, mass
from .hum_control import ControlProblem, extract_control, solve_dual
from .ks_model import Control, KSParams, smooth_cutoff, solve_forward_pe, solve_forward_pp, solve_linearized
from .nonlinear_control import eps_sweep, picard_solve
from .weights import build_eta0, refined_weights, weight_params

__all__ = ["ExperimentConfig", "parse_config", "run", "main", "ConfigError"]

COMMANDS = ("simulate", "carleman", "control-linear", "control-nonlinear", "eps-sweep")

DEFAULTS: dict = {
    "grid": {"dim": 1, "L": 1.0, "n": 50, "T": 2.4, "m": 100},
    "physics": {
        "a": 10.0, "b": 1.0, "eps": 1.0,
        "eps_list": [1.0, 0.5, 0.1, 0.01, 0.001],
        "M1": 1.0, "M2": 10.0, "delta": 0.01, "mode": 1,
    },
    "weights": {
        "lambda": 1.5, "sigma0": 0.05, "s": None, "s_scan": [1.0, 2.0, 4.0],
        "omega0": [0.30, 0.40], "omega_prime": [0.25, 0.45],
        "omega": [0.20, 0.50],
    },
    "solver": {
        "tol": 1e-6, "maxit": 20, "tau": 1e-8, "damping": 1.0,
        "cg_tol": 1e-12, "cg_maxit": 2000, "weight_floor": 1e-6,
        "n_samples": 20, "seed": 20260809,
    },
    "io": {"outdir": "out", "format": "both"},
}


class ConfigError(ValueError):
    """Carries every violation found, not just the first."""

    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


@dataclass
class ExperimentConfig:
    grid: dict
    physics: dict
    weights: dict
    solver: dict
    io: dict

    def as_dict(self) -> dict:
        return {
            "grid": self.grid, "physics": self.physics,
            "weights": self.weights, "solver": self.solver, "io": self.io,
        }

    @property
    def content_hash(self) -> str:
        # identifies the experiment: io plumbing (output paths) excluded
        payload = {k: v for k, v in self.as_dict().items() if k != "io"}
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    # -- builders ---------------------------------------------------------

    def build_grid(self) -> Grid:
        g = self.grid
        return build_grid(g["dim"], g["L"], g["n"], g["T"], g["m"])

    def params(self, eps: float | None = None) -> KSParams:
        ph = self.physics
        return KSParams(a=ph["a"], b=ph["b"],
                        eps=ph["eps"] if eps is None else float(eps),
                        M1=ph["M1"], M2=ph["M2"])

    def s_value(self, grid: Grid) -> float:
        w = self.weights
        if w.get("s"):
            return float(w["s"])
        return w["sigma0"] * (grid.T**4 + grid.T**8)

    def weight_tables(self, grid: Grid):
        w = self.weights
        eta = build_eta0(grid, w["omega0"], w["omega_prime"], w["omega"])
        params = weight_params(grid.T, w["lambda"], s=self.s_value(grid))
        return eta, refined_weights(eta, params, grid)

    def cutoff(self, grid: Grid) -> np.ndarray:
        return smooth_cutoff(grid, self.weights["omega_prime"], self.weights["omega"])

    def initial_data(self, grid: Grid):
        ph = self.physics
        x = grid.node_coords
        bump = np.cos(ph["mode"] * np.pi * x[:, 0] / grid.L[0])
        if grid.dim == 2:
            bump = bump * np.cos(ph["mode"] * np.pi * x[:, 1] / grid.L[1])
        u0 = ph["M1"] + ph["delta"] * bump
        v0 = np.full(grid.num_nodes, ph["M2"])
        return u0, v0


def _coerce(default, value, key: str, violations: list):
    """Type-guided coercion: YAML reads '1e-14' as a string, so numeric
    fields convert string leaves back to numbers."""
    if isinstance(value, str) and isinstance(default, (int, float)) and not isinstance(default, bool):
        try:
            num = float(value)
        except ValueError:
            violations.append(f"'{key}' must be a number, got {value!r}")
            return default
        return int(num) if isinstance(default, int) and num == int(num) else num
    return value


def _merge(base: dict, override: dict, path="", violations=None) -> dict:
    out = {}
    for key, val in base.items():
        if isinstance(val, dict):
            out[key] = _merge(val, override.get(key, {}) or {}, f"{path}{key}.", violations)
        elif key in override:
            out[key] = _coerce(val, override[key], f"{path}{key}", violations)
        else:
            out[key] = val
    for key in override or {}:
        if key not in base and violations is not None:
            violations.append(f"unknown key '{path}{key}'")
    return out


def _validate(cfg: dict) -> list:
    v = []
    g, ph, w, s = cfg["grid"], cfg["physics"], cfg["weights"], cfg["solver"]
    if g["dim"] not in (1, 2):
        v.append(f"grid.dim must be 1 or 2, got {g['dim']}")
    for name, lo in (("T", 0.0),):
        if not g[name] > lo:
            v.append(f"grid.{name} must be > {lo}")
    ns = np.atleast_1d(g["n"])
    if np.any(ns < 8):
        v.append("grid.n must be at least 8 intervals per axis")
    if g["m"] < 16:
        v.append("grid.m must be at least 16 time steps")
    Ls = np.atleast_1d(g["L"])
    if np.any(np.asarray(Ls, dtype=float) <= 0):
        v.append("grid.L must be positive")

    if not (ph["a"] > 0 and ph["b"] > 0):
        v.append("physics.a and physics.b must be positive")
    all_eps = [ph["eps"]] + list(ph["eps_list"])
    if any(not (0.0 < e <= 1.0) for e in all_eps):
        v.append("every relaxation parameter must lie in (0, 1]")
    if abs(ph["a"] * ph["M1"] - ph["b"] * ph["M2"]) >= 1e-12:
        v.append(
            "steady-state compatibility violated: a*M1 - b*M2 = "
            f"{ph['a'] * ph['M1'] - ph['b'] * ph['M2']:.3e} (must be 0)"
        )
    if ph["delta"] < 0:
        v.append("physics.delta must be nonnegative")

    if w["lambda"] < 1.0:
        v.append("weights.lambda must be >= 1")
    if w.get("s") is None and not w["sigma0"] > 0:
        v.append("weights.sigma0 must be positive when s is not given")

    def boxes_ok():
        dim = g["dim"] if g["dim"] in (1, 2) else 1
        try:
            b0 = np.atleast_2d(np.asarray(w["omega0"], dtype=float))
            bp = np.atleast_2d(np.asarray(w["omega_prime"], dtype=float))
            bw = np.atleast_2d(np.asarray(w["omega"], dtype=float))
            dom = np.array([[0.0, L] for L in np.broadcast_to(
                np.atleast_1d(np.asarray(g["L"], dtype=float)), (dim,))])
        except Exception:
            v.append("control-region boxes must be (lo, hi) pairs per axis")
            return
        for inner_b, outer_b, msg in (
            (b0, bp, "omega0 strictly inside omega_prime"),
            (bp, bw, "omega_prime strictly inside omega"),
            (bw, dom, "omega strictly inside the domain"),
        ):
            if inner_b.shape != (dim, 2) or outer_b.shape[-1] != 2:
                v.append(f"box shapes invalid for dim={dim}")
                return
            if not (np.all(inner_b[:, 0] > outer_b[:, 0])
                    and np.all(inner_b[:, 1] < outer_b[:, 1])):
                v.append(f"nesting rule violated: need {msg}")

    boxes_ok()

    for name in ("tol", "tau", "cg_tol", "weight_floor"):
        if not s[name] >= 0:
            v.append(f"solver.{name} must be nonnegative")
    for name in ("maxit", "cg_maxit", "n_samples"):
        if not s[name] >= 1:
            v.append(f"solver.{name} must be at least 1")
    if not (0.0 < s["damping"] <= 1.0):
        v.append("solver.damping must lie in (0, 1]")
    if cfg["io"]["format"] not in ("csv", "json", "both"):
        v.append("io.format must be csv|json|both")
    return v


def parse_config(path: str | None, overrides: dict | None = None) -> ExperimentConfig:
    """Load, merge with defaults, apply overrides, and validate fully."""
    violations: list = []
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError([f"config {path} is not a key-value mapping"])
    merged = _merge(DEFAULTS, data, violations=violations)
    for dotted, value in (overrides or {}).items():
        parts = dotted.split(".")
        node = merged
        for part in parts[:-1]:
            if part not in node:
                violations.append(f"unknown override section '{dotted}'")
                break
            node = node[part]
        else:
            if parts[-1] not in node:
                violations.append(f"unknown override key '{dotted}'")
            else:
                node[parts[-1]] = _coerce(node[parts[-1]], value, dotted, violations)
    violations += _validate(merged)
    if violations:
        raise ConfigError(violations)
    return ExperimentConfig(**merged)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    return str(x)


def _decimal_from_log(log_value: float) -> str:
    """Scientific-notation literal of exp(log_value) for magnitudes beyond
    the double exponent range."""
    d = log_value / np.log(10.0)
    expo = int(np.floor(d))
    mant = 10.0 ** (d - expo)
    return f"{mant:.6f}e{expo:+d}"


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[h]) for h in header) + "\n")


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(x) for x in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    return obj


def _threads() -> int:
    env = os.environ.get("KSCTL_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


class _Runner:
    def __init__(self, command: str, cfg: ExperimentConfig):
        self.command = command
        self.cfg = cfg
        self.t_start = time.time()
        self.phases: dict = {}

    def phase(self, name: str):
        self.phases[name] = time.time()
        return self

    def finish(self, header, rows, summary, exit_code: int) -> int:
        cfg = self.cfg
        outdir = cfg.io["outdir"]
        os.makedirs(outdir, exist_ok=True)
        stem = os.path.join(outdir, f"{self.command}-{cfg.content_hash}")
        manifest = []
        if cfg.io["format"] in ("csv", "both"):
            _write_csv(stem + ".csv", header, rows)
            manifest.append(stem + ".csv")
        if cfg.io["format"] in ("json", "both"):
            record = {
                "command": self.command,
                "config": cfg.as_dict(),
                "config_hash": cfg.content_hash,
                "kernel_backend": _kernels.backend_name(),
                "threads": _threads(),
                "wall_seconds": time.time() - self.t_start,
                "phase_marks": {
                    k: v - self.t_start for k, v in self.phases.items()
                },
                "outputs": manifest + [stem + ".json"],
                "exit_code": exit_code,
                "summary": _jsonify(summary),
            }
            with open(stem + ".json", "w") as fh:
                json.dump(record, fh, indent=2)
        return exit_code


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_simulate(cfg: ExperimentConfig, runner: _Runner) -> int:
    grid = cfg.build_grid()
    p = cfg.params()
    chi = cfg.cutoff(grid)
    u0, v0 = cfg.initial_data(grid)
    ctl = Control.zero(grid, chi)
    runner.phase("setup")
    pp = solve_forward_pp(p, u0, v0, ctl, grid)
    pe = solve_forward_pe(p, u0, ctl, grid)
    runner.phase("solves")
    rows = []
    for k in range(grid.m + 1):
        rows.append({
            "t": grid.times[k],
            "mass_u_pp": mass(pp.u[k], grid),
            "mass_u_pe": mass(pe.u[k], grid),
            "min_u_pp": float(pp.u[k].min()),
            "max_u_pp": float(pp.u[k].max()),
            "dev_u_pp": l2_norm(pp.u[k] - p.M1, grid),
            "dev_v_pp": l2_norm(pp.v[k] - p.M2, grid),
            "dev_u_pe": l2_norm(pe.u[k] - p.M1, grid),
            "dev_v_pe": l2_norm(pe.v[k] - p.M2, grid),
        })
    m0 = mass(pp.u[0], grid)
    drift_pp = max(abs(r["mass_u_pp"] - m0) for r in rows) / abs(m0)
    drift_pe = max(abs(r["mass_u_pe"] - m0) for r in rows) / abs(m0)
    summary = {
        "mass_drift_pp": drift_pp, "mass_drift_pe": drift_pe,
        "final_dev_u_pp": rows[-1]["dev_u_pp"], "final_dev_u_pe": rows[-1]["dev_u_pe"],
        "negative_density_detected": bool(min(r["min_u_pp"] for r in rows) < 0),
    }
    header = list(rows[0].keys())
    code = 0 if max(drift_pp, drift_pe) < 1e-11 else 3
    if code == 3:
        print(f"ksctl simulate: mass-conservation invariant violated "
              f"(drift {max(drift_pp, drift_pe):.3e})", file=sys.stderr)
    return runner.finish(header, rows, summary, code)


def _cmd_carleman(cfg: ExperimentConfig, runner: _Runner) -> int:
    grid = cfg.build_grid()
    chi = cfg.cutoff(grid)
    eta, _ = cfg.weight_tables(grid)
    lam = cfg.weights["lambda"]
    s_base = cfg.s_value(grid)
    s_list = [mult * s_base for mult in cfg.weights["s_scan"]]
    n_samples = cfg.solver["n_samples"]
    seed = cfg.solver["seed"]
    eps_list = tuple(cfg.physics["eps_list"][:3]) or (cfg.physics["eps"],)
    runner.phase("setup")

    reports = []
    for eps in eps_list:
        reports.append(theorem22_report(
            cfg.params(eps), grid, eta, s_list, lam=lam,
            n_samples=n_samples, seed=seed))
    runner.phase("thm2.2")
    rep31 = lemma31_report(
        cfg.params(), grid, eta, s_list, chi, lam=lam, eps_list=eps_list,
        n_samples=n_samples, seed=seed)
    runner.phase("lem3.1")
    repA = lemmaA1_report(grid, eta, s_list, lam=lam, n_samples=n_samples,
                          seed=seed)
    runner.phase("lemA.1")

    header = ["inequality", "sample_id", "s", "lambda", "eps", "lhs", "rhs", "ratio"]
    rows = []
    falsified = []
    summary: dict = {"c_emp_log": {}, "falsifications": 0}
    for rep in reports + [rep31, repA]:
        for r in rep.rows:
            row = {"inequality": rep.inequality, **{k: r[k] for k in header[1:]}}
            # a ratio beyond double range is still a finite number; print it
            # from its log instead of collapsing to inf
            if np.isinf(row["ratio"]) and np.isfinite(r["log_ratio"]):
                row["ratio"] = _decimal_from_log(r["log_ratio"])
            rows.append(row)
        summary["c_emp_log"][rep.inequality] = {
            f"s={k[0]:g},eps={k[1]:g}": val for k, val in rep.c_emp_log.items()
        }
        if not rep.ok:
            falsified.append(rep.inequality)
            summary["falsifications"] += len(rep.falsifications)
    code = 0 if not falsified else 3
    if falsified:
        print(f"ksctl carleman: falsification events in {falsified}", file=sys.stderr)
    return runner.finish(header, rows, summary, code)


def _control_problem(cfg: ExperimentConfig, grid, weights, chi, p):
    u0, v0 = cfg.initial_data(grid)
    s = cfg.solver
    return ControlProblem(
        params=p, grid=grid, weights=weights, chi=chi,
        z0=u0 - p.M1, w0=v0 - p.M2, tau=s["tau"], cg_tol=s["cg_tol"],
        cg_maxit=s["cg_maxit"], weight_floor=s["weight_floor"],
    )


def _cmd_control_linear(cfg: ExperimentConfig, runner: _Runner) -> int:
    grid = cfg.build_grid()
    p = cfg.params()
    chi = cfg.cutoff(grid)
    _, wt = cfg.weight_tables(grid)
    prob = _control_problem(cfg, grid, wt, chi, p)
    runner.phase("setup")
    dual = solve_dual(prob)
    runner.phase("cg")
    res = extract_control(dual, prob)
    free = solve_linearized(p, prob.z0, prob.w0, Control.zero(grid, chi),
                            None, None, grid)
    free_term = l2_norm(free.u[-1], grid)
    runner.phase("extract")
    row = {
        "eps": p.eps, "tau": prob.tau, "cg_iterations": dual.iterations,
        "cg_converged": dual.converged, "curvature_ok": dual.curvature_ok,
        "terminal_u": res.terminal_u, "terminal_v": res.terminal_v,
        "free_terminal_u": free_term,
        "terminal_ratio": res.terminal_u / free_term if free_term > 0 else 0.0,
        "g_l2h1": res.g_l2h1, "crossval_rel": res.crossval_rel,
        "log_weighted_u": res.log_weighted_u,
        "log_weighted_v": res.log_weighted_v,
        "log_weighted_g": res.log_weighted_g,
    }
    summary = dict(row)
    summary["dual_value"] = dual.value
    code = 0 if dual.converged else 2
    if not dual.curvature_ok:
        code = 3
        print("ksctl control-linear: negative curvature falsifies the discrete "
              "scalar product", file=sys.stderr)
    elif not dual.converged:
        print(f"ksctl control-linear: CG hit maxit={prob.cg_maxit} "
              f"(residual {dual.residual_history[-1]:.3e})", file=sys.stderr)
    return runner.finish(list(row.keys()), [row], summary, code)


def _cmd_control_nonlinear(cfg: ExperimentConfig, runner: _Runner) -> int:
    grid = cfg.build_grid()
    p = cfg.params()
    chi = cfg.cutoff(grid)
    _, wt = cfg.weight_tables(grid)
    u0, v0 = cfg.initial_data(grid)
    s = cfg.solver
    runner.phase("setup")
    result = picard_solve(
        p, u0, v0, wt, chi, grid, tol=s["tol"], maxit=s["maxit"],
        damping=s["damping"], tau=s["tau"], cg_tol=s["cg_tol"],
        cg_maxit=s["cg_maxit"], weight_floor=s["weight_floor"],
    )
    runner.phase("picard")
    rows = [
        {"iteration": i + 1, "terminal_residual": t, "update_norm": u}
        for i, (t, u) in enumerate(zip(result.terminal_history,
                                       result.update_history))
    ]
    summary = {
        "converged": result.converged, "iterations": result.iterations,
        "g_l2h1": result.g_l2h1, "forward_residual": result.forward_residual,
        "forward_residual_lagged": result.forward_residual_lagged,
        "failure_reason": result.failure_reason,
        "e_norm_log_components": {
            k: v["log"] for k, v in (result.e_norm_components or {}).items()
        },
    }
    code = 0 if result.converged else 2
    if not result.converged:
        print(f"ksctl control-nonlinear: {result.failure_reason or 'no convergence'}",
              file=sys.stderr)
    return runner.finish(["iteration", "terminal_residual", "update_norm"],
                         rows, summary, code)


def _cmd_eps_sweep(cfg: ExperimentConfig, runner: _Runner) -> int:
    grid = cfg.build_grid()
    p = cfg.params()
    chi = cfg.cutoff(grid)
    _, wt = cfg.weight_tables(grid)
    u0, v0 = cfg.initial_data(grid)
    s = cfg.solver
    runner.phase("setup")
    report = eps_sweep(
        p, u0, v0, wt, chi, grid, eps_list=cfg.physics["eps_list"],
        max_workers=_threads(), tol=s["tol"], maxit=s["maxit"],
        damping=s["damping"], tau=s["tau"], cg_tol=s["cg_tol"],
        cg_maxit=s["cg_maxit"], weight_floor=s["weight_floor"],
    )
    runner.phase("sweep")
    header = ["eps", "g_l2h1", "iterations", "terminal_residual",
              "forward_residual", "converged"]
    rows = sorted(report.rows + report.excluded, key=lambda r: -r["eps"])
    summary = {
        "uniformity_ratio": report.uniformity_ratio,
        "converged_count": len(report.rows),
        "excluded": [r["eps"] for r in report.excluded],
    }
    code = 0 if not report.excluded else 2
    if report.excluded:
        print(f"ksctl eps-sweep: non-converged eps excluded: "
              f"{[r['eps'] for r in report.excluded]}", file=sys.stderr)
    return runner.finish(header, rows, summary, code)


_DISPATCH = {
    "simulate": _cmd_simulate,
    "carleman": _cmd_carleman,
    "control-linear": _cmd_control_linear,
    "control-nonlinear": _cmd_control_nonlinear,
    "eps-sweep": _cmd_eps_sweep,
}


def run(command: str, cfg: ExperimentConfig) -> int:
    """Execute one command on a validated config; returns the exit code."""
    if command not in _DISPATCH:
        print(f"ksctl: unknown command {command!r}; choose from "
              f"{', '.join(COMMANDS)}", file=sys.stderr)
        return 1
    return _DISPATCH[command](cfg, _Runner(command, cfg))


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # keep exit-code contract: usage errors are 1
        raise ConfigError([message])


def main(argv=None) -> int:
    parser = _Parser(prog="ksctl", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", help=f"one of: {', '.join(COMMANDS)}")
    parser.add_argument("--config", default=None, help="YAML config path")
    try:
        args, extra = parser.parse_known_args(argv)
        overrides = {}
        for token in extra:
            if not token.startswith("--") or "=" not in token:
                raise ConfigError([f"unrecognized argument {token!r}; overrides "
                                   "take the form --section.key=value"])
            dotted, _, raw = token[2:].partition("=")
            overrides[dotted] = yaml.safe_load(raw)
        if args.command not in COMMANDS:
            print(f"ksctl: unknown command {args.command!r}; choose from "
                  f"{', '.join(COMMANDS)}", file=sys.stderr)
            parser.print_usage(sys.stderr)
            return 1
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"ksctl: config error: {violation}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"ksctl: {exc}", file=sys.stderr)
        return 1
    try:
        return run(args.command, cfg)
    except Exception as exc:  # solver-level failures map to exit 2
        print(f"ksctl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
