"""Local null control of the full chemotaxis system by fixed-point iteration.

Shifting to fluctuation variables around the constant state turns the
nonlinear problem into the linearized one driven by its own quadratic
remainder.  The damped Picard loop feeds the remainder of the current
iterate as the density source of the weighted least-squares control solve;
the conservative flux stencil makes that source exactly mean free at every
step, which is the membership condition the source space demands.

On convergence the loop's fixed point is an exact discrete solution of the
implicitly-coupled nonlinear stepper, so the final forward verification
(one nonlinear march with the final control) must land within the stated
multiple of the loop tolerance; this distinguishes true nonlinear control
from mere convergence of the iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .grid import Grid, chemotaxis_divergence, l2_norm, mass
from .hum_control import ControlProblem, apply_L, extract_control, solve_dual
from .ks_model import Control, KSParams, solve_forward_pp, solve_linearized
from .weights import RefinedWeightTable

__all__ = [
    "NonlinearControlResult",
    "SweepReport",
    "picard_solve",
    "eps_sweep",
    "e_norm",
    "delta_radius",
    "bilinear_continuity_ratio",
]


@dataclass
class NonlinearControlResult:
    converged: bool
    iterations: int
    terminal_history: list
    update_history: list
    control: Control | None
    z: np.ndarray | None
    w: np.ndarray | None
    g_l2h1: float
    forward_residual: float
    forward_residual_lagged: float
    failure_reason: str | None = None
    e_norm_components: dict | None = None


@dataclass
class SweepReport:
    """Per-eps control norms from converged runs plus the uniformity ratio."""

    rows: list = field(default_factory=list)
    excluded: list = field(default_factory=list)

    @property
    def uniformity_ratio(self) -> float:
        norms = [r["g_l2h1"] for r in self.rows if r["g_l2h1"] > 0.0]
        if not norms:
            return 1.0
        return max(norms) / min(norms)


def _terminal_norm(z: np.ndarray, w: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(l2_norm(z[-1], grid) ** 2 + l2_norm(w[-1], grid) ** 2))


def picard_solve(p: KSParams, u0: np.ndarray, v0: np.ndarray,
                 weights: RefinedWeightTable, chi: np.ndarray, grid: Grid,
                 tol: float = 1e-6, maxit: int = 20, damping: float = 1.0,
                 tau: float = 1e-8, cg_tol: float = 1e-12, cg_maxit: int = 2000,
                 weight_floor: float = 1e-6,
                 verify: bool = True) -> NonlinearControlResult:
    """Damped Picard iteration on the remainder-driven linear control solves.

    Preconditions: the density initial datum must carry exactly the target
    mass (mass(u0)/|domain| = M1) and both data must be admissible
    fluctuations.  Convergence means terminal residual and update norm both
    under ``tol``; damping halves whenever the terminal residual increases.
    """
    scale = max(1.0, float(np.abs(u0).max()))
    if abs(mass(u0, grid) / grid.volume - p.M1) > 1e-10 * scale:
        raise ValueError(
            f"mean of u0 is {mass(u0, grid) / grid.volume!r}, must equal M1 = {p.M1}"
        )
    z0 = u0 - p.M1
    w0 = v0 - p.M2

    free = solve_linearized(p, z0, w0, Control.zero(grid, chi), None, None, grid)
    z, w = free.u, free.v

    term_hist: list = []
    upd_hist: list = []
    result_ctl = None
    res = None
    converged = False
    best_term = np.inf
    it = 0
    for it in range(1, maxit + 1):
        h1 = np.array(
            [-chemotaxis_divergence(z[k], w[k], grid) for k in range(grid.m + 1)]
        )
        prob = ControlProblem(
            params=p, grid=grid, weights=weights, chi=chi, z0=z0, w0=w0,
            h1=h1, h2=None, tau=tau, cg_tol=cg_tol, cg_maxit=cg_maxit,
            weight_floor=weight_floor,
        )
        res = extract_control(solve_dual(prob), prob)
        z_new, w_new = res.uhat, res.vhat
        term = _terminal_norm(z_new, w_new, grid)
        upd = max(float(np.abs(z_new - z).max()), float(np.abs(w_new - w).max()))
        term_hist.append(term)
        upd_hist.append(upd)
        if term > best_term * 1.5 and damping > 0.1:
            damping *= 0.5
        best_term = min(best_term, term)
        z = (1.0 - damping) * z + damping * z_new
        w = (1.0 - damping) * w + damping * w_new
        result_ctl = res.control
        if term < tol and upd < tol:
            converged = True
            break

    if not converged:
        return NonlinearControlResult(
            converged=False, iterations=it, terminal_history=term_hist,
            update_history=upd_hist, control=result_ctl, z=z, w=w,
            g_l2h1=res.g_l2h1 if res else 0.0,
            forward_residual=np.inf, forward_residual_lagged=np.inf,
            failure_reason="no_convergence",
        )

    fwd_res = 0.0
    fwd_res_lagged = 0.0
    reason = None
    if verify:
        traj = solve_forward_pp(p, u0, v0, result_ctl, grid, coupling="implicit")
        fwd_res = float(np.sqrt(
            l2_norm(traj.u[-1] - p.M1, grid) ** 2
            + l2_norm(traj.v[-1] - p.M2, grid) ** 2
        ))
        lag = solve_forward_pp(p, u0, v0, result_ctl, grid, coupling="lagged")
        fwd_res_lagged = float(np.sqrt(
            l2_norm(lag.u[-1] - p.M1, grid) ** 2
            + l2_norm(lag.v[-1] - p.M2, grid) ** 2
        ))
        if fwd_res >= 2.0 * tol:
            converged = False
            reason = "forward_verification"

    components = e_norm(z, w, result_ctl.g, weights, p, chi, grid,
                        cap=weight_floor)
    return NonlinearControlResult(
        converged=converged, iterations=it, terminal_history=term_hist,
        update_history=upd_hist, control=result_ctl, z=z, w=w,
        g_l2h1=res.g_l2h1, forward_residual=fwd_res,
        forward_residual_lagged=fwd_res_lagged, failure_reason=reason,
        e_norm_components=components,
    )


def eps_sweep(p_template: KSParams, u0: np.ndarray, v0: np.ndarray,
              weights: RefinedWeightTable, chi: np.ndarray, grid: Grid,
              eps_list=(1.0, 0.5, 0.1, 0.01, 0.001), max_workers: int = 1,
              **picard_kwargs) -> SweepReport:
    """Run the Picard control per eps with identical weights and tolerances.

    The weight tables never depend on eps, so they are shared.  Entries that
    fail to converge are excluded from the uniformity ratio and flagged.
    """
    from concurrent.futures import ThreadPoolExecutor

    report = SweepReport()

    def one(eps: float):
        p = KSParams(a=p_template.a, b=p_template.b, eps=float(eps),
                     M1=p_template.M1, M2=p_template.M2)
        return picard_solve(p, u0, v0, weights, chi, grid, **picard_kwargs)

    eps_list = list(eps_list)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(one, eps_list))
    else:
        results = [one(e) for e in eps_list]

    for eps, r in zip(eps_list, results):
        row = {
            "eps": float(eps), "g_l2h1": r.g_l2h1, "iterations": r.iterations,
            "terminal_residual": r.terminal_history[-1] if r.terminal_history else 0.0,
            "forward_residual": r.forward_residual, "converged": r.converged,
        }
        if r.converged:
            report.rows.append(row)
        else:
            report.excluded.append(row)
    return report


# ---------------------------------------------------------------------------
# weighted norms of the fluctuation triplet
# ---------------------------------------------------------------------------


def _capped(profile: np.ndarray, cap: float) -> np.ndarray:
    """Cap a reciprocal log-profile at (its finite minimum) - log(cap);
    cap = 0 keeps the true (uncapped) weights.  NaNs from inf - inf at the
    singular terminal step mean the reciprocal weight blows up there, so
    they are +inf before capping."""
    profile = np.where(np.isnan(profile), np.inf, profile)
    if cap <= 0.0:
        return profile
    finite = profile[np.isfinite(profile)]
    return np.minimum(profile, finite.min() - np.log(cap))


def _log_l2q(log_w: np.ndarray, sq_slices: np.ndarray, dt: float) -> float:
    """log of sum_k dt exp(log_w_k) sq_k over steps with positive samples."""
    with np.errstate(divide="ignore"):
        logs = log_w + np.log(dt * sq_slices)
    keep = np.isfinite(logs)
    if not np.any(keep):
        return float("-inf")
    return float(logsumexp(logs[keep]))


def e_norm(z: np.ndarray, w: np.ndarray, g: np.ndarray,
           weights: RefinedWeightTable, params: KSParams, chi: np.ndarray,
           grid: Grid, cap: float = 0.0) -> dict:
    """Component-wise weighted norms of a fluctuation triplet (z, w, g).

    Returns each component as a log (of the norm) plus the exponentiated
    value; components whose weights blow up at the terminal time can
    legitimately be infinite on arbitrary inputs.  ``cap`` bounds every
    reciprocal weight profile at ``1/cap`` times its minimum, matching the
    working weights of a control solve with ``weight_floor = cap``.

    Components: the three terminal-vanishing state/control weights, the two
    residual weights of the operator pair, and the three regularity weights
    (with the top Sobolev level reduced by one: the grid carries two robust
    derivative levels).
    """
    s = weights.params.s
    dt = grid.dt
    W = grid.quad_weights
    A = grid.laplacian_matrix

    tsb_star = 2.0 * s * weights.beta_star
    tsb_hat = 2.0 * s * weights.beta_hat
    lgs = weights.log_gamma_star
    lgh = weights.log_gamma_hat

    def sq_l2(fields: np.ndarray) -> np.ndarray:
        return np.einsum("kn,n,kn->k", fields, W, fields)

    def sq_h1(fields: np.ndarray) -> np.ndarray:
        lap = (A @ fields.T).T
        return np.maximum(
            sq_l2(fields) + np.einsum("kn,n,kn->k", -lap, W, fields), 0.0
        )

    def sq_h2(fields: np.ndarray) -> np.ndarray:
        lap = (A @ fields.T).T
        return sq_h1(fields) + sq_l2(lap)

    out: dict = {}

    def put(name: str, log_sq: float):
        if np.isneginf(log_sq):
            out[name] = {"log": float("-inf"), "value": 0.0}
        elif not np.isfinite(log_sq):
            out[name] = {"log": float("inf"), "value": float("inf")}
        else:
            out[name] = {
                "log": 0.5 * log_sq,
                "value": float(np.exp(0.5 * log_sq)) if log_sq < 1400 else np.inf,
            }

    # terminal-vanishing weights (slices 1..m pair with the stepper output)
    with np.errstate(invalid="ignore"):
        prof_u = _capped(-(tsb_star + 10.0 * lgs), cap)
        prof_v = _capped(-(tsb_star + 3.0 * lgs), cap)
        prof_g = _capped(-(tsb_star + 18.0 * lgs), cap)
        prof_r1 = _capped(-(tsb_hat + 3.0 * lgh), cap)
        logw5 = _capped(-(weights.two_s_beta + 2.0 * weights.log_gamma), cap)
    put("state_u", _log_l2q(prof_u[:-1], sq_l2(z[1:]), dt))
    put("state_v", _log_l2q(prof_v[:-1], sq_l2(w[1:]), dt))
    put("control_g", _log_l2q(prof_g[:-1], sq_l2(chi[None, :] * g[1:]), dt))

    # residual weights
    L1, L2 = apply_L(z, w, params, grid)
    h2res = L2 - g[1:] * chi[None, :]
    put("residual_density", _log_l2q(prof_r1[:-1], sq_l2(L1), dt))
    # full (x-dependent) weight for the chemical residual, H1 in space
    with np.errstate(over="ignore"):
        weighted = np.exp(0.5 * logw5[1:]) * h2res
    if np.all(np.isfinite(weighted)):
        total5 = float(np.sum(dt * sq_h1(weighted)))
        put("residual_chemical_h1",
            float(np.log(total5)) if total5 > 0.0 else float("-inf"))
    else:
        put("residual_chemical_h1", float("inf"))

    # regularity weights (H2 / H1 levels)
    with np.errstate(invalid="ignore"):
        log_c6 = _capped(0.25 * tsb_star - 0.5 * tsb_hat + (13.0 / 8.0) * lgh, cap)
        log_c7 = _capped(-(0.25 * tsb_star) - (25.0 / 8.0) * lgh, cap)
    l2h2 = _log_l2q(2.0 * log_c6[:-1], sq_h2(z[1:]), dt)
    with np.errstate(divide="ignore"):
        linf_logs = 2.0 * log_c6 + np.log(sq_h1(z))
    finite_linf = linf_logs[np.isfinite(linf_logs)]
    linfh1 = float(finite_linf.max()) if finite_linf.size else float("-inf")
    put("state_u_h2", float(np.logaddexp(l2h2, linfh1)))
    put("state_v_h2", _log_l2q(2.0 * log_c7[:-1], sq_h2(w[1:]), dt))
    put("control_g_h1", _log_l2q(2.0 * log_c7[:-1], sq_h1(g[1:]), dt))

    logs = [v["log"] for v in out.values()]
    if any(np.isposinf(t) for t in logs):
        out["total"] = {"log": float("inf"), "value": float("inf")}
    else:
        finite = [t for t in logs if np.isfinite(t)]
        out["total"] = {
            "log": float(logsumexp(finite)) if finite else float("-inf"),
            "value": float(sum(v["value"] for v in out.values())),
        }
    return out


def delta_radius(p: KSParams, weights: RefinedWeightTable, chi: np.ndarray,
                 grid: Grid, mode: int = 1, delta_lo: float = 0.0,
                 delta_hi: float = 0.64, bisections: int = 6,
                 **picard_kwargs) -> dict:
    """Bisection estimate of the largest cosine-perturbation amplitude the
    Picard loop still controls.  The smallness radius is measured, never
    assumed; the bracket and per-probe outcomes are all reported."""
    x = grid.node_coords[:, 0]
    probes = []

    def attempt(delta: float) -> bool:
        u0 = p.M1 + delta * np.cos(mode * np.pi * x / grid.L[0])
        v0 = np.full_like(x, p.M2)
        if np.any(u0 < 0):
            return False
        try:
            r = picard_solve(p, u0, v0, weights, chi, grid, **picard_kwargs)
        except Exception:
            return False
        probes.append({"delta": delta, "converged": r.converged,
                       "iterations": r.iterations})
        return r.converged

    lo, hi = delta_lo, delta_hi
    if attempt(hi):
        return {"radius_lo": hi, "radius_hi": float("inf"), "probes": probes}
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        if attempt(mid):
            lo = mid
        else:
            hi = mid
    return {"radius_lo": lo, "radius_hi": hi, "probes": probes}


def bilinear_continuity_ratio(z: np.ndarray, w: np.ndarray,
                              weights: RefinedWeightTable, params: KSParams,
                              chi: np.ndarray, grid: Grid,
                              cap: float = 0.0) -> float:
    """Measured continuity constant of the quadratic remainder: the weighted
    source-space norm of div(z grad w) over the product of the two
    regularity norms that bound it."""
    h1 = np.array(
        [-chemotaxis_divergence(z[k], w[k], grid) for k in range(grid.m + 1)]
    )
    comp = e_norm(z, w, np.zeros_like(z), weights, params, chi, grid, cap=cap)
    s = weights.params.s
    with np.errstate(invalid="ignore"):
        w4 = _capped(
            -(2.0 * s * weights.beta_hat + 3.0 * weights.log_gamma_hat), cap
        )[:-1]
    sqs = np.einsum("kn,n,kn->k", h1[1:], grid.quad_weights, h1[1:])
    log_num = 0.5 * _log_l2q(w4, sqs, grid.dt)
    log_den = comp["state_u_h2"]["log"] + comp["state_v_h2"]["log"]
    if not (np.isfinite(log_num) and np.isfinite(log_den)):
        return 0.0 if np.isneginf(log_num) else float("inf")
    return float(np.exp(log_num - log_den))
