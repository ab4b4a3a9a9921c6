"""Forward solvers: nonlinear chemotaxis, its parabolic-elliptic limit, and
the linearization around the constant state.

All steppers are implicit Euler by default (``theta = 1``); the nonlinear
solvers also accept ``theta = 0.5`` (Crank-Nicolson) for order studies.  The
chemotaxis term is semi-implicit: linear in the new density, with the
chemical gradient lagged one step.  Every operator involved has exactly zero
weighted sum, so the cell-density mass is conserved to solver roundoff by
construction, with or without control.

The linearized stepper is the operator whose exact algebraic transpose
drives the dual machinery; its one-step block matrix is assembled here and
reused (factorized once per parameter set).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, mass

__all__ = [
    "KSParams",
    "Control",
    "StateTrajectory",
    "BlowUpError",
    "smooth_cutoff",
    "solve_forward_pp",
    "solve_forward_pe",
    "solve_linearized",
]

STEADY_TOL = 1e-12
MASS_TOL = 1e-10


class BlowUpError(RuntimeError):
    """Density norm passed the configured cap (chemotaxis blow-up guard)."""

    def __init__(self, step: int, value: float, cap: float):
        super().__init__(
            f"|u|_inf = {value:.3e} exceeded cap {cap:.3e} at step {step}"
        )
        self.step = step
        self.value = value
        self.cap = cap


@dataclass(frozen=True)
class KSParams:
    """Coupling constants, relaxation parameter and the constant state."""

    a: float
    b: float
    eps: float
    M1: float
    M2: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("coupling constants a, b must be positive")
        if not (0.0 < self.eps <= 1.0):
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")
        if abs(self.a * self.M1 - self.b * self.M2) >= STEADY_TOL:
            raise ValueError(
                f"(M1, M2) is not a steady state: a*M1 - b*M2 = "
                f"{self.a * self.M1 - self.b * self.M2:.3e}"
            )


@dataclass(frozen=True)
class Control:
    """Space-time control amplitude ``g`` and its smooth spatial cutoff."""

    g: np.ndarray    # (m+1, nodes)
    chi: np.ndarray  # (nodes,)

    @staticmethod
    def zero(grid: Grid, chi: np.ndarray) -> "Control":
        return Control(g=np.zeros((grid.m + 1, grid.num_nodes)), chi=chi)


def _smoothstep(r: np.ndarray) -> np.ndarray:
    r = np.clip(r, 0.0, 1.0)
    return r * r * r * (10.0 + r * (-15.0 + 6.0 * r))


def smooth_cutoff(grid: Grid, omega_prime, omega) -> np.ndarray:
    """C^2 plateau cutoff: 1 on omega_prime, 0 outside omega, in [0, 1]."""
    bp = np.atleast_2d(np.asarray(omega_prime, dtype=float))
    bw = np.atleast_2d(np.asarray(omega, dtype=float))
    pts = grid.node_coords
    chi = np.ones(grid.num_nodes)
    for ax in range(grid.dim):
        (a, b), (ap, bpr) = bw[ax], bp[ax]
        x = pts[:, ax]
        up = _smoothstep((x - a) / (ap - a))
        down = _smoothstep((b - x) / (b - bpr))
        chi *= np.where((x > a) & (x < b), np.minimum(up, down), 0.0)
    return chi


@dataclass
class StateTrajectory:
    """Discrete (u, v) or (z, w) fields over all time steps."""

    u: np.ndarray  # (m+1, nodes)
    v: np.ndarray
    params: KSParams
    grid: Grid


def _speye(n: int) -> sp.csr_matrix:
    return sp.identity(n, format="csr")


def _chem_matrix(v: np.ndarray, grid: Grid) -> sp.csr_matrix:
    """Sparse matrix N(v) with N(v) u = div(u grad v), u at the new level."""
    nn = grid.num_nodes
    if grid.dim == 1:
        h = grid.h[0]
        cw = grid.axis_weights(0)
        dv = (v[1:] - v[:-1]) / h          # faces 0..n-1
        lower = np.zeros(nn - 1)
        upper = np.zeros(nn - 1)
        main = np.zeros(nn)
        # out[i] = (G_{i+1/2} - G_{i-1/2}) / cw[i],  G = 0.5 (u_i + u_{i+1}) dv
        main[:-1] += 0.5 * dv / cw[:-1]
        upper[:] += 0.5 * dv / cw[:-1]
        main[1:] -= 0.5 * dv / cw[1:]
        lower[:] -= 0.5 * dv / cw[1:]
        return sp.diags([lower, main, upper], [-1, 0, 1], format="csr")
    # 2D: build rows via COO; same flux form per axis
    v2 = v.reshape(grid.shape)
    nx, ny = grid.shape
    cwx, cwy = grid.axis_weights(0), grid.axis_weights(1)
    rows, cols, vals = [], [], []

    def flat(i, j):
        return i * ny + j

    dvx = (v2[1:, :] - v2[:-1, :]) / grid.h[0]
    for i in range(nx - 1):
        for j in range(ny):
            coeff = 0.5 * dvx[i, j]
            rows += [flat(i, j), flat(i, j), flat(i + 1, j), flat(i + 1, j)]
            cols += [flat(i, j), flat(i + 1, j), flat(i, j), flat(i + 1, j)]
            vals += [coeff / cwx[i], coeff / cwx[i],
                     -coeff / cwx[i + 1], -coeff / cwx[i + 1]]
    dvy = (v2[:, 1:] - v2[:, :-1]) / grid.h[1]
    for i in range(nx):
        for j in range(ny - 1):
            coeff = 0.5 * dvy[i, j]
            rows += [flat(i, j), flat(i, j), flat(i, j + 1), flat(i, j + 1)]
            cols += [flat(i, j), flat(i, j + 1), flat(i, j), flat(i, j + 1)]
            vals += [coeff / cwy[j], coeff / cwy[j],
                     -coeff / cwy[j + 1], -coeff / cwy[j + 1]]
    return sp.coo_matrix((vals, (rows, cols)), shape=(nn, nn)).tocsr()


def _v_step_factor(p: KSParams, grid: Grid, theta: float):
    key = ("vstep", p.a, p.b, p.eps, theta)
    if key not in grid._cache:
        A = grid.laplacian_matrix
        nn = grid.num_nodes
        M = p.eps * _speye(nn) - theta * grid.dt * A + theta * grid.dt * p.b * _speye(nn)
        grid._cache[key] = spla.splu(M.tocsc())
    return grid._cache[key]


def _elliptic_factor(p: KSParams, grid: Grid):
    key = ("ell", p.a, p.b)
    if key not in grid._cache:
        A = grid.laplacian_matrix
        M = -A + p.b * _speye(grid.num_nodes)
        grid._cache[key] = spla.splu(M.tocsc())
    return grid._cache[key]


def _check_traj_shape(f, grid: Grid, name: str):
    if f.shape != (grid.m + 1, grid.num_nodes):
        raise ValueError(
            f"{name} has shape {f.shape}, expected {(grid.m + 1, grid.num_nodes)}"
        )


def _u_advance(u: np.ndarray, v: np.ndarray, grid: Grid, theta: float) -> np.ndarray:
    """One density step: implicit diffusion + semi-implicit chemotaxis, grad v lagged."""
    A = grid.laplacian_matrix
    N = _chem_matrix(v, grid)
    nn = grid.num_nodes
    M = _speye(nn) - theta * grid.dt * (A - N)
    if theta < 1.0:
        rhs = u + (1.0 - theta) * grid.dt * (A @ u - N @ u)
    else:
        rhs = u
    return spla.spsolve(M.tocsc(), rhs)


def solve_forward_pp(p: KSParams, u0: np.ndarray, v0: np.ndarray, c: Control,
                     grid: Grid, blowup_cap: float = 1e6, theta: float = 1.0,
                     coupling: str = "lagged", inner_tol: float = 1e-13,
                     inner_maxit: int = 60) -> StateTrajectory:
    """March the fully parabolic system; raises :class:`BlowUpError` if the
    density norm passes ``blowup_cap``.

    ``coupling='lagged'`` is the default semi-implicit scheme (chemical
    gradient one step behind, no nonlinear solve).  ``coupling='implicit'``
    resolves each step by an inner fixed point so the chemotaxis term and
    the density coupling sit at the new level; this is the stepper whose
    linearization around the constant state equals the linearized block
    stepper exactly, which is what the nonlinear control verification
    requires (the lagged variant differs at O(dt) in the coupling).
    """
    if np.any(u0 < 0) or np.any(v0 < 0):
        raise ValueError("initial data must be nonnegative")
    if coupling not in ("lagged", "implicit"):
        raise ValueError(f"unknown coupling {coupling!r}")
    if coupling == "implicit" and theta != 1.0:
        raise ValueError("implicit coupling is backward-Euler only")
    m, nn = grid.m, grid.num_nodes
    u = np.empty((m + 1, nn))
    v = np.empty((m + 1, nn))
    u[0], v[0] = u0, v0
    lu_v = _v_step_factor(p, grid, theta)
    A = grid.laplacian_matrix
    dt = grid.dt
    for k in range(m):
        if coupling == "lagged":
            u[k + 1] = _u_advance(u[k], v[k], grid, theta)
            g_mix = theta * c.g[k + 1] + (1.0 - theta) * c.g[k]
            u_mix = theta * u[k + 1] + (1.0 - theta) * u[k]
            rhs = p.eps * v[k] + dt * (p.a * u_mix + g_mix * c.chi)
            if theta < 1.0:
                rhs += (1.0 - theta) * dt * (A @ v[k] - p.b * v[k])
            v[k + 1] = lu_v.solve(rhs)
        else:
            uk1, vk1 = u[k].copy(), v[k].copy()
            for _ in range(inner_maxit):
                N = _chem_matrix(vk1, grid)
                M = _speye(nn) - dt * (A - N)
                uk1_new = spla.spsolve(M.tocsc(), u[k])
                vk1_new = lu_v.solve(
                    p.eps * v[k] + dt * (p.a * uk1_new + c.g[k + 1] * c.chi)
                )
                delta = max(
                    float(np.abs(uk1_new - uk1).max()),
                    float(np.abs(vk1_new - vk1).max()),
                )
                uk1, vk1 = uk1_new, vk1_new
                if delta < inner_tol:
                    break
            u[k + 1], v[k + 1] = uk1, vk1
        peak = np.abs(u[k + 1]).max()
        if peak > blowup_cap:
            raise BlowUpError(k + 1, peak, blowup_cap)
    return StateTrajectory(u=u, v=v, params=p, grid=grid)


def solve_forward_pe(p: KSParams, u0: np.ndarray, c: Control, grid: Grid,
                     blowup_cap: float = 1e6, theta: float = 1.0) -> StateTrajectory:
    """March the parabolic-elliptic limit: the chemical solves the elliptic
    problem at every step, so no initial chemical data is needed."""
    if np.any(u0 < 0):
        raise ValueError("initial density must be nonnegative")
    m, nn = grid.m, grid.num_nodes
    u = np.empty((m + 1, nn))
    v = np.empty((m + 1, nn))
    u[0] = u0
    lu_e = _elliptic_factor(p, grid)
    v[0] = lu_e.solve(p.a * u[0] + c.g[0] * c.chi)
    for k in range(m):
        u[k + 1] = _u_advance(u[k], v[k], grid, theta)
        v[k + 1] = lu_e.solve(p.a * u[k + 1] + c.g[k + 1] * c.chi)
        peak = np.abs(u[k + 1]).max()
        if peak > blowup_cap:
            raise BlowUpError(k + 1, peak, blowup_cap)
    return StateTrajectory(u=u, v=v, params=p, grid=grid)


def linearized_block_matrix(p: KSParams, grid: Grid) -> sp.csc_matrix:
    """One-step block matrix C of the linearized implicit Euler stepper:
    C X^{k+1} = diag(I, eps I) X^k + dt (h1, g chi + h2)^{k+1}."""
    A = grid.laplacian_matrix
    nn = grid.num_nodes
    I = _speye(nn)
    dt = grid.dt
    return sp.bmat(
        [
            [I - dt * A, dt * p.M1 * A],
            [-dt * p.a * I, (p.eps + dt * p.b) * I - dt * A],
        ],
        format="csc",
    )


def _linearized_factor(p: KSParams, grid: Grid):
    key = ("lin", p.a, p.b, p.eps, p.M1)
    if key not in grid._cache:
        grid._cache[key] = spla.splu(linearized_block_matrix(p, grid))
    return grid._cache[key]


def solve_linearized(p: KSParams, z0: np.ndarray, w0: np.ndarray, c: Control,
                     h1: np.ndarray | None, h2: np.ndarray | None,
                     grid: Grid) -> StateTrajectory:
    """March the linearization around (M1, M2) with sources (h1, h2).

    Preconditions: the density source h1 must have zero weighted spatial
    mean at every step (membership in the source space), and so must z0;
    violations beyond 1e-10 are rejected.
    """
    nn, m = grid.num_nodes, grid.m
    zeros = np.zeros((m + 1, nn))
    h1 = zeros if h1 is None else h1
    h2 = zeros if h2 is None else h2
    _check_traj_shape(h1, grid, "h1")
    _check_traj_shape(h2, grid, "h2")
    _check_traj_shape(c.g, grid, "control g")

    scale1 = max(1.0, float(np.abs(h1).max()))
    h1_mass = np.array([mass(h1[k], grid) for k in range(m + 1)])
    if np.abs(h1_mass).max() > MASS_TOL * scale1:
        raise ValueError(
            f"h1 must have zero mass at every step; worst |mass| = "
            f"{np.abs(h1_mass).max():.3e}"
        )
    if abs(mass(z0, grid)) > MASS_TOL * max(1.0, float(np.abs(z0).max())):
        raise ValueError(f"z0 must have zero mass, got {mass(z0, grid):.3e}")

    lu = _linearized_factor(p, grid)
    z = np.empty((m + 1, nn))
    w = np.empty((m + 1, nn))
    z[0], w[0] = z0, w0
    dt = grid.dt
    for k in range(m):
        rhs = np.concatenate(
            [
                z[k] + dt * h1[k + 1],
                p.eps * w[k] + dt * (c.g[k + 1] * c.chi + h2[k + 1]),
            ]
        )
        sol = lu.solve(rhs)
        z[k + 1] = sol[:nn]
        w[k + 1] = sol[nn:]
    return StateTrajectory(u=z, v=w, params=p, grid=grid)
