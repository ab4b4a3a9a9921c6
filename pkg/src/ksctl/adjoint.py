"""Backward solver for the adjoint pair and the discrete duality audit.

Discretize-then-transpose: the backward one-step operator is the exact
adjoint (with respect to the trapezoid inner product) of the forward
linearized block matrix.  Writing the forward step as

    C X^{k+1} = D X^k + dt F^{k+1},      D = diag(I, eps I),

the adjoint recursion is  C* P^k = D P^{k+1} + dt G^{k+1}  marched from the
terminal data, and summation by parts gives the exact identity

    sum_k dt <(z,w)^k, (F1,F2)^k>  +  <z^m, phiT> + eps <w^m, xiT>
      = sum_k dt <h1^k, phi^{k-1}> + dt <(g chi + h2)^k, xi^{k-1}>
        + <z^0, phi^0> + eps <w^0, xi^0>,

whose residual :func:`duality_gap` reports.  The one-step index offset on
the right is the footprint of implicit Euler; it is part of the contract,
not an approximation, and every consumer (the weighted least-squares dual
form in particular) pairs sources with states in exactly this way.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, inner, mass
from .ks_model import Control, KSParams, StateTrajectory, _speye

__all__ = [
    "AdjointTrajectory",
    "DualityMismatchError",
    "solve_adjoint",
    "solve_backward_heat",
    "duality_gap",
    "duality_terms",
]


class DualityMismatchError(ValueError):
    """Primal and adjoint trajectories disagree on grid or relaxation."""


@dataclass
class AdjointTrajectory:
    """Adjoint pair marched backward from (phiT, xiT) with sources (f1, f2)."""

    phi: np.ndarray  # (m+1, nodes)
    xi: np.ndarray
    phiT: np.ndarray
    xiT: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    params: KSParams
    grid: Grid


def adjoint_block_matrix(p: KSParams, grid: Grid) -> sp.csc_matrix:
    """Weighted-inner-product adjoint C* of the forward one-step matrix.

    Because the discrete Laplacian is self-adjoint for the trapezoid weights
    and every other block is a scalar multiple of the identity, C* is
    obtained by transposing the off-diagonal blocks while keeping the
    Laplacian itself untouched.
    """
    A = grid.laplacian_matrix
    nn = grid.num_nodes
    I = _speye(nn)
    dt = grid.dt
    return sp.bmat(
        [
            [I - dt * A, -dt * p.a * I],
            [dt * p.M1 * A, (p.eps + dt * p.b) * I - dt * A],
        ],
        format="csc",
    )


def _adjoint_factor(p: KSParams, grid: Grid):
    key = ("adj", p.a, p.b, p.eps, p.M1)
    if key not in grid._cache:
        grid._cache[key] = spla.splu(adjoint_block_matrix(p, grid))
    return grid._cache[key]


def solve_adjoint(p: KSParams, phiT: np.ndarray, xiT: np.ndarray,
                  f1: np.ndarray | None, f2: np.ndarray | None,
                  grid: Grid) -> AdjointTrajectory:
    """Backward march of the adjoint system.

    The terminal datum phiT must have zero weighted mean; it is projected
    (mean subtracted) and a warning is emitted when the correction exceeds
    1e-10.  Source slice k+1 enters the step that produces time level k,
    mirroring the forward stepper (see module docstring).
    """
    nn, m = grid.num_nodes, grid.m
    zeros = np.zeros((m + 1, nn))
    f1 = zeros if f1 is None else f1
    f2 = zeros if f2 is None else f2
    if f1.shape != (m + 1, nn) or f2.shape != (m + 1, nn):
        raise ValueError("adjoint sources must have shape (m+1, nodes)")

    mean = mass(phiT, grid) / grid.volume
    if abs(mean) > 1e-10 * max(1.0, float(np.abs(phiT).max())):
        warnings.warn(
            f"phiT mean {mean:.3e} projected out (zero-mean terminal constraint)",
            stacklevel=2,
        )
    phiT = phiT - mean

    lu = _adjoint_factor(p, grid)
    phi = np.empty((m + 1, nn))
    xi = np.empty((m + 1, nn))
    phi[m], xi[m] = phiT, xiT
    dt = grid.dt
    for k in range(m - 1, -1, -1):
        rhs = np.concatenate(
            [
                phi[k + 1] + dt * f1[k + 1],
                p.eps * xi[k + 1] + dt * f2[k + 1],
            ]
        )
        sol = lu.solve(rhs)
        phi[k] = sol[:nn]
        xi[k] = sol[nn:]
    return AdjointTrajectory(
        phi=phi, xi=xi, phiT=phiT, xiT=xiT, f1=f1, f2=f2, params=p, grid=grid
    )


def solve_backward_heat(phiT: np.ndarray, source: np.ndarray, grid: Grid) -> np.ndarray:
    """Backward heat march -phi_t - Lap phi = source with Neumann data.

    Used by the transposition-inequality sampler, where the source is the
    Laplacian of a smooth control field.
    """
    nn, m = grid.num_nodes, grid.m
    if source.shape != (m + 1, nn):
        raise ValueError("source must have shape (m+1, nodes)")
    key = ("bheat",)
    if key not in grid._cache:
        M = _speye(nn) - grid.dt * grid.laplacian_matrix
        grid._cache[key] = spla.splu(M.tocsc())
    lu = grid._cache[key]
    phi = np.empty((m + 1, nn))
    phi[m] = phiT
    for k in range(m - 1, -1, -1):
        phi[k] = lu.solve(phi[k + 1] + grid.dt * source[k + 1])
    return phi


def duality_terms(primal: StateTrajectory, adj: AdjointTrajectory, c: Control,
                  h1: np.ndarray | None, h2: np.ndarray | None):
    """Both sides of the discrete transposition identity, term by term.

    Returns (lhs, rhs, scale): lhs collects the adjoint-source pairings plus
    terminal pairings, rhs the forward-source and initial pairings; scale is
    the sum of absolute values of every term (for relative gap reporting).
    """
    grid = primal.grid
    if adj.grid is not grid and (
        adj.grid.dim != grid.dim or adj.grid.n != grid.n
        or adj.grid.L != grid.L or adj.grid.m != grid.m
        or adj.grid.T != grid.T
    ):
        raise DualityMismatchError("primal and adjoint live on different grids")
    if adj.params.eps != primal.params.eps:
        raise DualityMismatchError(
            f"eps mismatch: primal {primal.params.eps}, adjoint {adj.params.eps}"
        )
    m = grid.m
    dt = grid.dt
    nn = grid.num_nodes
    zeros = np.zeros((m + 1, nn))
    h1 = zeros if h1 is None else h1
    h2 = zeros if h2 is None else h2

    w = grid.quad_weights
    eps = primal.params.eps

    def pair(traj_slices, src_slices):
        # sum_k dt <a^k, b^k>_W over the given index pairs
        return dt * float(np.einsum("kn,n,kn->", traj_slices, w, src_slices))

    lhs_terms = [
        pair(primal.u[1:], adj.f1[1:]),
        pair(primal.v[1:], adj.f2[1:]),
        inner(primal.u[m], adj.phiT, grid),
        eps * inner(primal.v[m], adj.xiT, grid),
    ]
    gchi = c.g[1:] * c.chi[None, :]
    rhs_terms = [
        pair(adj.phi[:-1], h1[1:]),
        pair(adj.xi[:-1], gchi),
        pair(adj.xi[:-1], h2[1:]),
        inner(primal.u[0], adj.phi[0], grid),
        eps * inner(primal.v[0], adj.xi[0], grid),
    ]
    scale = sum(abs(t) for t in lhs_terms + rhs_terms)
    return sum(lhs_terms), sum(rhs_terms), scale


def duality_gap(primal: StateTrajectory, adj: AdjointTrajectory, c: Control,
                h1: np.ndarray | None, h2: np.ndarray | None) -> float:
    """Absolute residual of the transposition identity (machine-zero when the
    primal really solves the forward problem with the given data)."""
    lhs, rhs, _ = duality_terms(primal, adj, c, h1, h2)
    return abs(lhs - rhs)
