"""Uniform space-time grids on rectangles with Neumann-compatible operators.

Fields are bare numpy arrays: a spatial field is a flat vector over the
``prod(n_i + 1)`` grid nodes (C order in 2D, axis 0 = x), a space-time field
is an ``(m + 1, nodes)`` array.  The grid carries trapezoid quadrature
weights; every differential operator below is built so that

* the Laplacian is self-adjoint for the weighted inner product and
  annihilates constants,
* the Laplacian and the chemotaxis divergence have exactly zero weighted
  sum (discrete conservation), because their fluxes telescope with zero
  flux through the boundary faces.

These two exact identities carry all the duality bookkeeping downstream,
so they are structural here, not accidental.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels

__all__ = [
    "Grid",
    "build_grid",
    "neumann_laplacian",
    "chemotaxis_divergence",
    "mass",
    "inner",
    "l2_norm",
    "h1_seminorm_sq",
    "box_mask",
]


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on (0,L1)x(0,L2) x (0,T), boundary nodes included.

    ``n`` counts intervals per axis, so each axis carries ``n+1`` nodes and
    ``h = L/n``.  Time has ``m`` steps of size ``dt = T/m``.
    """

    dim: int
    L: tuple[float, ...]
    n: tuple[int, ...]
    T: float
    m: int
    h: tuple[float, ...] = field(init=False)
    dt: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "h", tuple(Li / ni for Li, ni in zip(self.L, self.n)))
        object.__setattr__(self, "dt", self.T / self.m)

    # -- static geometry -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ni + 1 for ni in self.n)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(0.0, Li, ni + 1) for Li, ni in zip(self.L, self.n)]

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.m + 1)

    @property
    def volume(self) -> float:
        return float(np.prod(self.L))

    def axis_weights(self, axis: int) -> np.ndarray:
        """Trapezoid weights along one axis (h/2 at the two end nodes)."""
        w = np.full(self.n[axis] + 1, self.h[axis])
        w[0] = w[-1] = 0.5 * self.h[axis]
        return w

    @property
    def quad_weights(self) -> np.ndarray:
        """Flat quadrature weight per node (tensor product of axis weights)."""
        if self._cache.get("w") is None:
            if self.dim == 1:
                w = self.axis_weights(0)
            else:
                w = np.multiply.outer(self.axis_weights(0), self.axis_weights(1)).ravel()
            self._cache["w"] = w
        return self._cache["w"]

    @property
    def node_coords(self) -> np.ndarray:
        """(num_nodes, dim) array of node coordinates, flat node order."""
        if self.dim == 1:
            return self.axes[0][:, None]
        X, Y = np.meshgrid(self.axes[0], self.axes[1], indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    # -- cached operator matrices ----------------------------------------

    @property
    def _cache(self) -> dict:
        # frozen dataclass: smuggle a mutable cache in via __dict__
        if "_cache_dict" not in self.__dict__:
            object.__setattr__(self, "_cache_dict", {})
        return self.__dict__["_cache_dict"]

    def _axis_laplacian(self, axis: int) -> sp.csr_matrix:
        n = self.n[axis]
        h = self.h[axis]
        main = np.full(n + 1, -2.0)
        off = np.ones(n)
        A = sp.diags([off, main, off], [-1, 0, 1], format="lil")
        A[0, 1] = 2.0
        A[n, n - 1] = 2.0
        return (A / (h * h)).tocsr()

    @property
    def laplacian_matrix(self) -> sp.csr_matrix:
        """Sparse Neumann Laplacian on flat node vectors."""
        if self._cache.get("lap") is None:
            if self.dim == 1:
                A = self._axis_laplacian(0)
            else:
                Ax = self._axis_laplacian(0)
                Ay = self._axis_laplacian(1)
                Ix = sp.identity(self.n[0] + 1, format="csr")
                Iy = sp.identity(self.n[1] + 1, format="csr")
                A = sp.kron(Ax, Iy, format="csr") + sp.kron(Ix, Ay, format="csr")
            self._cache["lap"] = A
        return self._cache["lap"]

    @property
    def laplacian_matrix_T(self) -> sp.csr_matrix:
        if self._cache.get("lapT") is None:
            self._cache["lapT"] = self.laplacian_matrix.T.tocsr()
        return self._cache["lapT"]


def build_grid(dim, L, n, T, m) -> Grid:
    """Validate sizes and assemble a :class:`Grid`.

    ``L`` and ``n`` may be scalars (1D) or length-2 sequences (2D).
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    Lt = tuple(float(x) for x in (np.atleast_1d(L)))
    nt = tuple(int(x) for x in (np.atleast_1d(n)))
    if len(Lt) == 1 and dim == 2:
        Lt = Lt * 2
    if len(nt) == 1 and dim == 2:
        nt = nt * 2
    if len(Lt) != dim or len(nt) != dim:
        raise ValueError("L and n must match dim")
    if any(Li <= 0 for Li in Lt):
        raise ValueError("domain lengths must be positive")
    if any(ni < 8 for ni in nt):
        raise ValueError(f"need at least 8 intervals per axis, got {nt}")
    if T <= 0:
        raise ValueError("final time must be positive")
    if m < 16:
        raise ValueError(f"need at least 16 time steps, got {m}")
    return Grid(dim=dim, L=Lt, n=nt, T=float(T), m=int(m))


def _check_field(f: np.ndarray, grid: Grid) -> None:
    if f.shape != (grid.num_nodes,):
        raise ValueError(
            f"field has shape {f.shape}, grid expects ({grid.num_nodes},)"
        )


def neumann_laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Second-order Laplacian with ghost-node reflection (zero normal derivative)."""
    _check_field(f, grid)
    if grid.dim == 1:
        return _kernels.lap_1d(f, grid.h[0])
    out = _kernels.lap_2d(f.reshape(grid.shape), grid.h[0], grid.h[1])
    return out.ravel()


def chemotaxis_divergence(u: np.ndarray, v: np.ndarray, grid: Grid) -> np.ndarray:
    """Flux-form div(u grad v) with zero normal flux; weighted sum is exactly 0."""
    _check_field(u, grid)
    _check_field(v, grid)
    if grid.dim == 1:
        return _kernels.chemdiv_1d(u, v, grid.h[0], grid.axis_weights(0))
    out = _kernels.chemdiv_2d(
        u.reshape(grid.shape), v.reshape(grid.shape),
        grid.h[0], grid.h[1], grid.axis_weights(0), grid.axis_weights(1),
    )
    return out.ravel()


def mass(f: np.ndarray, grid: Grid) -> float:
    """Trapezoid-rule integral of ``f`` over the domain."""
    _check_field(f, grid)
    return float(grid.quad_weights @ f)


def inner(f: np.ndarray, g: np.ndarray, grid: Grid) -> float:
    """Weighted (trapezoid) L2 inner product."""
    return float((grid.quad_weights * f) @ g)


def l2_norm(f: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(max(inner(f, f, grid), 0.0)))


def h1_seminorm_sq(f: np.ndarray, grid: Grid) -> float:
    """Discrete ``int |grad f|^2``, computed as <-Lap f, f>_W (exact summation
    by parts for the flux-form Laplacian)."""
    return float(max(-inner(neumann_laplacian(f, grid), f, grid), 0.0))


def box_mask(grid: Grid, box) -> np.ndarray:
    """Boolean node mask of an open coordinate box ((lo, hi) per axis)."""
    b = np.atleast_2d(np.asarray(box, dtype=float))
    if b.shape != (grid.dim, 2):
        raise ValueError(f"box must be {grid.dim} (lo, hi) pairs, got {box}")
    pts = grid.node_coords
    m = np.ones(grid.num_nodes, dtype=bool)
    for ax in range(grid.dim):
        m &= (pts[:, ax] > b[ax, 0]) & (pts[:, ax] < b[ax, 1])
    return m
