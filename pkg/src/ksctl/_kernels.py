"""Stencil kernels: numba-jitted hot paths with a pure-numpy fallback.

The backend is chosen once at import time from the environment variable
``KSCTL_BACKEND``:

* ``auto`` (default) - use numba if it imports, else numpy
* ``numba``          - require numba, fail loudly if missing
* ``numpy``          - force the pure-numpy path

Both backends implement the same arithmetic (identical stencil
coefficients); they may differ in the last bits through summation order.
A run is deterministic for a fixed backend, which is why the flag is an
environment variable and not a per-call option.

All kernels act on flat node vectors (1D) or on C-ordered ``(nx+1, ny+1)``
arrays (2D).  Boundary rows encode homogeneous Neumann data by ghost-node
reflection, which keeps every operator here exactly conservative with
respect to the trapezoid quadrature.
"""

from __future__ import annotations

import os

import numpy as np

_REQUESTED = os.environ.get("KSCTL_BACKEND", "auto").strip().lower()
if _REQUESTED not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"KSCTL_BACKEND must be one of auto|numba|numpy, got {_REQUESTED!r}"
    )

if _REQUESTED in ("auto", "numba"):
    try:
        from numba import njit

        _HAVE_NUMBA = True
    except ImportError:
        if _REQUESTED == "numba":
            raise
        _HAVE_NUMBA = False
else:
    _HAVE_NUMBA = False

BACKEND = "numba" if _HAVE_NUMBA else "numpy"


def backend_name() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return BACKEND


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def _lap_1d_np(f: np.ndarray, h: float) -> np.ndarray:
    out = np.empty_like(f)
    inv = 1.0 / (h * h)
    out[1:-1] = (f[:-2] - 2.0 * f[1:-1] + f[2:]) * inv
    out[0] = 2.0 * (f[1] - f[0]) * inv
    out[-1] = 2.0 * (f[-2] - f[-1]) * inv
    return out


def _lap_2d_np(f: np.ndarray, hx: float, hy: float) -> np.ndarray:
    # f has shape (nx+1, ny+1); stencil applied along each axis separately.
    out = np.empty_like(f)
    ix = 1.0 / (hx * hx)
    iy = 1.0 / (hy * hy)
    out[1:-1, :] = (f[:-2, :] - 2.0 * f[1:-1, :] + f[2:, :]) * ix
    out[0, :] = 2.0 * (f[1, :] - f[0, :]) * ix
    out[-1, :] = 2.0 * (f[-2, :] - f[-1, :]) * ix
    out[:, 1:-1] += (f[:, :-2] - 2.0 * f[:, 1:-1] + f[:, 2:]) * iy
    out[:, 0] += 2.0 * (f[:, 1] - f[:, 0]) * iy
    out[:, -1] += 2.0 * (f[:, -2] - f[:, -1]) * iy
    return out


def _chemdiv_1d_np(u: np.ndarray, v: np.ndarray, h: float, cw: np.ndarray) -> np.ndarray:
    """Conservative div(u grad v): face-averaged u, centered grad v, zero flux
    through the boundary faces.  ``cw`` are the per-node trapezoid cell widths."""
    flux = 0.5 * (u[:-1] + u[1:]) * (v[1:] - v[:-1]) / h
    out = np.zeros_like(u)
    out[:-1] += flux
    out[1:] -= flux
    return out / cw


def _chemdiv_2d_np(
    u: np.ndarray, v: np.ndarray, hx: float, hy: float,
    cwx: np.ndarray, cwy: np.ndarray,
) -> np.ndarray:
    fx = 0.5 * (u[:-1, :] + u[1:, :]) * (v[1:, :] - v[:-1, :]) / hx
    fy = 0.5 * (u[:, :-1] + u[:, 1:]) * (v[:, 1:] - v[:, :-1]) / hy
    dx = np.zeros_like(u)
    dx[:-1, :] += fx
    dx[1:, :] -= fx
    dy = np.zeros_like(u)
    dy[:, :-1] += fy
    dy[:, 1:] -= fy
    return dx / cwx[:, None] + dy / cwy[None, :]


# ---------------------------------------------------------------------------
# numba twins
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _lap_1d_nb(f, h):  # pragma: no cover - exercised via dispatch
        n = f.shape[0]
        out = np.empty_like(f)
        inv = 1.0 / (h * h)
        out[0] = 2.0 * (f[1] - f[0]) * inv
        for i in range(1, n - 1):
            out[i] = (f[i - 1] - 2.0 * f[i] + f[i + 1]) * inv
        out[n - 1] = 2.0 * (f[n - 2] - f[n - 1]) * inv
        return out

    @njit(cache=True)
    def _lap_2d_nb(f, hx, hy):  # pragma: no cover
        nx, ny = f.shape
        out = np.empty_like(f)
        ix = 1.0 / (hx * hx)
        iy = 1.0 / (hy * hy)
        for i in range(nx):
            im = i - 1 if i > 0 else 1
            ip = i + 1 if i < nx - 1 else nx - 2
            for j in range(ny):
                jm = j - 1 if j > 0 else 1
                jp = j + 1 if j < ny - 1 else ny - 2
                out[i, j] = (f[im, j] - 2.0 * f[i, j] + f[ip, j]) * ix + (
                    f[i, jm] - 2.0 * f[i, j] + f[i, jp]
                ) * iy
        return out

    @njit(cache=True)
    def _chemdiv_1d_nb(u, v, h, cw):  # pragma: no cover
        n = u.shape[0]
        out = np.zeros_like(u)
        for i in range(n - 1):
            flux = 0.5 * (u[i] + u[i + 1]) * (v[i + 1] - v[i]) / h
            out[i] += flux
            out[i + 1] -= flux
        for i in range(n):
            out[i] /= cw[i]
        return out

    @njit(cache=True)
    def _chemdiv_2d_nb(u, v, hx, hy, cwx, cwy):  # pragma: no cover
        nx, ny = u.shape
        out = np.zeros_like(u)
        for i in range(nx - 1):
            for j in range(ny):
                flux = 0.5 * (u[i, j] + u[i + 1, j]) * (v[i + 1, j] - v[i, j]) / hx
                out[i, j] += flux / cwx[i]
                out[i + 1, j] -= flux / cwx[i + 1]
        for i in range(nx):
            for j in range(ny - 1):
                flux = 0.5 * (u[i, j] + u[i, j + 1]) * (v[i, j + 1] - v[i, j]) / hy
                out[i, j] += flux / cwy[j]
                out[i, j + 1] -= flux / cwy[j + 1]
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def lap_1d(f: np.ndarray, h: float) -> np.ndarray:
    if _HAVE_NUMBA:
        return _lap_1d_nb(f, h)
    return _lap_1d_np(f, h)


def lap_2d(f: np.ndarray, hx: float, hy: float) -> np.ndarray:
    if _HAVE_NUMBA:
        return _lap_2d_nb(f, hx, hy)
    return _lap_2d_np(f, hx, hy)


def chemdiv_1d(u: np.ndarray, v: np.ndarray, h: float, cw: np.ndarray) -> np.ndarray:
    if _HAVE_NUMBA:
        return _chemdiv_1d_nb(u, v, h, cw)
    return _chemdiv_1d_np(u, v, h, cw)


def chemdiv_2d(
    u: np.ndarray, v: np.ndarray, hx: float, hy: float,
    cwx: np.ndarray, cwy: np.ndarray,
) -> np.ndarray:
    if _HAVE_NUMBA:
        return _chemdiv_2d_nb(u, v, hx, hy, cwx, cwy)
    return _chemdiv_2d_np(u, v, hx, hy, cwx, cwy)
