import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksctl.grid import (
    build_grid,
    chemotaxis_divergence,
    inner,
    mass,
    neumann_laplacian,
)


def test_build_grid_1d_spacing():
    g = build_grid(1, 1.0, 100, 1.0, 200)
    assert g.h == (0.01,)
    assert g.dt == 0.005
    assert g.num_nodes == 101


def test_build_grid_2d_node_count():
    g = build_grid(2, (1, 1), (32, 32), 0.5, 64)
    assert g.shape == (33, 33)
    assert g.num_nodes == 33 * 33


@pytest.mark.parametrize(
    "args",
    [
        (1, 1.0, 4, 1.0, 200),     # n below minimum
        (1, 1.0, 100, 1.0, 8),     # m below minimum
        (3, 1.0, 100, 1.0, 200),   # dim outside {1,2}
        (1, -1.0, 100, 1.0, 200),  # negative length
        (1, 1.0, 100, -1.0, 200),  # negative final time
    ],
)
def test_build_grid_rejects(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_laplacian_annihilates_constants():
    g = build_grid(1, 1.0, 50, 1.0, 20)
    out = neumann_laplacian(np.full(g.num_nodes, 3.7), g)
    assert np.all(out == 0.0)


def test_laplacian_second_order_1d():
    errs = []
    for n in (100, 200):
        g = build_grid(1, 1.0, n, 1.0, 20)
        x = g.axes[0]
        f = np.cos(np.pi * x)
        errs.append(np.abs(neumann_laplacian(f, g) + np.pi**2 * f).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


def test_laplacian_second_order_2d():
    errs = []
    for n in (16, 32):
        g = build_grid(2, (1.0, 1.0), (n, n), 1.0, 20)
        pts = g.node_coords
        f = np.cos(np.pi * pts[:, 0]) * np.cos(2 * np.pi * pts[:, 1])
        errs.append(np.abs(neumann_laplacian(f, g) + 5 * np.pi**2 * f).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)


@pytest.mark.parametrize("dim", [1, 2])
def test_laplacian_self_adjoint(dim):
    g = build_grid(dim, 1.0 if dim == 1 else (1.0, 0.8), 24, 1.0, 20)
    rng = np.random.default_rng(3)
    f = rng.standard_normal(g.num_nodes)
    h = rng.standard_normal(g.num_nodes)
    gap = abs(inner(neumann_laplacian(f, g), h, g) - inner(f, neumann_laplacian(h, g), g))
    assert gap < 1e-12 * max(1.0, abs(inner(f, h, g)))


def test_laplacian_matrix_matches_kernel():
    g = build_grid(2, (1.0, 1.0), (10, 14), 1.0, 20)
    rng = np.random.default_rng(1)
    f = rng.standard_normal(g.num_nodes)
    assert np.abs(g.laplacian_matrix @ f - neumann_laplacian(f, g)).max() < 1e-12


def test_chemotaxis_zero_for_constant_v():
    g = build_grid(1, 1.0, 40, 1.0, 20)
    u = np.random.default_rng(0).standard_normal(g.num_nodes)
    out = chemotaxis_divergence(u, np.full(g.num_nodes, 2.0), g)
    assert np.all(out == 0.0)


def test_chemotaxis_constant_u_reduces_to_laplacian():
    g = build_grid(1, 1.0, 200, 1.0, 20)
    x = g.axes[0]
    v = np.cos(np.pi * x)
    u = np.full(g.num_nodes, 2.0)
    out = chemotaxis_divergence(u, v, g)
    # exactly 2 * discrete Laplacian, hence within O(h^2) of the analytic one
    assert np.abs(out - 2.0 * neumann_laplacian(v, g)).max() < 1e-11
    assert np.abs(out + 2.0 * np.pi**2 * v).max() < 2e-3


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_chemotaxis_mass_free_property(seed):
    g = build_grid(1, 1.0, 32, 1.0, 20)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(g.num_nodes)
    v = rng.standard_normal(g.num_nodes)
    assert abs(mass(chemotaxis_divergence(u, v, g), g)) < 1e-13 * (
        1.0 + np.abs(u).max() * np.abs(v).max()
    )


def test_chemotaxis_mass_free_2d():
    g = build_grid(2, (1.0, 1.0), (11, 13), 1.0, 20)
    rng = np.random.default_rng(7)
    u = rng.standard_normal(g.num_nodes)
    v = rng.standard_normal(g.num_nodes)
    assert abs(mass(chemotaxis_divergence(u, v, g), g)) < 1e-13


def test_mass_examples():
    g = build_grid(1, 1.0, 64, 1.0, 20)
    assert mass(np.full(g.num_nodes, 2.0), g) == pytest.approx(2.0, abs=1e-14)
    assert mass(g.axes[0], g) == pytest.approx(0.5, abs=1e-12)
    assert mass(np.zeros(g.num_nodes), g) == 0.0


def test_chemotaxis_second_order_vs_analytic():
    errs = []
    for n in (100, 200):
        g = build_grid(1, 1.0, n, 1.0, 20)
        x = g.axes[0]
        u = 1.0 + 0.3 * np.cos(np.pi * x)
        v = np.cos(2 * np.pi * x)
        analytic = u * (-4 * np.pi**2 * np.cos(2 * np.pi * x)) + (
            -0.3 * np.pi * np.sin(np.pi * x)) * (-2 * np.pi * np.sin(2 * np.pi * x))
        errs.append(np.abs(chemotaxis_divergence(u, v, g) - analytic).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.25)
