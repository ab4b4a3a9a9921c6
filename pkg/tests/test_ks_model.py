import numpy as np
import pytest
import scipy.linalg as sla

from ksctl.grid import build_grid, l2_norm, mass
from ksctl.ks_model import (
    BlowUpError,
    Control,
    KSParams,
    smooth_cutoff,
    solve_forward_pe,
    solve_forward_pp,
    solve_linearized,
)

from conftest import OMEGA, OMEGA_PRIME, lowfreq_space_time


def test_params_validation():
    with pytest.raises(ValueError):
        KSParams(a=1.0, b=1.0, eps=1.0, M1=1.0, M2=2.0)   # aM1 != bM2
    with pytest.raises(ValueError):
        KSParams(a=1.0, b=1.0, eps=1.5, M1=1.0, M2=1.0)   # eps outside (0,1]
    with pytest.raises(ValueError):
        KSParams(a=-1.0, b=1.0, eps=1.0, M1=1.0, M2=-1.0)


def test_cutoff_plateau_and_support(grid_small, chi_small):
    x = grid_small.axes[0]
    assert chi_small.min() >= 0.0 and chi_small.max() <= 1.0
    assert np.all(chi_small[(x >= OMEGA_PRIME[0]) & (x <= OMEGA_PRIME[1])] == 1.0)
    assert np.all(chi_small[(x <= OMEGA[0]) | (x >= OMEGA[1])] == 0.0)


def test_steady_state_is_exact_fixed_point(params):
    g = build_grid(1, 1.0, 32, 2.0, 200)
    chi = smooth_cutoff(g, OMEGA_PRIME, OMEGA)
    c = Control.zero(g, chi)
    u0 = np.full(g.num_nodes, params.M1)
    v0 = np.full(g.num_nodes, params.M2)
    pp = solve_forward_pp(params, u0, v0, c, g)
    assert np.abs(pp.u - params.M1).max() < 1e-12 * params.M1
    assert np.abs(pp.v - params.M2).max() < 1e-12 * params.M2
    pe = solve_forward_pe(params, u0, c, g)
    assert np.abs(pe.u - params.M1).max() < 1e-12 * params.M1
    assert np.abs(pe.v - params.M2).max() < 1e-12 * params.M2


@pytest.mark.parametrize("coupling", ["lagged", "implicit"])
def test_mass_conservation_nonlinear(params, coupling):
    g = build_grid(1, 1.0, 40, 1.0, 40)
    chi = smooth_cutoff(g, OMEGA_PRIME, OMEGA)
    rng = np.random.default_rng(5)
    gctl = Control(g=0.1 * lowfreq_space_time(g, rng), chi=chi)
    x = g.axes[0]
    u0 = params.M1 + 0.05 * np.cos(np.pi * x)
    v0 = np.full(g.num_nodes, params.M2)
    traj = solve_forward_pp(params, u0, v0, gctl, g, coupling=coupling)
    m0 = mass(traj.u[0], g)
    drift = max(abs(mass(traj.u[k], g) - m0) for k in range(g.m + 1))
    assert drift < 1e-11 * abs(m0)


def test_perturbation_decays_toward_steady_state(params):
    g = build_grid(1, 1.0, 50, 2.0, 100)
    chi = smooth_cutoff(g, OMEGA_PRIME, OMEGA)
    x = g.axes[0]
    u0 = params.M1 + 0.01 * np.cos(np.pi * x)
    v0 = np.full(g.num_nodes, params.M2)
    traj = solve_forward_pp(params, u0, v0, Control.zero(g, chi), g)
    assert l2_norm(traj.u[-1] - params.M1, g) < 0.5 * l2_norm(u0 - params.M1, g)


def test_pe_limit_of_pp_is_monotone_in_eps():
    g = build_grid(1, 1.0, 40, 1.5, 60)
    chi = smooth_cutoff(g, OMEGA_PRIME, OMEGA)
    c = Control.zero(g, chi)
    x = g.axes[0]
    u0 = 1.0 + 0.01 * np.cos(np.pi * x)
    errs = []
    for eps in (1.0, 0.1, 0.01):
        p = KSParams(a=10.0, b=1.0, eps=eps, M1=1.0, M2=10.0)
        pe = solve_forward_pe(p, u0, c, g)
        pp = solve_forward_pp(p, u0, pe.v[0], c, g)
        errs.append(max(l2_norm(pp.v[k] - pe.v[k], g) for k in range(g.m + 1)))
    assert errs[0] > errs[1] > errs[2]


def test_blowup_guard_raises():
    g = build_grid(1, 1.0, 32, 2.0, 64)
    chi = smooth_cutoff(g, OMEGA_PRIME, OMEGA)
    p = KSParams(a=50.0, b=1.0, eps=1.0, M1=1.0, M2=50.0)  # aggregation-dominated
    x = g.axes[0]
    u0 = p.M1 + 0.05 * np.cos(np.pi * x)
    v0 = np.full(g.num_nodes, p.M2)
    with pytest.raises(BlowUpError):
        solve_forward_pp(p, u0, v0, Control.zero(g, chi), g, blowup_cap=1.2)


def test_crank_nicolson_flag_keeps_steady_state(params):
    g = build_grid(1, 1.0, 32, 1.0, 32)
    chi = smooth_cutoff(g, OMEGA_PRIME, OMEGA)
    u0 = np.full(g.num_nodes, params.M1)
    v0 = np.full(g.num_nodes, params.M2)
    traj = solve_forward_pp(params, u0, v0, Control.zero(g, chi), g, theta=0.5)
    assert np.abs(traj.u - params.M1).max() < 1e-11


def test_linearized_zero_data_is_zero(params, grid_small, chi_small):
    z = np.zeros(grid_small.num_nodes)
    traj = solve_linearized(params, z, z, Control.zero(grid_small, chi_small),
                            None, None, grid_small)
    assert np.abs(traj.u).max() == 0.0
    assert np.abs(traj.v).max() == 0.0


def test_linearized_mass_stays_zero(params, grid_small, chi_small):
    rng = np.random.default_rng(11)
    x = grid_small.axes[0]
    z0 = 0.01 * np.cos(2 * np.pi * x)
    w0 = 0.01 * np.cos(np.pi * x)
    gctl = Control(g=lowfreq_space_time(grid_small, rng), chi=chi_small)
    h1 = lowfreq_space_time(grid_small, rng, zero_mean=True)
    traj = solve_linearized(params, z0, w0, gctl, h1, None, grid_small)
    worst = max(abs(mass(traj.u[k], grid_small)) for k in range(grid_small.m + 1))
    assert worst < 1e-11


def test_linearized_rejects_nonzero_mean_sources(params, grid_small, chi_small):
    nn, m = grid_small.num_nodes, grid_small.m
    bad = np.ones((m + 1, nn))
    zero = np.zeros(nn)
    with pytest.raises(ValueError, match="zero mass"):
        solve_linearized(params, zero, zero, Control.zero(grid_small, chi_small),
                         bad, None, grid_small)
    with pytest.raises(ValueError, match="zero mass"):
        solve_linearized(params, np.ones(nn), zero,
                         Control.zero(grid_small, chi_small), None, None, grid_small)


def mode_oracle(p, mu, t, z0, w0):
    """Closed form of the per-mode 2x2 system via the matrix exponential."""
    A = np.array([[-mu, p.M1 * mu], [p.a / p.eps, -(p.b + mu) / p.eps]])
    return sla.expm(A * t) @ np.array([z0, w0])


def test_linearized_matches_mode_oracle(params):
    g = build_grid(1, 1.0, 200, 1.0, 400)
    chi = smooth_cutoff(g, OMEGA_PRIME, OMEGA)
    x = g.axes[0]
    cosx = np.cos(np.pi * x)
    traj = solve_linearized(params, 0.01 * cosx, np.zeros_like(x),
                            Control.zero(g, chi), None, None, g)
    nrm = np.dot(cosx, cosx)
    zm = np.dot(traj.u[-1], cosx) / nrm
    wm = np.dot(traj.v[-1], cosx) / nrm
    zs, ws = mode_oracle(params, np.pi**2, g.T, 0.01, 0.0)
    assert abs(zm - zs) + abs(wm - ws) < 2e-5
