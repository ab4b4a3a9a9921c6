import numpy as np
import pytest

from ksctl.grid import box_mask
from ksctl.weights import (
    build_eta0,
    carleman_weights,
    log_weight,
    log_weight_profile,
    weight_params,
)

from conftest import OMEGA, OMEGA0, OMEGA_PRIME


def test_eta0_boundary_and_positivity(grid_small, eta_small):
    assert eta_small.values[0] == 0.0
    assert eta_small.values[-1] == 0.0
    interior = slice(1, -1)
    assert np.all(eta_small.values[interior] > 0.0)


def test_eta0_gradient_nonzero_outside_core(eta_small):
    assert eta_small.min_grad_outside > 0.0


def test_eta0_argmax_inside_core(grid_small, eta_small):
    x = grid_small.axes[0]
    xm = x[int(np.argmax(eta_small.values))]
    assert OMEGA0[0] <= xm <= OMEGA0[1]


def test_eta0_rejects_bad_nesting(grid_small):
    with pytest.raises(ValueError):
        build_eta0(grid_small, (0.30, 0.40), (0.35, 0.45), (0.20, 0.50))
    with pytest.raises(ValueError):
        build_eta0(grid_small, (0.30, 0.40), (0.25, 0.45), (0.25, 1.00))


def test_eta0_2d(grid_2d):
    eta = build_eta0(
        grid_2d,
        ((0.30, 0.40), (0.30, 0.45)),
        ((0.25, 0.45), (0.25, 0.50)),
        ((0.20, 0.50), (0.20, 0.55)),
    )
    # zero on the whole boundary, positive inside, gradient nonzero off-core
    pts = grid_2d.node_coords
    boundary = (
        (pts[:, 0] == 0) | (pts[:, 0] == 1.0) | (pts[:, 1] == 0) | (pts[:, 1] == 1.0)
    )
    assert np.abs(eta.values[boundary]).max() == 0.0
    assert np.all(eta.values[~boundary] > 0.0)
    assert eta.min_grad_outside > 0.0


def test_weight_params_validation():
    with pytest.raises(ValueError):
        weight_params(1.0, lam=0.5)
    p = weight_params(2.0, lam=1.5, sigma0=1.0)
    assert p.s == pytest.approx(2.0**4 + 2.0**8)
    assert p.s_threshold_ok
    assert not weight_params(2.0, s=1.0).s_threshold_ok


def test_alpha_negative_everywhere(grid_small, eta_small):
    wt = carleman_weights(eta_small, weight_params(grid_small.T, 1.5), grid_small)
    assert np.all(wt.alpha[1:-1] < 0.0)


def test_phi_closed_form_at_midpoint(grid_small, eta_small):
    lam = 1.5
    wt = carleman_weights(eta_small, weight_params(grid_small.T, lam), grid_small)
    k = grid_small.m // 2
    i = int(np.argmax(eta_small.values))
    # independent scalar computation of the same quantity
    expected = np.exp(lam * eta_small.values[i]) * (2.0 / grid_small.T) ** 8
    assert wt.phi[k, i] == pytest.approx(expected, rel=1e-13)


def test_extrema_locations(grid_small, eta_small):
    wt = carleman_weights(eta_small, weight_params(grid_small.T, 1.5), grid_small)
    k = grid_small.m // 2
    i_star = int(np.argmax(eta_small.values))
    assert wt.alpha_star[k] == wt.alpha[k, i_star]
    assert wt.alpha_hat[k] == wt.alpha[k, 0]          # boundary node
    assert wt.phi_star[k] >= wt.phi_hat[k] > 0.0


def test_refined_time_profile(grid_small, eta_small, weights_small):
    g, rt = grid_small, weights_small
    wt = carleman_weights(eta_small, rt.params, g)
    kq, kh, k3q = g.m // 4, g.m // 2, 3 * g.m // 4
    assert np.array_equal(rt.beta[kq], rt.beta[kh])       # constant early
    assert np.array_equal(rt.gamma[k3q], wt.phi[k3q])     # matches late
    # the literal testable ordering statement
    t = g.times
    assert np.all(rt.l_profile >= t * (g.T - t) - 1e-15)
    # note the sign: the shared numerator is negative, so the larger profile
    # pulls beta toward zero, i.e. beta >= alpha pointwise
    assert np.all(rt.beta[1:-1] >= wt.alpha[1:-1] - 1e-12)


def test_refined_products_vanish_at_terminal_time(weights_small):
    prof = log_weight_profile(weights_small, "beta_star", 18.0)
    assert np.isneginf(prof[-1])
    assert prof[-2] < prof[len(prof) // 2] - 100.0   # crushed well before T
    with np.errstate(over="ignore"):
        assert np.exp(prof[-1]) == 0.0


def test_log_weight_point_queries(grid_small, weights_small):
    rt = weights_small
    k = grid_small.m // 2
    s2b = log_weight(rt, "beta_star", 0.0, 0, k)
    assert s2b == pytest.approx(2.0 * rt.params.s * rt.beta_star[k], rel=1e-14)
    # singular step: -inf, exp flushes to zero, never NaN
    q = log_weight(rt, "beta", 5.0, 3, grid_small.m)
    assert np.isneginf(q)
    assert np.exp(q) == 0.0


def test_log_weight_rejects_out_of_range_power(weights_small):
    with pytest.raises(ValueError):
        log_weight(weights_small, "beta_star", 25.0, 0, 1)
    with pytest.raises(KeyError):
        log_weight(weights_small, "zeta", 3.0, 0, 1)


def test_log_weight_consistency_with_direct_product(grid_small, eta_small):
    # mild parameters keep the direct product representable
    wt = carleman_weights(
        eta_small, weight_params(grid_small.T, 1.5, sigma0=1e-4), grid_small
    )
    rng = np.random.default_rng(0)
    for _ in range(20):
        node = int(rng.integers(0, grid_small.num_nodes))
        step = int(rng.integers(1, grid_small.m))
        power = float(rng.integers(-4, 19))
        direct = np.exp(2 * wt.params.s * wt.alpha[step, node]) * wt.phi[step, node] ** power
        via_log = np.exp(log_weight(wt, "alpha", power, node, step))
        assert via_log == pytest.approx(direct, rel=1e-10)


def test_stored_logs_finite_on_interior_steps(grid_small, weights_small):
    rt = weights_small
    interior = rt.interior_steps
    assert np.all(np.isfinite(rt.two_s_beta[interior]))
    assert np.all(np.isfinite(rt.log_gamma[interior]))
    assert np.all(np.isfinite(rt.log_gamma_star[interior]))


def test_box_mask_matches_open_box(grid_small):
    m = box_mask(grid_small, OMEGA_PRIME)
    x = grid_small.axes[0]
    assert np.array_equal(m, (x > OMEGA_PRIME[0]) & (x < OMEGA_PRIME[1]))
    assert not np.array_equal(m, box_mask(grid_small, OMEGA))
