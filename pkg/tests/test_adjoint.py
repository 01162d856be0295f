"""Backward sweep: terminal data, transpose identity, reduced gradient."""

from types import SimpleNamespace

import numpy as np
import pytest

from caginalp_control import (
    AdjointSources,
    CostSpec,
    Field,
    Grid,
    InitialData,
    ModelParams,
    SolverConfig,
    SpaceTimeField,
    TimeGrid,
    default_nonlinearities,
    default_potential,
    evaluate_cost,
    final_conditions,
    laplacian_matrix,
    quadrature_weights,
    reduced_gradient,
    solve_adjoint,
    solve_adjoint_with_sources,
    solve_linearized,
    solve_state,
)
from caginalp_control.oracle import oracle_adjoint
from caginalp_control.state import StateSnapshot


def _desk_params():
    return ModelParams(ell=0.5, lambda_big=0.7, chi=0.3, tau=0.5,
                       lambda_p=0.6, lambda_a=0.2, lambda_e=0.3,
                       lambda_c=0.4, lambda_b=0.3, lambda_d=0.2)


def _smooth_init(grid, rng):
    def bumps(amplitude, offset=0.0):
        values = np.full(grid.shape, offset)
        x = grid.coords(0)
        for mode in range(1, 4):
            values += (rng.normal() * amplitude / mode**2
                       * np.cos(mode * np.pi * x / grid.length[0]))
        return Field(grid, values)

    return InitialData(theta0=bumps(0.1), phi0=bumps(0.4),
                       sigma0=bumps(0.2, offset=0.6))


def _random_control(time_grid, grid, rng, scale=1.0):
    values = rng.normal(size=(time_grid.nt + 1,) + grid.shape) * scale
    values[-1] = 0.0
    return SpaceTimeField(time_grid, grid, values)


def _base_setup(n, nt, rng, t_final=0.2):
    grid = Grid(n, 1.0)
    time_grid = TimeGrid(t_final, nt)
    init = _smooth_init(grid, rng)
    u = _random_control(time_grid, grid, rng, 0.2)
    params = _desk_params()
    nl = default_nonlinearities()
    pot = default_potential()
    cfg = SolverConfig()
    base = solve_state(init, u, cfg, params, nl, pot)
    return grid, time_grid, init, u, params, nl, pot, cfg, base


def _control_pair(h, z_levels, dt, w):
    nt = h.time_grid.nt
    return dt * float(np.sum((h.flat_slices[:nt] * z_levels[:nt]) @ w))


def _source_pair(sources, lin, dt, w):
    value = 0.0
    for src, name in ((sources.s_theta, "zeta"), (sources.s_phi, "xi"),
                      (sources.s_eta, "eta"), (sources.s_sigma, "rho")):
        arr = lin.field_array(name)
        value += dt * float(np.sum((src[1:] * arr[1:]) @ w))
    value += float((sources.g_z * lin.field_array("zeta")[-1]) @ w)
    value += float((sources.g_w * lin.field_array("xi")[-1]) @ w)
    value += float((sources.g_r * lin.field_array("rho")[-1]) @ w)
    return value


def _snapshot(grid, rng, scale=1.0):
    return StateSnapshot(
        theta=Field(grid, rng.normal(size=grid.shape) * scale),
        phi=Field(grid, rng.normal(size=grid.shape) * scale),
        mu=Field(grid, rng.normal(size=grid.shape) * scale),
        sigma=Field(grid, rng.normal(size=grid.shape) * scale),
    )


def test_final_conditions_zero_weights_vanish():
    rng = np.random.default_rng(3)
    grid = Grid(9, 1.0)
    state_t = _snapshot(grid, rng)
    cost = CostSpec(b1=1.0, b2=0.0, b3=1.0, b4=0.0, b5=1.0)
    adj_t = final_conditions(state_t, cost, _desk_params())
    for name in ("z", "p", "q", "r"):
        assert np.all(getattr(adj_t, name).values == 0.0), name


def test_final_conditions_perfect_tracking_vanish():
    rng = np.random.default_rng(5)
    grid = Grid(9, 1.0)
    state_t = _snapshot(grid, rng)
    cost = CostSpec(b1=0.0, b2=1.0, b3=0.0, b4=1.0, b5=1.0,
                    theta_omega=state_t.theta, phi_omega=state_t.phi)
    adj_t = final_conditions(state_t, cost, _desk_params())
    for name in ("z", "p", "q", "r"):
        assert np.all(getattr(adj_t, name).values == 0.0), name


def test_final_conditions_constant_residual():
    # With theta_T - theta_omega = c and b4 = 0, the terminal split gives
    # z = b2*c, v = -ell*b2*c; constants lie in the Laplacian kernel, so p
    # equals v and q vanishes regardless of tau.
    grid = Grid(9, 2.0)
    c = 0.7
    state_t = StateSnapshot(
        theta=Field(grid, np.full(grid.shape, c)),
        phi=Field(grid, np.zeros(grid.shape)),
        mu=Field(grid, np.zeros(grid.shape)),
        sigma=Field(grid, np.zeros(grid.shape)),
    )
    for tau in (0.0, 1.0):
        params = ModelParams(ell=0.5, tau=tau)
        cost = CostSpec(b1=0.0, b2=2.0, b3=0.0, b4=0.0, b5=1.0)
        adj_t = final_conditions(state_t, cost, params)
        assert np.allclose(adj_t.z.values, 2.0 * c, atol=1e-14)
        assert np.allclose(adj_t.p.values, -0.5 * 2.0 * c, atol=1e-12)
        assert np.allclose(adj_t.q.values, 0.0, atol=1e-11)
        assert np.all(adj_t.r.values == 0.0)


def test_final_conditions_tau_zero_is_direct_copy():
    rng = np.random.default_rng(7)
    grid = Grid(9, 1.0)
    state_t = _snapshot(grid, rng)
    params = ModelParams(ell=0.5, tau=0.0)
    cost = CostSpec(b1=0.0, b2=0.3, b3=0.0, b4=0.9, b5=1.0)
    adj_t = final_conditions(state_t, cost, params)
    g_z = 0.3 * state_t.theta.flat
    g_w = 0.9 * state_t.phi.flat
    assert np.allclose(adj_t.z.flat, g_z, atol=1e-15)
    assert np.allclose(adj_t.p.flat, g_w - 0.5 * g_z, atol=1e-15)


def test_zero_cost_gives_zero_adjoint():
    rng = np.random.default_rng(11)
    (_, _, _, _, params, nl, pot, cfg, base) = _base_setup(9, 8, rng)
    cost = CostSpec(b1=0.0, b2=0.0, b3=0.0, b4=0.0, b5=1.0)
    adj = solve_adjoint(base, cost, cfg, params, nl, pot)
    for name in ("z", "p", "q", "r"):
        assert np.all(adj.field_array(name) == 0.0), name


def test_q_equals_minus_laplacian_p_for_cost_sweeps():
    rng = np.random.default_rng(13)
    (grid, time_grid, _, _, params, nl, pot, cfg,
     base) = _base_setup(9, 8, rng)
    cost = CostSpec(b1=1.0, b2=0.6, b3=0.9, b4=0.5, b5=0.5)
    adj = solve_adjoint(base, cost, cfg, params, nl, pot)
    lap = laplacian_matrix(grid)
    p = adj.field_array("p")
    q = adj.field_array("q")
    for level in range(time_grid.nt + 1):
        expected = -(lap @ p[level])
        scale = 1.0 + np.max(np.abs(expected))
        assert np.max(np.abs(q[level] - expected)) / scale <= 1e-12


def test_adjoint_is_linear_in_cost_weights():
    rng = np.random.default_rng(17)
    (_, _, _, _, params, nl, pot, cfg, base) = _base_setup(9, 6, rng)
    cost = CostSpec(b1=0.8, b2=0.6, b3=0.9, b4=0.5, b5=0.5)
    doubled = CostSpec(b1=1.6, b2=1.2, b3=1.8, b4=1.0, b5=0.5)
    adj = solve_adjoint(base, cost, cfg, params, nl, pot)
    adj2 = solve_adjoint(base, doubled, cfg, params, nl, pot)
    for name in ("z", "p", "q", "r"):
        lhs = adj2.field_array(name)
        rhs = 2.0 * adj.field_array(name)
        scale = 1.0 + np.max(np.abs(rhs))
        assert np.max(np.abs(lhs - rhs)) / scale <= 1e-12, name


def test_matches_dense_transpose_on_tiny_grid():
    rng = np.random.default_rng(19)
    (grid, time_grid, _, _, params, nl, pot, cfg,
     base) = _base_setup(4, 3, rng, t_final=0.3)
    nt = time_grid.nt
    total = grid.num_nodes
    sources = AdjointSources(
        time_grid, grid,
        s_theta=np.vstack([np.zeros(total),
                           rng.normal(size=(nt, total))]),
        s_phi=np.vstack([np.zeros(total),
                         rng.normal(size=(nt, total))]),
        s_eta=np.vstack([np.zeros(total),
                         rng.normal(size=(nt, total))]),
        s_sigma=np.vstack([np.zeros(total),
                           rng.normal(size=(nt, total))]),
        g_z=rng.normal(size=total),
        g_w=rng.normal(size=total),
        g_r=rng.normal(size=total),
    )
    adj = solve_adjoint_with_sources(base, sources, cfg, params, nl, pot)
    base_arrays = SimpleNamespace(theta=base.field_array("theta"),
                                  phi=base.field_array("phi"),
                                  sigma=base.field_array("sigma"))
    dense = oracle_adjoint(base_arrays, grid, time_grid, params, nl, pot,
                           {"s_theta": sources.s_theta,
                            "s_phi": sources.s_phi,
                            "s_eta": sources.s_eta,
                            "s_sigma": sources.s_sigma,
                            "g_z": sources.g_z,
                            "g_w": sources.g_w,
                            "g_r": sources.g_r})
    # The sweep stores the multiplier of step m at index m; the oracle
    # stores it at index m + 1.
    for name in ("z", "p", "q", "r"):
        ours = adj.field_array(name)[:nt]
        theirs = dense[name][1:]
        scale = 1.0 + np.max(np.abs(theirs))
        assert np.max(np.abs(ours - theirs)) / scale <= 1e-10, name


def test_dot_product_identity_random_sources():
    rng = np.random.default_rng(23)
    (grid, time_grid, _, _, params, nl, pot, cfg,
     base) = _base_setup(9, 8, rng)
    nt = time_grid.nt
    total = grid.num_nodes
    dt = time_grid.dt
    w = quadrature_weights(grid).ravel()
    worst = 0.0
    for trial in range(10):
        sub = np.random.default_rng([23, trial])
        sources = AdjointSources(
            time_grid, grid,
            s_theta=np.vstack([np.zeros(total),
                               sub.normal(size=(nt, total))]),
            s_phi=np.vstack([np.zeros(total),
                             sub.normal(size=(nt, total))]),
            s_eta=np.vstack([np.zeros(total),
                             sub.normal(size=(nt, total))]),
            s_sigma=np.vstack([np.zeros(total),
                               sub.normal(size=(nt, total))]),
            g_z=sub.normal(size=total),
            g_w=sub.normal(size=total),
            g_r=sub.normal(size=total),
        )
        h = _random_control(time_grid, grid, sub)
        adj = solve_adjoint_with_sources(base, sources, cfg, params, nl,
                                         pot)
        lin = solve_linearized(base, h, cfg, params, nl, pot)
        lhs = _control_pair(h, adj.field_array("z"), dt, w)
        rhs = _source_pair(sources, lin, dt, w)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    assert worst <= 1e-10


def test_duality_identity_for_tracking_cost():
    # The adjoint built from the cost must reproduce the Gateaux derivative
    # of the tracking part of J, written directly from the residuals.
    rng = np.random.default_rng(29)
    (grid, time_grid, _, _, params, nl, pot, cfg,
     base) = _base_setup(9, 8, rng)
    nt = time_grid.nt
    dt = time_grid.dt
    w = quadrature_weights(grid).ravel()
    cost = CostSpec(b1=1.0, b2=0.6, b3=0.9, b4=0.5, b5=0.5)
    adj = solve_adjoint(base, cost, cfg, params, nl, pot)
    theta = base.field_array("theta")
    phi = base.field_array("phi")
    worst = 0.0
    for trial in range(10):
        sub = np.random.default_rng([29, trial])
        h = _random_control(time_grid, grid, sub)
        lin = solve_linearized(base, h, cfg, params, nl, pot)
        zeta = lin.field_array("zeta")
        xi = lin.field_array("xi")
        rhs = 0.0
        for k in range(1, nt):
            rhs += dt * cost.b1 * float((theta[k] * zeta[k]) @ w)
            rhs += dt * cost.b3 * float((phi[k] * xi[k]) @ w)
        rhs += cost.b2 * float((theta[nt] * zeta[nt]) @ w)
        rhs += cost.b4 * float((phi[nt] * xi[nt]) @ w)
        lhs = _control_pair(h, adj.field_array("z"), dt, w)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    assert worst <= 1e-9


def test_gradient_is_control_for_pure_regularization():
    rng = np.random.default_rng(31)
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 8)
    init = _smooth_init(grid, rng)
    u = _random_control(time_grid, grid, rng, 0.4)
    cost = CostSpec(b1=0.0, b2=0.0, b3=0.0, b4=0.0, b5=1.0)
    result = reduced_gradient(u, init, cost, SolverConfig(),
                              _desk_params(), default_nonlinearities(),
                              default_potential())
    assert np.array_equal(result.gradient.values, u.values)


def test_gradient_scales_with_regularization_weight():
    rng = np.random.default_rng(37)
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 8)
    init = _smooth_init(grid, rng)
    u = _random_control(time_grid, grid, rng, 0.4)
    cost = CostSpec(b1=0.0, b2=0.0, b3=0.0, b4=0.0, b5=2.5)
    result = reduced_gradient(u, init, cost, SolverConfig(),
                              _desk_params(), default_nonlinearities(),
                              default_potential())
    assert np.allclose(result.gradient.values, 2.5 * u.values,
                       rtol=0.0, atol=1e-15)


def test_gradient_matches_central_difference():
    rng = np.random.default_rng(41)
    grid = Grid(17, 2.0)
    time_grid = TimeGrid(0.3, 15)
    init = _smooth_init(grid, rng)
    u = _random_control(time_grid, grid, rng, 0.2)
    params = _desk_params()
    nl = default_nonlinearities()
    pot = default_potential()
    cfg = SolverConfig()
    cost = CostSpec(b1=1.0, b2=0.6, b3=0.9, b4=0.5, b5=0.5)
    result = reduced_gradient(u, init, cost, cfg, params, nl, pot)
    dt = time_grid.dt
    w = quadrature_weights(grid).ravel()
    eps = 1e-5
    worst = 0.0
    from caginalp_control import l2q_norm

    for trial in range(5):
        sub = np.random.default_rng([41, trial])
        h = _random_control(time_grid, grid, sub)
        h = (128.0 / l2q_norm(h)) * h
        plus = solve_state(init, u + eps * h, cfg, params, nl, pot)
        minus = solve_state(init, u - eps * h, cfg, params, nl, pot)
        fd = (evaluate_cost(plus, u + eps * h, cost)
              - evaluate_cost(minus, u - eps * h, cost)) / (2.0 * eps)
        paired = _control_pair(h, result.gradient.flat_slices, dt, w)
        worst = max(worst, abs(fd - paired) / max(abs(fd), abs(paired)))
    assert worst <= 1e-6


def test_gradient_result_reports_cost_of_the_sweep():
    rng = np.random.default_rng(43)
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 6)
    init = _smooth_init(grid, rng)
    u = _random_control(time_grid, grid, rng, 0.3)
    params = _desk_params()
    cost = CostSpec(b1=1.0, b2=0.6, b3=0.9, b4=0.5, b5=0.5)
    result = reduced_gradient(u, init, cost, SolverConfig(), params,
                              default_nonlinearities(),
                              default_potential())
    direct = evaluate_cost(result.state, u, cost)
    assert result.cost_value == direct


def test_step_adjoint_level_bounds():
    rng = np.random.default_rng(47)
    (grid, time_grid, _, _, params, nl, pot, cfg,
     base) = _base_setup(9, 4, rng)
    cost = CostSpec(b1=1.0, b2=0.6, b3=0.9, b4=0.5, b5=0.5)
    terminal = final_conditions(base.snapshot(time_grid.nt), cost, params,
                                cfg)
    from caginalp_control import ConfigurationError, step_adjoint_backward

    with pytest.raises(ConfigurationError, match="level"):
        step_adjoint_backward(terminal, base, time_grid.nt, cost, cfg,
                              params, nl, pot)
    with pytest.raises(ConfigurationError, match="level"):
        step_adjoint_backward(terminal, base, -1, cost, cfg, params, nl,
                              pot)
