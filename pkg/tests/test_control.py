"""Cost functional, admissible box and projected gradient descent."""

import numpy as np
import pytest

from caginalp_control import (
    AdmissibleSet,
    ConfigurationError,
    CostSpec,
    Field,
    Grid,
    InitialData,
    ModelParams,
    Nonlinearities,
    OptimizerConfig,
    OptimizerError,
    SolverConfig,
    SpaceTimeField,
    TimeGrid,
    default_nonlinearities,
    default_potential,
    evaluate_cost,
    project_admissible,
    projected_gradient_descent,
    solve_state,
    stationarity_check,
)
from caginalp_control.oracle import dense_oracle_solve, oracle_cost


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


def _constant_init(grid, theta, phi, sigma):
    return InitialData(
        theta0=Field(grid, np.full(grid.shape, theta)),
        phi0=Field(grid, np.full(grid.shape, phi)),
        sigma0=Field(grid, np.full(grid.shape, sigma)),
    )


def test_cost_zero_when_trajectory_matches_targets():
    rng = np.random.default_rng(3)
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 6)
    init = _smooth_init(grid, rng)
    u = SpaceTimeField.zeros(time_grid, grid)
    params = _desk_params()
    traj = solve_state(init, u, SolverConfig(), params,
                       default_nonlinearities(), default_potential())
    theta = traj.field_array("theta")
    phi = traj.field_array("phi")
    shape = (time_grid.nt + 1,) + grid.shape
    cost = CostSpec(
        b1=1.0, b2=0.6, b3=0.9, b4=0.5, b5=0.5,
        theta_q=SpaceTimeField(time_grid, grid, theta.reshape(shape)),
        phi_q=SpaceTimeField(time_grid, grid, phi.reshape(shape)),
        theta_omega=Field(grid, theta[-1].reshape(grid.shape)),
        phi_omega=Field(grid, phi[-1].reshape(grid.shape)),
    )
    assert evaluate_cost(traj, u, cost) == 0.0


def test_cost_pure_regularization_unit_value():
    # J = 0.5 * b5 * int_0^T ||u||^2 with u = 1 on a unit domain and unit
    # horizon gives exactly b5 / 2.
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(1.0, 10)
    init = _constant_init(grid, 0.0, 1.0, 0.5)
    u = SpaceTimeField.constant(time_grid, grid, 1.0)
    traj = solve_state(init, u, SolverConfig(), ModelParams(),
                       default_nonlinearities(), default_potential())
    cost = CostSpec(b1=0.0, b2=0.0, b3=0.0, b4=0.0, b5=2.0)
    assert evaluate_cost(traj, u, cost) == pytest.approx(1.0, rel=1e-14)


def test_cost_matches_dense_oracle():
    rng = np.random.default_rng(7)
    grid = Grid(4, 1.0)
    time_grid = TimeGrid(0.3, 3)
    params = _desk_params()
    nl = default_nonlinearities()
    pot = default_potential()
    init = InitialData(
        theta0=Field(grid, rng.normal(size=grid.shape) * 0.1),
        phi0=Field(grid, rng.uniform(-0.5, 0.5, size=grid.shape)),
        sigma0=Field(grid, rng.uniform(0.2, 0.8, size=grid.shape)),
    )
    values = rng.normal(size=(time_grid.nt + 1,) + grid.shape) * 0.3
    u = SpaceTimeField(time_grid, grid, values)
    cost = CostSpec(
        b1=1.0, b2=0.6, b3=0.9, b4=0.5, b5=0.5,
        theta_q=SpaceTimeField.constant(time_grid, grid, 0.1),
        phi_q=SpaceTimeField.constant(time_grid, grid, 0.2),
        theta_omega=Field(grid, np.full(grid.shape, 0.05)),
        phi_omega=Field(grid, np.full(grid.shape, 0.3)),
    )
    traj = solve_state(init, u, SolverConfig(), params, nl, pot)
    dense_traj = dense_oracle_solve(init.theta0, init.phi0, init.sigma0,
                                    u, params, nl, pot)
    ours = evaluate_cost(traj, u, cost)
    theirs = oracle_cost(dense_traj, u, cost, grid, time_grid)
    assert ours == pytest.approx(theirs, rel=1e-12)


def test_projection_identity_inside_box():
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 4)
    adm = AdmissibleSet(u_min=-1.0, u_max=1.0)
    u = SpaceTimeField.constant(time_grid, grid, 0.5)
    assert np.array_equal(project_admissible(u, adm).values, u.values)


def test_projection_clamps_to_bounds():
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 4)
    adm = AdmissibleSet(u_min=-1.0, u_max=1.0)
    u = SpaceTimeField.constant(time_grid, grid, 10.0)
    clamped = project_admissible(u, adm)
    assert np.all(clamped.values == 1.0)
    again = project_admissible(clamped, adm)
    assert np.array_equal(again.values, clamped.values)


def test_projection_is_nonexpansive():
    rng = np.random.default_rng(11)
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 4)
    adm = AdmissibleSet(u_min=-0.4, u_max=0.8)
    from caginalp_control import l2q_norm

    for _ in range(20):
        a = SpaceTimeField(
            time_grid, grid,
            rng.normal(size=(time_grid.nt + 1,) + grid.shape) * 3.0)
        b = SpaceTimeField(
            time_grid, grid,
            rng.normal(size=(time_grid.nt + 1,) + grid.shape) * 3.0)
        lhs = l2q_norm(project_admissible(a, adm)
                       - project_admissible(b, adm))
        rhs = l2q_norm(a - b)
        assert lhs <= rhs * (1.0 + 1e-12)


def test_admissible_set_validation():
    with pytest.raises(ConfigurationError, match="empty box"):
        AdmissibleSet(u_min=1.0, u_max=-1.0)
    with pytest.raises(ConfigurationError, match="m_bound"):
        AdmissibleSet(u_min=-3.0, u_max=3.0, m_bound=1.0)
    with pytest.raises(ConfigurationError, match="finite"):
        AdmissibleSet(u_min=float("nan"), u_max=1.0)


def test_cost_spec_validation():
    with pytest.raises(ConfigurationError, match="b5"):
        CostSpec(b1=1.0, b2=1.0, b3=1.0, b4=1.0, b5=0.0)
    with pytest.raises(ConfigurationError, match="b1"):
        CostSpec(b1=-1.0, b2=1.0, b3=1.0, b4=1.0, b5=1.0)


def test_optimizer_config_validation():
    with pytest.raises(ConfigurationError, match="max_iters"):
        OptimizerConfig(max_iters=-1)
    with pytest.raises(ConfigurationError, match="backtrack"):
        OptimizerConfig(backtrack_factor=1.0)
    with pytest.raises(ConfigurationError, match="armijo"):
        OptimizerConfig(armijo_c=0.0)


def test_descent_pure_regularization_reaches_zero():
    # With only the b5 term the exact minimizer over a symmetric box is
    # u = 0 and one exact gradient step from any start lands on it.
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 6)
    init = _constant_init(grid, 0.0, 1.0, 0.5)
    u0 = SpaceTimeField.constant(time_grid, grid, 0.5)
    cost = CostSpec(b1=0.0, b2=0.0, b3=0.0, b4=0.0, b5=1.0)
    adm = AdmissibleSet(u_min=-1.0, u_max=1.0)
    report = projected_gradient_descent(
        u0, init, adm, cost, OptimizerConfig(), SolverConfig(),
        ModelParams(), default_nonlinearities(), default_potential())
    assert report.stop_reason == "stationarity"
    assert np.all(report.final_control.values == 0.0)
    assert report.final_cost == 0.0
    assert len(report.iterates) == 2
    costs = [rec.cost for rec in report.iterates]
    assert costs == sorted(costs, reverse=True)


def test_descent_respects_active_lower_bound():
    # Keeping u >= 0.2 makes the boundary point the constrained minimizer
    # of the pure regularization cost.
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 6)
    init = _constant_init(grid, 0.0, 1.0, 0.5)
    u0 = SpaceTimeField.constant(time_grid, grid, 0.9)
    cost = CostSpec(b1=0.0, b2=0.0, b3=0.0, b4=0.0, b5=1.0)
    adm = AdmissibleSet(u_min=0.2, u_max=1.0)
    report = projected_gradient_descent(
        u0, init, adm, cost, OptimizerConfig(), SolverConfig(),
        ModelParams(), default_nonlinearities(), default_potential())
    assert report.stop_reason == "stationarity"
    values = report.final_control.values[:-1]
    assert np.allclose(values, 0.2, atol=1e-9)
    check = stationarity_check(
        report.final_control, init, adm, cost, SolverConfig(),
        ModelParams(), default_nonlinearities(), default_potential(),
        num_samples=50, seed=5)
    assert check.measure <= 1e-8
    assert np.min(check.vi_samples) >= -1e-10


def test_stationarity_check_flags_nonminimizer():
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 6)
    init = _constant_init(grid, 0.0, 1.0, 0.5)
    u = SpaceTimeField.constant(time_grid, grid, 0.9)
    cost = CostSpec(b1=0.0, b2=0.0, b3=0.0, b4=0.0, b5=1.0)
    adm = AdmissibleSet(u_min=-1.0, u_max=1.0)
    check = stationarity_check(u, init, adm, cost, SolverConfig(),
                               ModelParams(), default_nonlinearities(),
                               default_potential(), num_samples=50,
                               seed=7)
    assert check.measure > 0.1
    assert np.min(check.vi_samples) < 0.0


def test_descent_tracking_cost_decreases_monotonically():
    rng = np.random.default_rng(13)
    grid = Grid(17, 2.0)
    time_grid = TimeGrid(0.3, 15)
    init = _smooth_init(grid, rng)
    params = _desk_params()
    nl = default_nonlinearities()
    pot = default_potential()
    target_u = SpaceTimeField.constant(time_grid, grid, 0.4)
    reference = solve_state(init, target_u, SolverConfig(), params, nl,
                            pot)
    shape = (time_grid.nt + 1,) + grid.shape
    cost = CostSpec(
        b1=1.0, b2=0.6, b3=0.9, b4=0.5, b5=0.5,
        theta_q=SpaceTimeField(
            time_grid, grid,
            reference.field_array("theta").reshape(shape)),
        phi_q=SpaceTimeField(
            time_grid, grid, reference.field_array("phi").reshape(shape)),
        theta_omega=Field(
            grid, reference.field_array("theta")[-1].reshape(grid.shape)),
        phi_omega=Field(
            grid, reference.field_array("phi")[-1].reshape(grid.shape)),
    )
    adm = AdmissibleSet(u_min=-1.0, u_max=1.0)
    u0 = SpaceTimeField.zeros(time_grid, grid)
    report = projected_gradient_descent(
        u0, init, adm, cost, OptimizerConfig(max_iters=5), SolverConfig(),
        params, nl, pot)
    assert report.stop_reason == "max_iters"
    costs = [rec.cost for rec in report.iterates]
    assert all(b < a for a, b in zip(costs, costs[1:]))
    assert report.final_cost == costs[-1]
    assert report.iterates[-1].linear_solves > 0


def test_descent_wraps_solver_failures():
    nl = default_nonlinearities()

    def nan_gate(s):
        return np.full_like(np.asarray(s, dtype=float), np.nan)

    broken = Nonlinearities(
        H_gate=nan_gate, H_gate_prime=nl.H_gate_prime,
        H_gate_second=nl.H_gate_second, K_temp=nl.K_temp,
        K_temp_prime=nl.K_temp_prime, K_temp_second=nl.K_temp_second,
    )
    grid = Grid(9, 1.0)
    time_grid = TimeGrid(0.2, 4)
    init = _constant_init(grid, 0.0, 0.5, 0.5)
    u0 = SpaceTimeField.zeros(time_grid, grid)
    cost = CostSpec(b1=0.0, b2=0.0, b3=0.0, b4=0.0, b5=1.0)
    adm = AdmissibleSet(u_min=-1.0, u_max=1.0)
    with pytest.raises(OptimizerError, match="sweep failed"):
        projected_gradient_descent(
            u0, init, adm, cost, OptimizerConfig(), SolverConfig(),
            ModelParams(lambda_p=1.0), broken, default_potential())
