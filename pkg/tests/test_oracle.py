"""Dense reference implementations: size caps and hand-checked values."""

import numpy as np
import pytest

from caginalp_control import (
    ConfigurationError,
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
    final_conditions,
)
from caginalp_control.oracle import (
    dense_laplacian,
    dense_oracle_solve,
    dense_weights,
    oracle_terminal_conditions,
)
from caginalp_control.state import StateSnapshot


def test_size_cap_on_axis_width():
    grid = Grid(6, 1.0)
    time_grid = TimeGrid(0.1, 2)
    zero = Field(grid, np.zeros(grid.shape))
    u = SpaceTimeField.zeros(time_grid, grid)
    with pytest.raises(ConfigurationError, match="refuses"):
        dense_oracle_solve(zero, zero, zero, u, ModelParams(),
                           default_nonlinearities(), default_potential())


def test_size_cap_on_step_count():
    grid = Grid(4, 1.0)
    time_grid = TimeGrid(0.4, 4)
    zero = Field(grid, np.zeros(grid.shape))
    u = SpaceTimeField.zeros(time_grid, grid)
    with pytest.raises(ConfigurationError, match="refuses"):
        dense_oracle_solve(zero, zero, zero, u, ModelParams(),
                           default_nonlinearities(), default_potential())


def test_dense_laplacian_hand_stencil():
    lap = dense_laplacian((3,), (0.5,))
    expected = np.array([[-2.0, 2.0, 0.0],
                         [1.0, -2.0, 1.0],
                         [0.0, 2.0, -2.0]]) / 0.25
    assert np.array_equal(lap, expected)


def test_dense_weights_hand_values():
    w = dense_weights((4,), (0.5,))
    assert np.array_equal(w, np.array([0.25, 0.5, 0.5, 0.25]))
    w2 = dense_weights((3, 3), (1.0, 1.0))
    expected = np.outer([0.5, 1.0, 0.5], [0.5, 1.0, 0.5]).ravel()
    assert np.array_equal(w2, expected)


def test_terminal_conditions_match_fast_path():
    rng = np.random.default_rng(3)
    grid = Grid(4, 1.0)
    theta_t = rng.normal(size=grid.shape)
    phi_t = rng.normal(size=grid.shape)
    cost = CostSpec(
        b1=0.0, b2=0.7, b3=0.0, b4=1.3, b5=1.0,
        theta_omega=Field(grid, rng.normal(size=grid.shape)),
        phi_omega=Field(grid, rng.normal(size=grid.shape)),
    )
    for tau in (0.0, 1.0):
        params = ModelParams(ell=0.5, tau=tau)
        z, p, q, r = oracle_terminal_conditions(
            theta_t.ravel(), phi_t.ravel(), cost, params, grid)
        state_t = StateSnapshot(
            theta=Field(grid, theta_t), phi=Field(grid, phi_t),
            mu=Field(grid, np.zeros(grid.shape)),
            sigma=Field(grid, np.zeros(grid.shape)),
        )
        adj_t = final_conditions(state_t, cost, params, SolverConfig())
        for dense, fast in ((z, adj_t.z), (p, adj_t.p), (q, adj_t.q),
                            (r, adj_t.r)):
            scale = 1.0 + np.max(np.abs(dense))
            assert np.max(np.abs(fast.flat - dense)) / scale <= 1e-10


def test_oracle_solve_conserves_combined_mass():
    rng = np.random.default_rng(7)
    grid = Grid(4, 1.0)
    time_grid = TimeGrid(0.3, 3)
    params = ModelParams(ell=0.5, lambda_big=0.7, chi=0.3, tau=0.5,
                         lambda_c=0.4, lambda_b=0.3, lambda_d=0.2)
    init = InitialData(
        theta0=Field(grid, rng.normal(size=grid.shape) * 0.1),
        phi0=Field(grid, rng.uniform(-0.5, 0.5, size=grid.shape)),
        sigma0=Field(grid, rng.uniform(0.2, 0.8, size=grid.shape)),
    )
    u = SpaceTimeField.zeros(time_grid, grid)
    traj = dense_oracle_solve(init.theta0, init.phi0, init.sigma0, u,
                              params, default_nonlinearities(),
                              default_potential())
    w = dense_weights(grid.n, grid.spacing)
    masses = (traj.theta + params.ell * traj.phi) @ w
    assert np.max(np.abs(masses - masses[0])) <= 1e-12 * (1.0 + abs(masses[0]))
