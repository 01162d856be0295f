"""Quadratic tracking cost, admissible box, and projected gradient descent.

The cost is a left-endpoint time quadrature of weighted tracking and
regularization terms plus two terminal terms. Its reduced gradient comes
from one backward sweep of the discrete adjoint and equals z + b5 * u slice
by slice, so first-order optimality is the pointwise variational inequality
of a box-constrained problem: at a stationary point the control clamps
-z / b5 onto the box wherever b1..b4 make z nonzero.

The optimizer is projected gradient descent with Armijo backtracking along
the projection arc, using the sufficient-decrease test

    J(P(u - alpha g)) <= J(u) - (c / alpha) * ||P(u - alpha g) - u||^2

in the control-space norm. The stationarity measure is ||u - P(u - g)|| at
unit trial step; for a box the fixed points of the projection arc are the
same for every positive step, so a nonstationary iterate always moves and
the line search cannot stall at a fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adjoint import _target_slice, _terminal_target, reduced_gradient
from .errors import ConfigurationError, OptimizerError, SolverError
from .grid import SpaceTimeField, l2q_norm, quadrature_weights
from .linsolve import SolveCounter
from .state import solve_state

__all__ = [
    "CostSpec",
    "AdmissibleSet",
    "OptimizerConfig",
    "IterateRecord",
    "OptimizationReport",
    "evaluate_cost",
    "project_admissible",
    "projected_gradient_descent",
    "StationarityReport",
    "stationarity_check",
]


@dataclass(frozen=True)
class CostSpec:
    """Weights and targets of the tracking cost.

    Attributes:
        b1, b3: Running tracking weights for temperature and phase.
        b2, b4: Terminal tracking weights for temperature and phase.
        b5: Control regularization weight, strictly positive.
        theta_q, phi_q: Running targets, SpaceTimeField or None for zero.
        theta_omega, phi_omega: Terminal targets, Field or None for zero.
    """

    b1: float = 0.0
    b2: float = 0.0
    b3: float = 0.0
    b4: float = 0.0
    b5: float = 1.0
    theta_q: object = None
    phi_q: object = None
    theta_omega: object = None
    phi_omega: object = None

    def __post_init__(self):
        weights = (self.b1, self.b2, self.b3, self.b4, self.b5)
        if not all(np.isfinite(b) for b in weights):
            raise ConfigurationError("cost weights must be finite")
        if any(b < 0.0 for b in weights[:4]):
            raise ConfigurationError("cost weights b1..b4 must be nonnegative")
        if self.b5 <= 0.0:
            raise ConfigurationError(
                f"regularization weight b5 must be positive, got {self.b5}"
            )


@dataclass(frozen=True)
class AdmissibleSet:
    """Pointwise box of admissible controls.

    Attributes:
        u_min, u_max: Scalar box bounds with u_min <= u_max.
        m_bound: Uniform bound dominating the box; defaults to
            1 + max(|u_min|, |u_max|).
    """

    u_min: float
    u_max: float
    m_bound: float = None

    def __post_init__(self):
        if not (np.isfinite(self.u_min) and np.isfinite(self.u_max)):
            raise ConfigurationError("box bounds must be finite")
        if self.u_min > self.u_max:
            raise ConfigurationError(
                f"empty box: u_min={self.u_min} > u_max={self.u_max}"
            )
        if self.m_bound is None:
            object.__setattr__(
                self, "m_bound",
                1.0 + max(abs(self.u_min), abs(self.u_max)))
        elif self.m_bound < max(abs(self.u_min), abs(self.u_max)):
            raise ConfigurationError(
                "m_bound must dominate the box bounds"
            )

    def contains(self, u, tol=0.0):
        """Whether every nodal value of u lies in the box, up to tol."""
        values = u.values
        return bool(np.all(values >= self.u_min - tol)
                    and np.all(values <= self.u_max + tol))


def project_admissible(u, adm):
    """Pointwise projection of a control onto the admissible box."""
    return SpaceTimeField(u.time_grid, u.grid,
                          np.clip(u.values, adm.u_min, adm.u_max))


def evaluate_cost(traj, u, cost):
    """Cost value of a state trajectory and the control that produced it.

    Running terms use the left-endpoint rule over levels 0..nt-1 with weight
    dt; terminal terms are sampled at level nt.
    """
    grid = traj.grid
    time_grid = traj.time_grid
    if u.grid != grid or u.time_grid != time_grid:
        raise ConfigurationError("control grids do not match trajectory")
    nt = time_grid.nt
    dt = time_grid.dt
    w = quadrature_weights(grid)

    theta = traj.field_array("theta")
    phi = traj.field_array("phi")
    control = u.values.reshape(nt + 1, grid.num_nodes)

    def wnorm_sq(arr):
        return (arr * arr) @ w

    running = 0.0
    if cost.b1 != 0.0:
        for n in range(nt):
            diff = theta[n] - _target_slice(cost.theta_q, n, grid, nt)
            running += 0.5 * cost.b1 * wnorm_sq(diff)
    if cost.b3 != 0.0:
        for n in range(nt):
            diff = phi[n] - _target_slice(cost.phi_q, n, grid, nt)
            running += 0.5 * cost.b3 * wnorm_sq(diff)
    running += 0.5 * cost.b5 * float(np.sum(wnorm_sq(control[:nt])))

    terminal = 0.0
    if cost.b2 != 0.0:
        diff = theta[nt] - _terminal_target(cost.theta_omega, grid)
        terminal += 0.5 * cost.b2 * wnorm_sq(diff)
    if cost.b4 != 0.0:
        diff = phi[nt] - _terminal_target(cost.phi_omega, grid)
        terminal += 0.5 * cost.b4 * wnorm_sq(diff)
    return float(dt * running + terminal)


@dataclass(frozen=True)
class OptimizerConfig:
    """Projected gradient descent knobs."""

    max_iters: int = 100
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    stationarity_tol: float = 1e-8
    min_step: float = 1e-14

    def __post_init__(self):
        if self.max_iters < 0:
            raise ConfigurationError("max_iters must be nonnegative")
        if not 0.0 < self.armijo_c < 1.0:
            raise ConfigurationError(
                f"armijo_c must lie in (0, 1), got {self.armijo_c}"
            )
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ConfigurationError(
                f"backtrack_factor must lie in (0, 1),"
                f" got {self.backtrack_factor}"
            )
        if self.initial_step <= 0.0:
            raise ConfigurationError("initial_step must be positive")
        if self.stationarity_tol < 0.0:
            raise ConfigurationError("stationarity_tol must be nonnegative")
        if not 0.0 < self.min_step <= self.initial_step:
            raise ConfigurationError(
                "min_step must lie in (0, initial_step]"
            )


@dataclass(frozen=True)
class IterateRecord:
    """One optimizer iterate, as reported in the iteration table."""

    iteration: int
    cost: float
    stationarity: float
    step: float
    backtracks: int
    linear_solves: int


@dataclass(frozen=True)
class OptimizationReport:
    """Outcome of one projected gradient descent run.

    stop_reason is one of "stationarity", "max_iters" or "min_step"; hitting
    the iteration cap or the step floor is reported, not raised.
    """

    iterates: tuple
    final_control: SpaceTimeField
    final_cost: float
    final_stationarity: float
    stop_reason: str
    final_adjoint: object

    @property
    def final_z(self):
        """Adjoint z of the final iterate, as a SpaceTimeField."""
        adj = self.final_adjoint
        shape = (adj.time_grid.nt + 1,) + adj.grid.shape
        return SpaceTimeField(adj.time_grid, adj.grid,
                              adj.field_array("z").reshape(shape))


def projected_gradient_descent(u0, init, adm, cost, opt_cfg, solver_cfg,
                               params, nl, pot):
    """Minimize the tracking cost over the admissible box.

    Args:
        u0: Starting control; projected onto the box before iterating.
        init: Initial state data.
        adm: AdmissibleSet.
        cost: CostSpec.
        opt_cfg: OptimizerConfig.
        solver_cfg: SolverConfig for the inner sweeps.
        params, nl, pot: Model data.

    Returns:
        OptimizationReport with one IterateRecord per gradient evaluation.

    Raises:
        OptimizerError: If a forward or backward sweep fails inside the
            iteration.
    """
    counter = SolveCounter()
    u = project_admissible(u0, adm)
    iterates = []
    stop_reason = None

    def gradient_at(control):
        try:
            return reduced_gradient(control, init, cost, solver_cfg, params,
                                    nl, pot, counter=counter)
        except SolverError as exc:
            raise OptimizerError(
                f"state or adjoint sweep failed at iterate"
                f" {len(iterates)}: {exc}"
            ) from exc

    def cost_at(control):
        try:
            traj = solve_state(init, control, solver_cfg, params, nl, pot,
                               counter=counter)
        except SolverError as exc:
            raise OptimizerError(
                f"trial state sweep failed at iterate"
                f" {len(iterates)}: {exc}"
            ) from exc
        return evaluate_cost(traj, control, cost)

    result = gradient_at(u)
    iteration = 0
    while True:
        grad = result.gradient
        current_cost = result.cost_value
        stationarity = l2q_norm(u - project_admissible(u - grad, adm))

        if stationarity <= opt_cfg.stationarity_tol:
            iterates.append(IterateRecord(iteration, current_cost,
                                          stationarity, 0.0, 0,
                                          counter.count))
            stop_reason = "stationarity"
            break
        if iteration >= opt_cfg.max_iters:
            iterates.append(IterateRecord(iteration, current_cost,
                                          stationarity, 0.0, 0,
                                          counter.count))
            stop_reason = "max_iters"
            break

        alpha = opt_cfg.initial_step
        backtracks = 0
        accepted = None
        while True:
            trial = project_admissible(u - alpha * grad, adm)
            movement = l2q_norm(trial - u)
            trial_cost = cost_at(trial)
            if (trial_cost <= current_cost
                    - (opt_cfg.armijo_c / alpha) * movement * movement):
                accepted = trial
                break
            alpha *= opt_cfg.backtrack_factor
            backtracks += 1
            if alpha < opt_cfg.min_step:
                break

        if accepted is None:
            iterates.append(IterateRecord(iteration, current_cost,
                                          stationarity, alpha, backtracks,
                                          counter.count))
            stop_reason = "min_step"
            break

        iterates.append(IterateRecord(iteration, current_cost, stationarity,
                                      alpha, backtracks, counter.count))
        u = accepted
        result = gradient_at(u)
        iteration += 1

    return OptimizationReport(
        iterates=tuple(iterates),
        final_control=u,
        final_cost=result.cost_value,
        final_stationarity=iterates[-1].stationarity,
        stop_reason=stop_reason,
        final_adjoint=result.adjoint,
    )


@dataclass(frozen=True)
class StationarityReport:
    """First-order optimality evidence at a control."""

    measure: float
    vi_samples: tuple

    def min_sample(self):
        return min(self.vi_samples) if self.vi_samples else float("nan")


def stationarity_check(u, init, adm, cost, cfg, params, nl, pot,
                       num_samples=100, seed=0):
    """Measure stationarity and sample the variational inequality.

    Computes the projected-gradient residual ||u - P(u - g)|| and, for
    num_samples random admissible controls v, the pairing <g, v - u> in the
    control-space inner product, which is nonnegative at a minimizer.

    Args:
        u: Control to check.
        init: Initial state data.
        adm: AdmissibleSet.
        cost: CostSpec.
        cfg: SolverConfig.
        params, nl, pot: Model data.
        num_samples: Number of random admissible comparison controls.
        seed: Seed material for the sample generator.

    Returns:
        StationarityReport.
    """
    from .grid import l2q_inner

    result = reduced_gradient(u, init, cost, cfg, params, nl, pot)
    grad = result.gradient
    measure = l2q_norm(u - project_admissible(u - grad, adm))

    rng = np.random.default_rng(seed)
    samples = []
    shape = u.values.shape
    for _ in range(num_samples):
        v = SpaceTimeField(
            u.time_grid, u.grid,
            rng.uniform(adm.u_min, adm.u_max, size=shape))
        samples.append(float(l2q_inner(grad, v - u)))
    return StationarityReport(measure=float(measure),
                              vi_samples=tuple(samples))
