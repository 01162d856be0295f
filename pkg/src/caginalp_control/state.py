"""Forward solver for the coupled temperature/phase/nutrient system.

One time step advances the state (theta, phi, mu, sigma) by three sequential
linear solves in Gauss-Seidel order, with every nonlinear coefficient frozen
at the old level:

1. the Cahn-Hilliard pair for (phi, mu), with the potential treated
   explicitly plus a linear stabilization S * (phi_new - phi_old) and the
   viscous term tau * (phi_new - phi_old) / dt kept implicit;
2. the heat equation for theta, with the latent-heat coupling
   ell * (phi_new - phi_old) / dt already known from step 1 and the control
   sampled at the left endpoint of the step;
3. the nutrient equation for sigma, implicit in its nonnegative linear decay
   (lambda_C * H(phi_old) + lambda_B + lambda_D * K(theta_old)) and driven by
   the fresh chemotaxis term chi * Lap(phi_new).

Freezing the nonlinearities at the old level makes the whole step an
explicitly differentiable affine map of (old state, control slice); the
linearized and adjoint modules differentiate and transpose exactly this map.

The Cahn-Hilliard pair is solved through its Schur complement in phi
(eliminating mu by the potential equation), so the potential relation
mu = (a I - Lap) phi_new - rhs holds to machine precision by construction,
with a = tau/dt + S.

The chemical potential at t=0 is defined algebraically from the potential
equation with a zero phase rate, mu0 = -Lap(phi0) + f(phi0) - chi*sigma0
- Lambda*theta0, since the continuous problem prescribes no initial mu.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, SolverError
from .grid import (
    Field,
    SpaceTimeField,
    inner_product,
    integrate,
    l2q_norm,
    laplacian_matrix,
    quadrature_weights,
)
from .linsolve import FactorizedOperator, SolveCounter

__all__ = [
    "SolverConfig",
    "InitialData",
    "StateSnapshot",
    "StateTrajectory",
    "DiagnosticsRecord",
    "StepOperators",
    "initial_mu",
    "step_state",
    "solve_state",
    "ch_energy",
    "y_norm",
    "trajectory_distance_y",
    "LipschitzReport",
    "lipschitz_probe",
]


@dataclass(frozen=True)
class SolverConfig:
    """Inner-solver knobs shared by the forward, linearized and adjoint sweeps.

    Attributes:
        stabilization_s: Nonnegative constant S multiplying the implicit
            stabilization term of the explicit-potential splitting.
        linear_tol: Relative residual target of inner solves, in (0, 1e-6].
        max_linear_iters: Refinement cap per solve.
    """

    stabilization_s: float = 2.0
    linear_tol: float = 1e-12
    max_linear_iters: int = 50

    def __post_init__(self):
        if not (0.0 < self.linear_tol <= 1e-6):
            raise ConfigurationError(
                f"linear_tol must lie in (0, 1e-6], got {self.linear_tol}"
            )
        if self.stabilization_s < 0.0 or not np.isfinite(self.stabilization_s):
            raise ConfigurationError(
                f"stabilization_s must be nonnegative, got {self.stabilization_s}"
            )
        if self.max_linear_iters < 0:
            raise ConfigurationError(
                f"max_linear_iters must be nonnegative, got {self.max_linear_iters}"
            )


@dataclass(frozen=True)
class InitialData:
    """Initial fields (theta0, phi0, sigma0) on a shared grid."""

    theta0: Field
    phi0: Field
    sigma0: Field

    def __post_init__(self):
        if not (self.theta0.grid == self.phi0.grid == self.sigma0.grid):
            raise ConfigurationError("initial fields live on different grids")

    @property
    def grid(self):
        return self.theta0.grid


@dataclass(frozen=True)
class StateSnapshot:
    """State at one time level."""

    theta: Field
    phi: Field
    mu: Field
    sigma: Field

    def __post_init__(self):
        grids = {self.theta.grid, self.phi.grid, self.mu.grid, self.sigma.grid}
        if len(grids) != 1:
            raise ConfigurationError("snapshot fields live on different grids")

    @property
    def grid(self):
        return self.theta.grid


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Per-level balance and norm diagnostics."""

    step: int
    time: float
    mass_theta_ell_phi: float
    mass_phi: float
    energy: float
    linf_theta: float
    linf_phi: float


_FIELD_NAMES = ("theta", "phi", "mu", "sigma")


class StateTrajectory:
    """Complete forward trajectory, stored as (nt + 1, N) arrays per field."""

    __slots__ = ("time_grid", "grid", "_arrays", "diagnostics",
                 "linear_solve_count")

    def __init__(self, time_grid, grid, theta, phi, mu, sigma,
                 diagnostics=(), linear_solve_count=0):
        arrays = {}
        expected = (time_grid.nt + 1, grid.num_nodes)
        for name, arr in zip(_FIELD_NAMES, (theta, phi, mu, sigma)):
            arr = np.asarray(arr, dtype=float)
            if arr.shape != expected:
                raise ConfigurationError(
                    f"trajectory array {name} has shape {arr.shape},"
                    f" expected {expected}"
                )
            arr = arr.copy()
            arr.setflags(write=False)
            arrays[name] = arr
        self.time_grid = time_grid
        self.grid = grid
        self._arrays = arrays
        self.diagnostics = tuple(diagnostics)
        self.linear_solve_count = int(linear_solve_count)

    def field_array(self, name):
        """Read-only (nt + 1, N) array of one field's nodal values."""
        return self._arrays[name]

    def snapshot(self, level):
        shape = self.grid.shape
        return StateSnapshot(
            theta=Field(self.grid, self._arrays["theta"][level].reshape(shape)),
            phi=Field(self.grid, self._arrays["phi"][level].reshape(shape)),
            mu=Field(self.grid, self._arrays["mu"][level].reshape(shape)),
            sigma=Field(self.grid, self._arrays["sigma"][level].reshape(shape)),
        )

    @property
    def snapshots(self):
        return tuple(self.snapshot(k) for k in range(self.time_grid.nt + 1))

    def space_time(self, name):
        """One field of the trajectory as a SpaceTimeField."""
        shape = (self.time_grid.nt + 1,) + self.grid.shape
        return SpaceTimeField(self.time_grid, self.grid,
                              self._arrays[name].reshape(shape))


class StepOperators:
    """Shared factorizations and coefficient plumbing for one solve.

    Holds the sparse Laplacian, the heat operator (I/dt - Lap), the
    Cahn-Hilliard Schur complement (I/dt - a*Lap + Lap^2), and the potential
    recovery operator (a*I - Lap), all factorized once per sweep. The
    nutrient operator depends on the level-n decay coefficient and is
    factorized per step through :meth:`nutrient_operator`.
    """

    def __init__(self, grid, dt, cfg, params, counter=None):
        self.grid = grid
        self.dt = float(dt)
        self.cfg = cfg
        self.params = params
        self.counter = counter if counter is not None else SolveCounter()
        self.lap = laplacian_matrix(grid)
        self.weights = quadrature_weights(grid)
        self.a = params.tau / self.dt + cfg.stabilization_s
        eye = sp.identity(grid.num_nodes, format="csr")
        self._eye = eye
        self.a_minus_lap = (self.a * eye - self.lap).tocsr()
        self.heat = FactorizedOperator(
            eye / self.dt - self.lap, cfg.linear_tol, cfg.max_linear_iters,
            self.counter,
        )
        schur = eye / self.dt - self.a * self.lap + self.lap @ self.lap
        self.ch_schur = FactorizedOperator(
            schur, cfg.linear_tol, cfg.max_linear_iters, self.counter,
        )

    def nutrient_operator(self, decay):
        matrix = (self._eye / self.dt - self.lap
                  + sp.diags_array(decay, format="csr"))
        return FactorizedOperator(matrix, self.cfg.linear_tol,
                                  self.cfg.max_linear_iters, self.counter)


def _decay_coefficient(theta_flat, phi_flat, params, nl):
    return (params.lambda_c * np.asarray(nl.H_gate(phi_flat), dtype=float)
            + params.lambda_b
            + params.lambda_d * np.asarray(nl.K_temp(theta_flat), dtype=float))


def _require_finite(arr, step):
    if not np.all(np.isfinite(arr)):
        raise SolverError("non-finite values while assembling a step",
                          step=step, residual=float("nan"))


def _step_arrays(ops, theta_n, phi_n, sigma_n, u_n, sigma_b_n, params, nl,
                 pot, step):
    """One forward step on flat arrays; returns the four new levels."""
    dt = ops.dt
    with np.errstate(over="ignore", invalid="ignore"):
        gate = np.asarray(nl.H_gate(phi_n), dtype=float)
        source = (params.lambda_p * sigma_n - params.lambda_a
                  - params.lambda_e * theta_n) * gate
        rhs_phase = phi_n / dt + source
        rhs_potential = (ops.a * phi_n - np.asarray(pot.f(phi_n), dtype=float)
                         + params.chi * sigma_n + params.lambda_big * theta_n)
        decay = _decay_coefficient(theta_n, phi_n, params, nl)
    _require_finite(rhs_phase, step)
    _require_finite(rhs_potential, step)
    _require_finite(decay, step)

    phi_next = ops.ch_schur.solve(rhs_phase - ops.lap @ rhs_potential,
                                  step=step, guess=phi_n)
    mu_next = ops.a_minus_lap @ phi_next - rhs_potential

    rhs_heat = (theta_n / dt - (params.ell / dt) * (phi_next - phi_n) + u_n)
    theta_next = ops.heat.solve(rhs_heat, step=step, guess=theta_n)

    rhs_nutrient = (sigma_n / dt - params.chi * (ops.lap @ phi_next)
                    + params.lambda_b * sigma_b_n)
    sigma_next = ops.nutrient_operator(decay).solve(rhs_nutrient, step=step,
                                                    guess=sigma_n)
    return theta_next, phi_next, mu_next, sigma_next


def _sigma_b_level(params, t, dt, grid):
    """Locate the far-field supply slice for the step starting at time t."""
    if isinstance(params.sigma_b, SpaceTimeField):
        own_dt = params.sigma_b.time_grid.dt
        level = int(round(t / own_dt))
        if abs(t - level * own_dt) > 1e-9 * max(own_dt, dt):
            raise ConfigurationError(
                f"sigma_b time grid has no level at t={t}"
            )
        if not 0 <= level <= params.sigma_b.time_grid.nt:
            raise ConfigurationError(
                f"sigma_b time grid does not cover t={t}"
            )
        return params.sigma_b.flat_slices[level]
    return np.full(grid.num_nodes, float(params.sigma_b))


def initial_mu(init, params, pot):
    """Consistent chemical potential at t=0 (zero phase rate)."""
    lap = laplacian_matrix(init.grid)
    phi0 = init.phi0.flat
    mu0 = (-(lap @ phi0) + np.asarray(pot.f(phi0), dtype=float)
           - params.chi * init.sigma0.flat
           - params.lambda_big * init.theta0.flat)
    return Field(init.grid, mu0.reshape(init.grid.shape))


def step_state(prev, u_slice, t, dt, cfg, params, nl, pot, ops=None):
    """Advance one state snapshot by one step of length dt.

    Args:
        prev: State at the old level.
        u_slice: Control on [t, t + dt), sampled at the left endpoint.
        t: Time at the old level (used to locate a time-dependent sigma_b).
        dt: Step length.
        cfg: SolverConfig.
        params, nl, pot: Model data.
        ops: Optional prebuilt StepOperators for reuse across steps.

    Returns:
        StateSnapshot at the new level.

    Raises:
        SolverError: On inner-solve nonconvergence or non-finite values.
    """
    grid = prev.grid
    if u_slice.grid != grid:
        raise ConfigurationError("control slice grid does not match state")
    if dt <= 0.0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if ops is None:
        ops = StepOperators(grid, dt, cfg, params)
    sb = _sigma_b_level(params, t, dt, grid)
    theta, phi, mu, sigma = _step_arrays(
        ops, prev.theta.flat, prev.phi.flat, prev.sigma.flat, u_slice.flat,
        sb, params, nl, pot, step=None,
    )
    shape = grid.shape
    return StateSnapshot(
        theta=Field(grid, theta.reshape(shape)),
        phi=Field(grid, phi.reshape(shape)),
        mu=Field(grid, mu.reshape(shape)),
        sigma=Field(grid, sigma.reshape(shape)),
    )


def ch_energy(phi, pot):
    """Discrete Cahn-Hilliard free energy 0.5*<-Lap(phi), phi> + int F_hat."""
    from .grid import laplacian_apply

    interface = 0.5 * inner_product(-1.0 * laplacian_apply(phi), phi)
    bulk = integrate(Field(phi.grid,
                           np.asarray(pot.F_hat(phi.values), dtype=float)))
    return float(interface + bulk)


def solve_state(init, u, cfg, params, nl, pot, counter=None):
    """March the full horizon and record per-level diagnostics.

    Args:
        init: Initial data.
        u: Control SpaceTimeField; its time grid drives the solve and its
            final slice is unused.
        cfg: SolverConfig.
        params, nl, pot: Model data.
        counter: Optional SolveCounter to accumulate inner-solve tallies.

    Returns:
        StateTrajectory with nt + 1 snapshots and diagnostics rows.

    Raises:
        SolverError: Propagated from the failing step, with its index.
    """
    grid = init.grid
    if u.grid != grid:
        raise ConfigurationError("control grid does not match initial data")
    time_grid = u.time_grid
    nt = time_grid.nt
    dt = time_grid.dt
    total = grid.num_nodes

    counter = counter if counter is not None else SolveCounter()
    start_count = counter.count
    ops = StepOperators(grid, dt, cfg, params, counter=counter)

    theta = np.zeros((nt + 1, total))
    phi = np.zeros((nt + 1, total))
    mu = np.zeros((nt + 1, total))
    sigma = np.zeros((nt + 1, total))
    theta[0] = init.theta0.flat
    phi[0] = init.phi0.flat
    sigma[0] = init.sigma0.flat
    mu[0] = initial_mu(init, params, pot).flat

    controls = u.flat_slices
    times = time_grid.times
    for step in range(nt):
        sb = _sigma_b_level(params, times[step], dt, grid)
        try:
            out = _step_arrays(ops, theta[step], phi[step], sigma[step],
                               controls[step], sb, params, nl, pot, step=step)
        except SolverError:
            raise
        theta[step + 1], phi[step + 1], mu[step + 1], sigma[step + 1] = out

    weights = ops.weights
    diagnostics = []
    shape = grid.shape
    for level in range(nt + 1):
        phi_field = Field(grid, phi[level].reshape(shape))
        diagnostics.append(DiagnosticsRecord(
            step=level,
            time=float(times[level]),
            mass_theta_ell_phi=float(
                np.dot(weights, theta[level] + params.ell * phi[level])),
            mass_phi=float(np.dot(weights, phi[level])),
            energy=ch_energy(phi_field, pot),
            linf_theta=float(np.max(np.abs(theta[level]))),
            linf_phi=float(np.max(np.abs(phi[level]))),
        ))

    return StateTrajectory(
        time_grid, grid, theta, phi, mu, sigma,
        diagnostics=diagnostics,
        linear_solve_count=counter.count - start_count,
    )


def y_norm(theta, phi, mu, sigma, grid, time_grid):
    """Trajectory norm used by the Taylor remainder and the Lipschitz probe.

    Discrete surrogate of the solution-space norm: for the theta and sigma
    components the max-in-time weighted l2 plus the l2-in-time full H1 norm;
    for phi the max-in-time l2 plus the l2-in-time of l2(Lap phi); for mu the
    l2-in-time l2. Max runs over levels 0..nt, time integrals over levels
    1..nt with weight dt. The four components are added with equal weights,
    which is a reporting choice rather than a modeled one.
    """
    lap = laplacian_matrix(grid)
    w = quadrature_weights(grid)
    dt = time_grid.dt

    def level_l2_sq(arr):
        return (arr * arr) @ w

    def component_parabolic(arr):
        l2_sq = level_l2_sq(arr)
        lap_rows = arr @ lap.T
        h1_sq = np.clip(-(lap_rows * arr) @ w, 0.0, None)
        return (np.sqrt(l2_sq.max())
                + np.sqrt(dt * np.sum(l2_sq[1:] + h1_sq[1:])))

    def component_fourth_order(arr):
        l2_sq = level_l2_sq(arr)
        lap_rows = arr @ lap.T
        lap_l2_sq = level_l2_sq(lap_rows)
        return np.sqrt(l2_sq.max()) + np.sqrt(dt * np.sum(lap_l2_sq[1:]))

    def component_l2_time(arr):
        l2_sq = level_l2_sq(arr)
        return np.sqrt(dt * np.sum(l2_sq[1:]))

    return float(component_parabolic(theta) + component_fourth_order(phi)
                 + component_l2_time(mu) + component_parabolic(sigma))


def trajectory_distance_y(a, b):
    """Y-norm of the difference of two state trajectories."""
    if a.grid != b.grid or a.time_grid != b.time_grid:
        raise ConfigurationError("trajectories live on different grids")
    return y_norm(
        a.field_array("theta") - b.field_array("theta"),
        a.field_array("phi") - b.field_array("phi"),
        a.field_array("mu") - b.field_array("mu"),
        a.field_array("sigma") - b.field_array("sigma"),
        a.grid, a.time_grid,
    )


@dataclass(frozen=True)
class LipschitzReport:
    """Outcome of one continuous-dependence probe."""

    ratio: float
    state_distance: float
    control_distance: float


def lipschitz_probe(u1, u2, init, cfg, params, nl, pot):
    """Ratio of state distance to control distance for two controls.

    Empirical probe of the continuous-dependence estimate: the returned ratio
    is ||S(u1) - S(u2)||_Y / ||u1 - u2||_{L2(Q)}.

    Raises:
        ConfigurationError: If the controls coincide (degenerate denominator).
    """
    control_distance = l2q_norm(u1 - u2)
    if control_distance == 0.0:
        raise ConfigurationError(
            "lipschitz probe needs distinct controls, denominator is zero"
        )
    traj1 = solve_state(init, u1, cfg, params, nl, pot)
    traj2 = solve_state(init, u2, cfg, params, nl, pot)
    state_distance = trajectory_distance_y(traj1, traj2)
    return LipschitzReport(
        ratio=state_distance / control_distance,
        state_distance=state_distance,
        control_distance=control_distance,
    )
