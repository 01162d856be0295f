"""Exact linearization of the forward time-stepping map.

Each forward step freezes its nonlinear coefficients at the old level, so the
step is a smooth map of (old state, control slice) and its derivative is
computed exactly: the linearized step solves the same three linear systems
with the same matrices as the forward step, only the right-hand sides change.
Sharing the factorizations makes one linearized sweep cost the same as one
forward sweep and keeps the derivative consistent with the discrete map to
rounding accuracy, which the Taylor test below verifies.

The linearized variables are (zeta, xi, eta, rho) for the perturbations of
(theta, phi, mu, sigma). Initial data is unperturbed, so all four start at
zero; eta carries no initial condition of its own because the chemical
potential at t=0 is an algebraic function of the unperturbed initial fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .grid import Field, SpaceTimeField, l2q_norm
from .state import StepOperators, _require_finite, solve_state, y_norm

__all__ = [
    "LinearizedSnapshot",
    "LinearizedTrajectory",
    "step_linearized",
    "solve_linearized",
    "TaylorRow",
    "TaylorReport",
    "taylor_test",
]


@dataclass(frozen=True)
class LinearizedSnapshot:
    """Perturbation fields at one time level."""

    zeta: Field
    xi: Field
    eta: Field
    rho: Field

    def __post_init__(self):
        grids = {self.zeta.grid, self.xi.grid, self.eta.grid, self.rho.grid}
        if len(grids) != 1:
            raise ConfigurationError("snapshot fields live on different grids")

    @property
    def grid(self):
        return self.zeta.grid


_LIN_NAMES = ("zeta", "xi", "eta", "rho")


class LinearizedTrajectory:
    """Linearized trajectory as (nt + 1, N) arrays; level 0 is zero."""

    __slots__ = ("time_grid", "grid", "_arrays", "linear_solve_count")

    def __init__(self, time_grid, grid, zeta, xi, eta, rho,
                 linear_solve_count=0):
        arrays = {}
        expected = (time_grid.nt + 1, grid.num_nodes)
        for name, arr in zip(_LIN_NAMES, (zeta, xi, eta, rho)):
            arr = np.asarray(arr, dtype=float)
            if arr.shape != expected:
                raise ConfigurationError(
                    f"trajectory array {name} has shape {arr.shape},"
                    f" expected {expected}"
                )
            arr = arr.copy()
            arr.setflags(write=False)
            arrays[name] = arr
        if any(arrays[name][0].any() for name in _LIN_NAMES):
            raise ConfigurationError(
                "linearized trajectory must start from zero perturbation"
            )
        self.time_grid = time_grid
        self.grid = grid
        self._arrays = arrays
        self.linear_solve_count = int(linear_solve_count)

    def field_array(self, name):
        """Read-only (nt + 1, N) array of one perturbation field."""
        return self._arrays[name]

    def snapshot(self, level):
        shape = self.grid.shape
        return LinearizedSnapshot(
            zeta=Field(self.grid, self._arrays["zeta"][level].reshape(shape)),
            xi=Field(self.grid, self._arrays["xi"][level].reshape(shape)),
            eta=Field(self.grid, self._arrays["eta"][level].reshape(shape)),
            rho=Field(self.grid, self._arrays["rho"][level].reshape(shape)),
        )

    @property
    def snapshots(self):
        return tuple(self.snapshot(k) for k in range(self.time_grid.nt + 1))


def _lin_step_arrays(ops, base_theta_n, base_phi_n, base_sigma_n,
                     base_sigma_next, zeta_n, xi_n, rho_n, h_n, params, nl,
                     pot, step):
    """One linearized step on flat arrays; returns the four new levels."""
    dt = ops.dt
    with np.errstate(over="ignore", invalid="ignore"):
        gate = np.asarray(nl.H_gate(base_phi_n), dtype=float)
        gate_prime = np.asarray(nl.H_gate_prime(base_phi_n), dtype=float)
        source_prime = (params.lambda_p * base_sigma_n - params.lambda_a
                        - params.lambda_e * base_theta_n) * gate_prime
        rhs_phase = (xi_n / dt + source_prime * xi_n
                     + params.lambda_p * gate * rho_n
                     - params.lambda_e * gate * zeta_n)
        rhs_potential = (ops.a * xi_n
                         - np.asarray(pot.f_prime(base_phi_n), dtype=float)
                         * xi_n
                         + params.chi * rho_n + params.lambda_big * zeta_n)
        decay = (params.lambda_c * gate + params.lambda_b
                 + params.lambda_d
                 * np.asarray(nl.K_temp(base_theta_n), dtype=float))
        gate_prime_phi = params.lambda_c * gate_prime
        k_prime = params.lambda_d * np.asarray(
            nl.K_temp_prime(base_theta_n), dtype=float)
    _require_finite(rhs_phase, step)
    _require_finite(rhs_potential, step)
    _require_finite(decay, step)

    xi_next = ops.ch_schur.solve(rhs_phase - ops.lap @ rhs_potential,
                                 step=step)
    eta_next = ops.a_minus_lap @ xi_next - rhs_potential

    rhs_heat = zeta_n / dt - (params.ell / dt) * (xi_next - xi_n) + h_n
    zeta_next = ops.heat.solve(rhs_heat, step=step)

    rhs_nutrient = (rho_n / dt - params.chi * (ops.lap @ xi_next)
                    - base_sigma_next * (gate_prime_phi * xi_n
                                         + k_prime * zeta_n))
    rho_next = ops.nutrient_operator(decay).solve(rhs_nutrient, step=step)
    return zeta_next, xi_next, eta_next, rho_next


def step_linearized(base_prev, base_next, lin_prev, h_slice, dt, cfg, params,
                    nl, pot, ops=None):
    """Advance the linearized state by one step.

    Args:
        base_prev: Base state at the old level (coefficients frozen here).
        base_next: Base state at the new level (its sigma enters the
            linearized nutrient decay term).
        lin_prev: Linearized state at the old level.
        h_slice: Control perturbation on this step.
        dt: Step length.
        cfg: SolverConfig.
        params, nl, pot: Model data.
        ops: Optional prebuilt StepOperators for reuse.

    Returns:
        LinearizedSnapshot at the new level.
    """
    grid = base_prev.grid
    if base_next.grid != grid or lin_prev.grid != grid:
        raise ConfigurationError("base and linearized grids do not match")
    if h_slice.grid != grid:
        raise ConfigurationError("direction slice grid does not match state")
    if dt <= 0.0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    if ops is None:
        ops = StepOperators(grid, dt, cfg, params)
    zeta, xi, eta, rho = _lin_step_arrays(
        ops, base_prev.theta.flat, base_prev.phi.flat, base_prev.sigma.flat,
        base_next.sigma.flat, lin_prev.zeta.flat, lin_prev.xi.flat,
        lin_prev.rho.flat, h_slice.flat, params, nl, pot, step=None,
    )
    shape = grid.shape
    return LinearizedSnapshot(
        zeta=Field(grid, zeta.reshape(shape)),
        xi=Field(grid, xi.reshape(shape)),
        eta=Field(grid, eta.reshape(shape)),
        rho=Field(grid, rho.reshape(shape)),
    )


def solve_linearized(base, h, cfg, params, nl, pot, counter=None):
    """Sweep the linearized system along a base trajectory.

    Args:
        base: StateTrajectory the linearization is taken around.
        h: Control direction as a SpaceTimeField on the same grids.
        cfg: SolverConfig.
        params, nl, pot: Model data.
        counter: Optional SolveCounter.

    Returns:
        LinearizedTrajectory with zero level-0 data.
    """
    grid = base.grid
    time_grid = base.time_grid
    if h.grid != grid or h.time_grid != time_grid:
        raise ConfigurationError("direction grids do not match base")
    nt = time_grid.nt
    total = grid.num_nodes

    from .linsolve import SolveCounter

    counter = counter if counter is not None else SolveCounter()
    start_count = counter.count
    ops = StepOperators(grid, time_grid.dt, cfg, params, counter=counter)

    zeta = np.zeros((nt + 1, total))
    xi = np.zeros((nt + 1, total))
    eta = np.zeros((nt + 1, total))
    rho = np.zeros((nt + 1, total))

    theta_b = base.field_array("theta")
    phi_b = base.field_array("phi")
    sigma_b = base.field_array("sigma")
    directions = h.flat_slices
    for step in range(nt):
        out = _lin_step_arrays(
            ops, theta_b[step], phi_b[step], sigma_b[step],
            sigma_b[step + 1], zeta[step], xi[step], rho[step],
            directions[step], params, nl, pot, step=step,
        )
        zeta[step + 1], xi[step + 1], eta[step + 1], rho[step + 1] = out

    return LinearizedTrajectory(
        time_grid, grid, zeta, xi, eta, rho,
        linear_solve_count=counter.count - start_count,
    )


@dataclass(frozen=True)
class TaylorRow:
    """One epsilon of the Taylor test."""

    epsilon: float
    remainder: float
    floor_flagged: bool


@dataclass(frozen=True)
class TaylorReport:
    """Remainders, pairwise slopes and the rounding floor of a Taylor test.

    Slopes near 2 confirm that the linearized sweep is the exact derivative
    of the forward sweep; rows whose remainder sits at the rounding floor are
    flagged and excluded from the slope list.
    """

    rows: tuple
    slopes: tuple
    floor: float

    def min_slope(self):
        return min(self.slopes) if self.slopes else float("nan")

    def max_slope(self):
        return max(self.slopes) if self.slopes else float("nan")


def taylor_test(base_u, h, epsilons, init, cfg, params, nl, pot):
    """Second-order Taylor remainder check of the linearization.

    For each epsilon the remainder ||S(u + eps*h) - S(u) - eps*S'(u)h||_Y is
    computed; exact differentiation makes it O(eps^2), so consecutive
    remainders should decay with slope about 2 in log-log until they hit the
    rounding floor 1e-12 * (1 + ||S(u)||_Y).

    Args:
        base_u: Base control.
        h: Direction; must be nonzero.
        epsilons: At least three strictly decreasing positive values.
        init: Initial data.
        cfg: SolverConfig.
        params, nl, pot: Model data.

    Returns:
        TaylorReport with one row per epsilon and one slope per consecutive
        pair of rows that both sit above the floor.
    """
    eps = [float(e) for e in epsilons]
    if len(eps) < 3:
        raise ConfigurationError("taylor test needs at least three epsilons")
    if any(e <= 0.0 for e in eps):
        raise ConfigurationError("taylor epsilons must be positive")
    if any(a <= b for a, b in zip(eps, eps[1:])):
        raise ConfigurationError("taylor epsilons must be strictly decreasing")
    if l2q_norm(h) == 0.0:
        raise ConfigurationError("taylor direction must be nonzero")

    base_traj = solve_state(init, base_u, cfg, params, nl, pot)
    lin = solve_linearized(base_traj, h, cfg, params, nl, pot)
    grid = base_traj.grid
    time_grid = base_traj.time_grid

    base_norm = y_norm(
        base_traj.field_array("theta"), base_traj.field_array("phi"),
        base_traj.field_array("mu"), base_traj.field_array("sigma"),
        grid, time_grid,
    )
    floor = 1e-12 * (1.0 + base_norm)

    rows = []
    for e in eps:
        perturbed = solve_state(init, base_u + e * h, cfg, params, nl, pot)
        remainder = y_norm(
            perturbed.field_array("theta") - base_traj.field_array("theta")
            - e * lin.field_array("zeta"),
            perturbed.field_array("phi") - base_traj.field_array("phi")
            - e * lin.field_array("xi"),
            perturbed.field_array("mu") - base_traj.field_array("mu")
            - e * lin.field_array("eta"),
            perturbed.field_array("sigma") - base_traj.field_array("sigma")
            - e * lin.field_array("rho"),
            grid, time_grid,
        )
        rows.append(TaylorRow(epsilon=e, remainder=float(remainder),
                              floor_flagged=remainder <= floor))

    slopes = []
    for first, second in zip(rows, rows[1:]):
        if first.floor_flagged or second.floor_flagged:
            continue
        slopes.append(math.log(first.remainder / second.remainder)
                      / math.log(first.epsilon / second.epsilon))

    return TaylorReport(rows=tuple(rows), slopes=tuple(slopes), floor=floor)
