"""Discrete adjoint of the forward time-stepping map.

The adjoint system is the exact transpose of the linearized sweep with
respect to the trapezoid inner product, derived by differentiating the
Lagrangian of the discrete equations. Because the quadrature matrix W and
the mirror-closed Laplacian satisfy W L = L^T W exactly, the transposed
equations read again as nodal equations in L itself, and every adjoint solve
reuses a forward factorization: the backward heat solve uses I - dt*L, the
backward phase solve uses the same fourth-order Schur complement, and the
backward nutrient solve uses the forward nutrient matrix built from the
decay coefficient one level below the step.

Indexing convention: the multiplier attached to the step that produces
level k is stored at trajectory index k - 1, so index m of an
AdjointTrajectory holds the multipliers of the step m -> m + 1, and index nt
holds the terminal data (z_T, p_T, q_T, r_T) derived from the terminal cost.
With this layout the reduced gradient is simply g_n = z_n + b5 * u_n, slice
by slice, where z_n is the z-component of trajectory index n.

The backward sweep can be driven either by a cost functional (tracking
residuals become the sources) or by arbitrary per-level sources and terminal
data, which is what the transpose identity checks exercise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .grid import Field, SpaceTimeField, laplacian_matrix
from .linsolve import FactorizedOperator, SolveCounter
from .state import SolverConfig, StepOperators, _decay_coefficient

__all__ = [
    "AdjointSnapshot",
    "AdjointTrajectory",
    "AdjointSources",
    "final_conditions",
    "step_adjoint_backward",
    "solve_adjoint",
    "solve_adjoint_with_sources",
    "GradientResult",
    "reduced_gradient",
]


@dataclass(frozen=True)
class AdjointSnapshot:
    """Adjoint variables at one trajectory index."""

    z: Field
    p: Field
    q: Field
    r: Field

    def __post_init__(self):
        grids = {self.z.grid, self.p.grid, self.q.grid, self.r.grid}
        if len(grids) != 1:
            raise ConfigurationError("snapshot fields live on different grids")

    @property
    def grid(self):
        return self.z.grid


_ADJ_NAMES = ("z", "p", "q", "r")


class AdjointTrajectory:
    """Backward sweep output as (nt + 1, N) arrays.

    Index m < nt holds the multipliers of the step m -> m + 1; index nt
    holds the terminal data.
    """

    __slots__ = ("time_grid", "grid", "_arrays", "linear_solve_count")

    def __init__(self, time_grid, grid, z, p, q, r, linear_solve_count=0):
        arrays = {}
        expected = (time_grid.nt + 1, grid.num_nodes)
        for name, arr in zip(_ADJ_NAMES, (z, p, q, r)):
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
        self.linear_solve_count = int(linear_solve_count)

    def field_array(self, name):
        """Read-only (nt + 1, N) array of one adjoint field."""
        return self._arrays[name]

    def snapshot(self, level):
        shape = self.grid.shape
        return AdjointSnapshot(
            z=Field(self.grid, self._arrays["z"][level].reshape(shape)),
            p=Field(self.grid, self._arrays["p"][level].reshape(shape)),
            q=Field(self.grid, self._arrays["q"][level].reshape(shape)),
            r=Field(self.grid, self._arrays["r"][level].reshape(shape)),
        )

    @property
    def snapshots(self):
        return tuple(self.snapshot(k) for k in range(self.time_grid.nt + 1))


def _target_slice(target, level, grid, nt):
    if target is None:
        return 0.0
    if isinstance(target, SpaceTimeField):
        if target.grid != grid or target.time_grid.nt != nt:
            raise ConfigurationError("tracking target grids do not match")
        return target.flat_slices[level]
    if isinstance(target, Field):
        if target.grid != grid:
            raise ConfigurationError("tracking target grid does not match")
        return target.flat
    raise ConfigurationError(
        f"unsupported tracking target type {type(target).__name__}"
    )


def _terminal_target(target, grid):
    if target is None:
        return 0.0
    if isinstance(target, Field):
        if target.grid != grid:
            raise ConfigurationError("terminal target grid does not match")
        return target.flat
    raise ConfigurationError(
        f"unsupported terminal target type {type(target).__name__}"
    )


class AdjointSources:
    """Per-level adjoint sources plus terminal data.

    The arrays have shape (nt + 1, N); level 0 is unused by the backward
    sweep and kept zero. Levels 1..nt enter the step that produces them with
    weight dt; the terminal vectors (g_z, g_w, g_r) seed the terminal data.
    """

    __slots__ = ("time_grid", "grid", "s_theta", "s_phi", "s_eta", "s_sigma",
                 "g_z", "g_w", "g_r")

    def __init__(self, time_grid, grid, s_theta=None, s_phi=None, s_eta=None,
                 s_sigma=None, g_z=None, g_w=None, g_r=None):
        expected = (time_grid.nt + 1, grid.num_nodes)
        self.time_grid = time_grid
        self.grid = grid
        for name, arr in (("s_theta", s_theta), ("s_phi", s_phi),
                          ("s_eta", s_eta), ("s_sigma", s_sigma)):
            if arr is None:
                arr = np.zeros(expected)
            else:
                arr = np.array(arr, dtype=float)
                if arr.shape != expected:
                    raise ConfigurationError(
                        f"source array {name} has shape {arr.shape},"
                        f" expected {expected}"
                    )
            arr.setflags(write=False)
            setattr(self, name, arr)
        for name, vec in (("g_z", g_z), ("g_w", g_w), ("g_r", g_r)):
            if vec is None:
                vec = np.zeros(grid.num_nodes)
            else:
                vec = np.array(vec, dtype=float)
                if vec.shape != (grid.num_nodes,):
                    raise ConfigurationError(
                        f"terminal vector {name} has shape {vec.shape},"
                        f" expected {(grid.num_nodes,)}"
                    )
            vec.setflags(write=False)
            setattr(self, name, vec)

    @classmethod
    def from_cost(cls, base, cost):
        """Tracking and terminal residuals of a quadratic cost.

        The running tracking terms are sampled at levels 1..nt-1 (the level-0
        terms do not depend on the control and the left-endpoint time rule
        never samples level nt); the terminal terms seed g_z and g_w.
        """
        grid = base.grid
        time_grid = base.time_grid
        nt = time_grid.nt
        theta = base.field_array("theta")
        phi = base.field_array("phi")

        s_theta = np.zeros((nt + 1, grid.num_nodes))
        s_phi = np.zeros((nt + 1, grid.num_nodes))
        if cost.b1 != 0.0:
            for k in range(1, nt):
                s_theta[k] = cost.b1 * (
                    theta[k] - _target_slice(cost.theta_q, k, grid, nt))
        if cost.b3 != 0.0:
            for k in range(1, nt):
                s_phi[k] = cost.b3 * (
                    phi[k] - _target_slice(cost.phi_q, k, grid, nt))
        g_z = cost.b2 * (theta[nt] - _terminal_target(cost.theta_omega, grid))
        g_w = cost.b4 * (phi[nt] - _terminal_target(cost.phi_omega, grid))
        return cls(time_grid, grid, s_theta=s_theta, s_phi=s_phi,
                   g_z=np.asarray(g_z, dtype=float) if cost.b2 != 0.0
                   else None,
                   g_w=np.asarray(g_w, dtype=float) if cost.b4 != 0.0
                   else None)


def _terminal_from_vectors(g_z, g_w, g_r, grid, params, cfg):
    """Split terminal cost gradients into the four adjoint variables."""
    z_t = np.asarray(g_z, dtype=float)
    v_t = np.asarray(g_w, dtype=float) - params.ell * z_t
    if params.tau == 0.0:
        p_t = v_t.copy()
    else:
        lap = laplacian_matrix(grid)
        eye = sp.identity(grid.num_nodes, format="csr")
        op = FactorizedOperator(eye - params.tau * lap, cfg.linear_tol,
                                cfg.max_linear_iters)
        p_t = op.solve(v_t)
    q_t = -(laplacian_matrix(grid) @ p_t)
    return z_t, p_t, q_t, np.asarray(g_r, dtype=float)


def final_conditions(state_t, cost, params, cfg=None):
    """Terminal adjoint data from the terminal state and the cost.

    The terminal cost gradients g_z = b2 * (theta_T - theta_omega) and
    g_w = b4 * (phi_T - phi_omega) are split into the four adjoint variables
    by z_T = g_z, (I - tau * Lap) p_T = g_w - ell * g_z, q_T = -Lap p_T and
    r_T = 0.

    Args:
        state_t: StateSnapshot at the final time.
        cost: Cost weights and targets.
        params: Model parameters.
        cfg: Optional SolverConfig for the tau-viscous terminal solve.

    Returns:
        AdjointSnapshot holding the terminal data.
    """
    cfg = cfg if cfg is not None else SolverConfig()
    grid = state_t.grid
    g_z = cost.b2 * (state_t.theta.flat - _terminal_target(cost.theta_omega,
                                                           grid))
    g_w = cost.b4 * (state_t.phi.flat - _terminal_target(cost.phi_omega,
                                                         grid))
    g_z = np.asarray(g_z, dtype=float) + np.zeros(grid.num_nodes)
    g_w = np.asarray(g_w, dtype=float) + np.zeros(grid.num_nodes)
    z_t, p_t, q_t, r_t = _terminal_from_vectors(
        g_z, g_w, np.zeros(grid.num_nodes), grid, params, cfg)
    shape = grid.shape
    return AdjointSnapshot(
        z=Field(grid, z_t.reshape(shape)),
        p=Field(grid, p_t.reshape(shape)),
        q=Field(grid, q_t.reshape(shape)),
        r=Field(grid, r_t.reshape(shape)),
    )


def _adjoint_step_arrays(ops, base, sources, level, z_next, p_next, q_next,
                         r_next, params, nl, pot):
    """One backward step on flat arrays, producing trajectory index level.

    The step transposes the forward step level -> level + 1, so the decay
    coefficient is evaluated at base level `level` while the frozen coupling
    coefficients live at base level k = level + 1. The terminal step
    (level = nt - 1) is seeded by the terminal data instead of later
    multipliers.
    """
    dt = ops.dt
    nt = base.time_grid.nt
    k = level + 1
    theta_b = base.field_array("theta")
    phi_b = base.field_array("phi")
    sigma_b = base.field_array("sigma")
    decay = _decay_coefficient(theta_b[level], phi_b[level], params, nl)
    s_eta_k = sources.s_eta[k]

    if k == nt:
        z_new = ops.heat.solve((z_next + dt * sources.s_theta[k]) / dt,
                               step=level)
        r_new = ops.nutrient_operator(decay).solve(
            (r_next + dt * sources.s_sigma[k]) / dt, step=level)
        w_t = p_next + params.tau * q_next + params.ell * z_next
        rhs_p = (w_t + dt * sources.s_phi[k] - params.ell * z_new
                 - dt * params.chi * (ops.lap @ r_new)
                 + dt * (ops.a * s_eta_k - ops.lap @ s_eta_k))
    else:
        theta_k = theta_b[k]
        phi_k = phi_b[k]
        sigma_next_level = sigma_b[k + 1]
        with np.errstate(over="ignore", invalid="ignore"):
            gate = np.asarray(nl.H_gate(phi_k), dtype=float)
            gate_prime = np.asarray(nl.H_gate_prime(phi_k), dtype=float)
            source_prime = (params.lambda_p * sigma_b[k] - params.lambda_a
                            - params.lambda_e * theta_k) * gate_prime
            k_prime = np.asarray(nl.K_temp_prime(theta_k), dtype=float)
            f_prime = np.asarray(pot.f_prime(phi_k), dtype=float)

        rhs_z = z_next + dt * (
            sources.s_theta[k] - params.lambda_e * gate * p_next
            + params.lambda_big * q_next
            - params.lambda_d * k_prime * sigma_next_level * r_next)
        z_new = ops.heat.solve(rhs_z / dt, step=level)

        rhs_r = r_next + dt * (
            sources.s_sigma[k] + params.lambda_p * gate * p_next
            + params.chi * q_next)
        r_new = ops.nutrient_operator(decay).solve(rhs_r / dt, step=level)

        rhs_p = (p_next
                 + dt * (source_prime * p_next + ops.a * q_next
                         - f_prime * q_next
                         - params.lambda_c * gate_prime * sigma_next_level
                         * r_next
                         + sources.s_phi[k])
                 + params.ell * (z_next - z_new)
                 - dt * params.chi * (ops.lap @ r_new)
                 + dt * (ops.a * s_eta_k - ops.lap @ s_eta_k))

    p_new = ops.ch_schur.solve(rhs_p / dt, step=level)
    q_new = -(ops.lap @ p_new) - s_eta_k
    return z_new, p_new, q_new, r_new


def step_adjoint_backward(adj_next, base, level, cost, cfg, params, nl, pot,
                          sources=None, ops=None):
    """One backward step, producing the multipliers of step level -> level+1.

    Args:
        adj_next: Adjoint snapshot at trajectory index level + 1 (for
            level = nt - 1 this is the terminal data).
        base: Full forward StateTrajectory; the step reads base levels
            level, level + 1 and, away from the terminal step, level + 2.
        level: Index in 0..nt-1 of the snapshot to produce.
        cost: Cost functional; ignored when sources is given.
        cfg: SolverConfig.
        params, nl, pot: Model data.
        sources: Optional AdjointSources overriding the cost-derived ones.
        ops: Optional prebuilt StepOperators for reuse.

    Returns:
        AdjointSnapshot at trajectory index level.
    """
    nt = base.time_grid.nt
    if not 0 <= level <= nt - 1:
        raise ConfigurationError(
            f"level must lie in 0..{nt - 1}, got {level}"
        )
    grid = base.grid
    if adj_next.grid != grid:
        raise ConfigurationError("adjoint grid does not match base")
    if sources is None:
        sources = AdjointSources.from_cost(base, cost)
    if ops is None:
        ops = StepOperators(grid, base.time_grid.dt, cfg, params)
    z, p, q, r = _adjoint_step_arrays(
        ops, base, sources, level, adj_next.z.flat, adj_next.p.flat,
        adj_next.q.flat, adj_next.r.flat, params, nl, pot,
    )
    shape = grid.shape
    return AdjointSnapshot(
        z=Field(grid, z.reshape(shape)),
        p=Field(grid, p.reshape(shape)),
        q=Field(grid, q.reshape(shape)),
        r=Field(grid, r.reshape(shape)),
    )


def solve_adjoint_with_sources(base, sources, cfg, params, nl, pot,
                               counter=None):
    """Backward sweep driven by explicit sources and terminal vectors.

    Args:
        base: Forward StateTrajectory.
        sources: AdjointSources on matching grids.
        cfg: SolverConfig.
        params, nl, pot: Model data.
        counter: Optional SolveCounter.

    Returns:
        AdjointTrajectory; index nt holds the terminal data.
    """
    grid = base.grid
    time_grid = base.time_grid
    if sources.grid != grid or sources.time_grid != time_grid:
        raise ConfigurationError("source grids do not match base")
    nt = time_grid.nt
    total = grid.num_nodes

    counter = counter if counter is not None else SolveCounter()
    start_count = counter.count
    ops = StepOperators(grid, time_grid.dt, cfg, params, counter=counter)

    z = np.zeros((nt + 1, total))
    p = np.zeros((nt + 1, total))
    q = np.zeros((nt + 1, total))
    r = np.zeros((nt + 1, total))
    z[nt], p[nt], q[nt], r[nt] = _terminal_from_vectors(
        sources.g_z, sources.g_w, sources.g_r, grid, params, cfg)

    for level in range(nt - 1, -1, -1):
        out = _adjoint_step_arrays(
            ops, base, sources, level, z[level + 1], p[level + 1],
            q[level + 1], r[level + 1], params, nl, pot,
        )
        z[level], p[level], q[level], r[level] = out

    return AdjointTrajectory(
        time_grid, grid, z, p, q, r,
        linear_solve_count=counter.count - start_count,
    )


def solve_adjoint(base, cost, cfg, params, nl, pot, counter=None):
    """Backward sweep driven by a cost functional.

    Equivalent to solve_adjoint_with_sources with the tracking and terminal
    residuals of the cost as sources.
    """
    sources = AdjointSources.from_cost(base, cost)
    return solve_adjoint_with_sources(base, sources, cfg, params, nl, pot,
                                      counter=counter)


@dataclass(frozen=True)
class GradientResult:
    """Reduced gradient together with the runs that produced it."""

    gradient: SpaceTimeField
    cost_value: float
    state: object
    adjoint: AdjointTrajectory


def reduced_gradient(u, init, cost, cfg, params, nl, pot, counter=None):
    """Reduced cost gradient at a control, via one forward-backward sweep.

    The gradient slice at level n is z_n + b5 * u_n, where z_n is the
    z-component of adjoint trajectory index n. The final slice never enters
    the left-endpoint time quadrature, so it carries no information, but it
    is populated by the same formula for uniformity.

    Returns:
        GradientResult with the gradient, the cost value and both sweeps.
    """
    from .control import evaluate_cost
    from .state import solve_state

    state = solve_state(init, u, cfg, params, nl, pot, counter=counter)
    adjoint = solve_adjoint(state, cost, cfg, params, nl, pot,
                            counter=counter)
    grad_values = adjoint.field_array("z") + cost.b5 * np.asarray(
        [u.flat_slices[k] for k in range(u.time_grid.nt + 1)])
    shape = (u.time_grid.nt + 1,) + u.grid.shape
    gradient = SpaceTimeField(u.time_grid, u.grid,
                              grad_values.reshape(shape))
    cost_value = evaluate_cost(state, u, cost)
    return GradientResult(gradient=gradient, cost_value=cost_value,
                          state=state, adjoint=adjoint)
