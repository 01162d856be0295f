"""Sparse direct solves with residual-checked iterative refinement.

Every inner linear system in the package goes through this wrapper: one LU
factorization per matrix, reused across right-hand sides, with each solve
refined until the relative residual meets the requested tolerance. A solve
that cannot reach the tolerance, or that produces non-finite values, raises
``SolverError`` carrying the step index and the achieved residual.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import splu

from .errors import SolverError

__all__ = ["SolveCounter", "FactorizedOperator"]


class SolveCounter:
    """Mutable tally of inner linear solves, threaded through sweeps."""

    __slots__ = ("count",)

    def __init__(self):
        self.count = 0


class FactorizedOperator:
    """LU-factorized sparse operator with refinement on every solve."""

    def __init__(self, matrix, linear_tol, max_linear_iters, counter=None):
        self._matrix = matrix.tocsc()
        self._lu = splu(self._matrix)
        self._tol = float(linear_tol)
        self._max_iters = int(max_linear_iters)
        self._counter = counter

    def solve(self, rhs, step=None, guess=None):
        """Solve A x = rhs to the configured relative residual.

        Args:
            rhs: Right-hand side (flat array).
            step: Time-step index attached to failures, for diagnostics.
            guess: Optional warm start. The solve then corrects the guess
                through the residual equation, which keeps slowly varying
                solutions (fixed points in particular) from accumulating
                factorization rounding noise step after step.

        Returns:
            Solution array.

        Raises:
            SolverError: On residual nonconvergence or non-finite values.
        """
        if self._counter is not None:
            self._counter.count += 1
        rhs = np.asarray(rhs, dtype=float)
        if not np.all(np.isfinite(rhs)):
            raise SolverError(
                "linear solve received non-finite right-hand side",
                step=step, residual=float("nan"),
            )
        rhs_norm = float(np.linalg.norm(rhs))
        if rhs_norm == 0.0:
            return np.zeros_like(rhs)
        if guess is None:
            x = self._lu.solve(rhs)
        else:
            x = np.asarray(guess, dtype=float)
        relative = np.inf
        for _ in range(self._max_iters + 1):
            if not np.all(np.isfinite(x)):
                raise SolverError(
                    "linear solve produced non-finite values",
                    step=step, residual=float("nan"),
                )
            residual = rhs - self._matrix @ x
            relative = float(np.linalg.norm(residual)) / rhs_norm
            if relative <= self._tol:
                return x
            x = x + self._lu.solve(residual)
        raise SolverError(
            f"linear solve stalled at relative residual {relative:.3e}"
            f" (tolerance {self._tol:.3e})",
            step=step, residual=relative,
        )
