"""Dense two-phase simplex with Bland's rule.

Solves ``min c.x  s.t.  A x <= b,  0 <= x <= upper`` for the tiny,
well-scaled programs this package produces (tens of rows).  Bland's rule
guarantees termination under degeneracy; the returned certificate carries
the standard-form KKT residual so callers can assert optimality against
the original data rather than trusting the pivot path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = 1e-10


class LpInfeasibleError(RuntimeError):
    def __init__(self, rows):
        self.rows = list(rows)
        super().__init__(f"LP infeasible; unsatisfiable rows: {self.rows}")


class LpError(RuntimeError):
    pass


@dataclass
class LpResult:
    x: np.ndarray
    cost: float
    duals: np.ndarray        # one multiplier per <= row (non-negative)
    reduced_costs: np.ndarray
    kkt_residual: float
    iterations: int


def _pivot(T: np.ndarray, basis: np.ndarray, row: int, col: int):
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]
    basis[row] = col


def _bland_iterate(T: np.ndarray, basis: np.ndarray, ncols: int, max_iter: int) -> int:
    """Run simplex pivots on tableau T (last row = objective, last col = rhs)."""
    it = 0
    while True:
        obj = T[-1, :ncols]
        enter = -1
        for j in range(ncols):
            if obj[j] < -_EPS:
                enter = j
                break
        if enter < 0:
            return it
        ratios = []
        for r in range(T.shape[0] - 1):
            if T[r, enter] > _EPS:
                ratios.append((T[r, -1] / T[r, enter], basis[r], r))
        if not ratios:
            raise LpError("LP is unbounded")
        # Bland: among minimal ratios, leave the smallest basis index
        best = min(ratios, key=lambda z: (z[0], z[1]))
        _pivot(T, basis, best[2], enter)
        it += 1
        if it > max_iter:
            raise LpError("pivot limit exceeded")


def solve_lp(c: np.ndarray, A_ub: np.ndarray, b_ub: np.ndarray,
             upper: np.ndarray | None = None, max_iter: int = 20000) -> LpResult:
    """Minimize ``c.x`` over ``A_ub x <= b_ub`` and ``0 <= x <= upper``."""
    c = np.asarray(c, dtype=float)
    A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.atleast_1d(np.asarray(b_ub, dtype=float))
    n = c.shape[0]
    if upper is not None:
        ub = np.asarray(upper, dtype=float)
        A_ub = np.vstack([A_ub, np.eye(n)])
        b_ub = np.concatenate([b_ub, ub])
    m = A_ub.shape[0]
    if A_ub.shape[1] != n or b_ub.shape[0] != m:
        raise ValueError("inconsistent LP dimensions")
    if not (np.isfinite(c).all() and np.isfinite(A_ub).all() and np.isfinite(b_ub).all()):
        raise ValueError("LP data must be finite")

    # Standard form: A x + s = b with x, s >= 0; flip rows to get b >= 0.
    A = np.hstack([A_ub, np.eye(m)])
    b = b_ub.copy()
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0
    nv = n + m

    # Phase 1: artificials for flipped rows (their slack enters negated).
    art_rows = np.where(flip)[0]
    na = len(art_rows)
    T = np.zeros((m + 1, nv + na + 1))
    T[:m, :nv] = A
    T[:m, -1] = b
    basis = np.empty(m, dtype=int)
    for r in range(m):
        basis[r] = n + r  # slack of row r
    for k, r in enumerate(art_rows):
        T[r, nv + k] = 1.0
        basis[r] = nv + k
    iters = 0
    if na:
        T[-1, nv:nv + na] = 1.0
        for k, r in enumerate(art_rows):
            T[-1] -= T[r]
        iters += _bland_iterate(T, basis, nv + na, max_iter)
        if T[-1, -1] < -1e-8:
            bad = sorted(int(basis[r]) for r in range(m)
                         if basis[r] >= nv and T[r, -1] > 1e-8)
            rows = [art_rows[k - nv] for k in bad] if bad else list(art_rows)
            raise LpInfeasibleError(rows)
        # Drive any residual (degenerate) artificials out of the basis.
        for r in range(m):
            if basis[r] >= nv:
                for j in range(nv):
                    if abs(T[r, j]) > _EPS:
                        _pivot(T, basis, r, j)
                        break

    # Phase 2: restore the true objective, eliminate basic columns.
    T2 = np.zeros((m + 1, nv + 1))
    T2[:m, :nv] = T[:m, :nv]
    T2[:m, -1] = T[:m, -1]
    T2[-1, :n] = c
    for r in range(m):
        if basis[r] < nv and abs(T2[-1, basis[r]]) > 0.0:
            T2[-1] -= T2[-1, basis[r]] * T2[r]
    iters += _bland_iterate(T2, basis, nv, max_iter)

    z = np.zeros(nv)
    for r in range(m):
        if basis[r] < nv:
            z[basis[r]] = T2[r, -1]
    x = z[:n]
    cost = float(c @ x)

    # Recover duals from the basis against the original (unflipped) data;
    # row flips cancel out of the basic solution and the dual system.
    A_eq = np.hstack([A_ub, np.eye(m)])
    c_std = np.concatenate([c, np.zeros(m)])
    B = A_eq[:, basis]
    try:
        y = np.linalg.solve(B.T, c_std[basis])
    except np.linalg.LinAlgError as exc:
        raise LpError("singular final basis") from exc
    reduced = c_std - A_eq.T @ y
    duals = -y  # multipliers of A_ub x <= b_ub, non-negative at optimality

    primal_resid = float(np.max(np.abs(A_eq @ z - b_ub)))
    kkt = max(
        primal_resid,
        float(max(0.0, -z.min())),
        float(max(0.0, -reduced.min())),
    )
    return LpResult(x=x, cost=cost, duals=duals, reduced_costs=reduced[:n],
                    kkt_residual=kkt, iterations=iters)
