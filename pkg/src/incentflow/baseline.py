"""Independent optima and bounds used to judge the feedback algorithms.

Linear responses admit an exact linear program; smooth convex responses
are solved by driving the same primal-dual machinery the optimizers use,
but with exact gradients, a diminishing normalized schedule and a KKT
stopping test (one numerical core, two trust levels).  Anything else gets
the linear-approximation bound, which by construction can only
underestimate the true optimal spend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import EnvPack
from .environment import Environment
from .grid import SafetySpec, SensitivityModel
from .response import (
    LINEAR,
    POLYNOMIAL_CONVEX,
    QUADRATIC_CONVEX,
    ResponseModel,
    evaluate_demand,
    linear_approximation,
)
from .simplex import LpResult, solve_lp

CONVEX_FAMILIES = (QUADRATIC_CONVEX, POLYNOMIAL_CONVEX)


@dataclass
class ConvexOptimum:
    incentive: np.ndarray
    cost: float
    duals: np.ndarray
    certified: bool
    kkt_residual: float
    duality_gap: float
    iterations: int


def _lower_only_env(model: ResponseModel, sens: SensitivityModel,
                    safety: SafetySpec, q_demand) -> Environment:
    q = np.zeros(sens.n) if q_demand is None else np.asarray(q_demand, dtype=float)
    if safety.mode != "lower-only":
        safety = SafetySpec(v_lower=safety.v_lower, v_upper=safety.v_upper,
                            mode="lower-only")
    return Environment(model=model, sens=sens, safety=safety, q_demand=q)


def lp_optimum(model: ResponseModel, sens: SensitivityModel, safety: SafetySpec,
               q_demand=None) -> tuple[np.ndarray, float, LpResult]:
    """Exact optimum for a linear response via the in-repo simplex.

    The voltage constraint is affine in the incentive once the response is
    linear: demand falls by ``(delta/t) i``, so the lower-bound map becomes
    ``h0 - R diag(delta/t) i <= 0`` with box constraints ``0 <= i <= t``.
    Raises :class:`LpInfeasibleError` with the violated rows if no
    incentive within the thresholds restores the band (cannot happen while
    the setpoint itself is feasible).
    """
    if model.family != LINEAR:
        raise ValueError("lp_optimum needs the linear response family")
    env = _lower_only_env(model, sens, safety, q_demand)
    p = model.params
    h0 = env.h_of_demand(p.u_star + p.delta)  # zero-incentive safety map
    slope = p.delta / p.t
    A_ge = sens.R * slope[None, :]
    res = solve_lp(
        c=np.ones(sens.n),
        A_ub=-A_ge,
        b_ub=-h0,
        upper=p.t.copy(),
    )
    if res.kkt_residual > 1e-8:
        raise RuntimeError(f"simplex certificate failed: residual {res.kkt_residual:.2e}")
    return res.x, res.cost, res


def lower_bound(model: ResponseModel, sens: SensitivityModel, safety: SafetySpec,
                q_demand=None) -> float:
    """Cost of the linear-approximation optimum: a bound from below on the
    spend of any response through the same anchors."""
    _, cost, _ = lp_optimum(linear_approximation(model), sens, safety, q_demand)
    return cost


def lagrangian_argmin(model: ResponseModel, sens: SensitivityModel,
                      lam: np.ndarray) -> np.ndarray:
    """Exact separable minimizer of the Lagrangian for smooth convex
    responses under the lower-bound safety map.

    Coordinate-wise stationarity ``1 = y b (t - i)^(y-1) (R lam)`` solves
    in closed form for every even power (the quadratic case is the
    familiar reciprocal rule); clipping to ``[0, t]`` completes the
    projection because each coordinate's objective is convex.
    """
    if model.family not in CONVEX_FAMILIES:
        raise ValueError("closed-form argmin needs a smooth convex response")
    p = model.params
    y = model.exponent
    w = sens.R @ np.asarray(lam, dtype=float)
    a = y * (p.delta / p.t**y) * w
    i = np.zeros(model.n)
    pos = a > 0.0
    i[pos] = p.t[pos] - (1.0 / a[pos]) ** (1.0 / (y - 1))
    return np.clip(i, 0.0, p.t)


def convex_optimum(model: ResponseModel, sens: SensitivityModel, safety: SafetySpec,
                   q_demand=None, tol: float = 1e-6, max_iter: int = 20_000,
                   warm: tuple[np.ndarray, np.ndarray] | None = None) -> ConvexOptimum:
    """High-accuracy solve of the smooth convex instance.

    Dual ascent with the exact separable inner argmin: the dual function
    is evaluated exactly at every step, the step size halves whenever an
    ascent step would lower it, and iteration stops once the KKT residual
    (stationarity, complementarity, violation) falls below ``tol``.  If
    the budget runs out the best iterate is returned flagged
    non-certified.  A final one-dimensional backtrack toward the
    always-feasible threshold point removes any residual violation.
    ``warm`` seeds the iterates (used by the per-step oracles of
    time-varying runs).
    """
    if model.family not in CONVEX_FAMILIES:
        raise ValueError("convex_optimum needs a smooth convex response family")
    env = _lower_only_env(model, sens, safety, q_demand)
    pack = EnvPack.from_environment(env)
    n = env.n
    if warm is None:
        lam = np.zeros(n)
    else:
        lam = np.asarray(warm[1], dtype=float).copy()
    eps0 = _dual_scale(env)
    eps = eps0
    i = lagrangian_argmin(model, sens, lam)
    h = env.h_of_demand(evaluate_demand(model, i))
    m_best = float(i.sum()) + float(lam @ h)
    resid = np.inf
    it = 0
    streak = 0
    for it in range(1, max_iter + 1):
        lam_next = np.maximum(lam + eps * h, 0.0)
        i_next = lagrangian_argmin(model, sens, lam_next)
        h_next = env.h_of_demand(evaluate_demand(model, i_next))
        m_next = float(i_next.sum()) + float(lam_next @ h_next)
        if m_next < m_best - 1e-15:
            eps *= 0.5  # overshoot: the dual value is concave, so shrink
            streak = 0
            if eps < 1e-14 * eps0:
                break
            continue
        streak += 1
        if streak >= 20:
            eps = min(eps * 1.5, eps0)  # regrow after sustained progress
            streak = 0
        lam, i, h, m_best = lam_next, i_next, h_next, m_next
        if it % 10 == 0:
            resid = _kernels.kkt_residual(pack, i, lam, h)
            if resid < 0.5 * tol:
                break
    resid = _kernels.kkt_residual(pack, i, lam, h)
    if resid >= 0.5 * tol:
        lam, i, h, resid = _active_set_newton(model, sens, env, pack, lam, resid)
    # Always hand back a feasible point; scaling the duals up moves the
    # iterate along the argmin manifold, so stationarity survives the
    # polish exactly.
    if h.max() > 0.0:
        lam, i, h = _polish_dual_scaling(model, sens, env, lam, h)
        resid = _kernels.kkt_residual(pack, i, lam, h)
    m_best = max(m_best, float(i.sum()) + float(lam @ h))
    gap = float(i.sum()) - m_best
    return ConvexOptimum(
        incentive=i,
        cost=float(i.sum()),
        duals=lam,
        certified=bool(resid < tol),
        kkt_residual=float(resid),
        duality_gap=float(max(gap, 0.0)),
        iterations=it,
    )


def _active_set_newton(model: ResponseModel, sens: SensitivityModel,
                       env: Environment, pack, lam: np.ndarray,
                       resid0: float, max_support: int = 8):
    """Finish the dual ascent: find a support A with ``h_A(lam_A) = 0``.

    The ascent phase leaves residual pressure spread over nearly collinear
    voltage rows (adjacent buses), where its anisotropic steps stall.  The
    true multiplier support is typically a small subset, so candidate rows
    are ranked by multiplier weight and supports of growing size are tried:
    on each, the map ``lam_A -> h_A`` and its closed-form Jacobian admit a
    damped Newton solve, and the first support whose solution passes the
    full KKT check wins.  Falls back to the incoming iterate otherwise.
    """
    p = model.params
    y = model.exponent
    b = p.delta / p.t**y

    def _evaluate(lam_v):
        i = lagrangian_argmin(model, sens, lam_v)
        h = env.h_of_demand(evaluate_demand(model, i))
        return i, h, _kernels.kkt_residual(pack, i, lam_v, h)

    lam0 = np.maximum(lam, 0.0)
    i0, h0, r0 = _evaluate(lam0)
    best = (lam0.copy(), i0, h0, r0)
    h_scale = float(np.max(np.abs(h0))) + 1e-30
    pool = [
        int(j) for j in np.argsort(-(lam0 + h_scale * (h0 > -1e-2 * h_scale)))
        if lam0[j] > 1e-9 * (1.0 + float(lam0.max())) or h0[j] > -1e-2 * h_scale
    ][:10]

    def _solve_support(support: tuple[int, ...]):
        sup = np.array(support, dtype=int)
        lam_t = np.zeros(model.n)
        lam_t[sup] = np.maximum(lam0[sup], 1e-3 * (1.0 + float(lam0.max())))
        for _ in range(40):
            i = lagrangian_argmin(model, sens, lam_t)
            h = env.h_of_demand(evaluate_demand(model, i))
            hs = h[sup]
            if np.max(np.abs(hs)) < 1e-13:
                return lam_t, i, h
            w = sens.R @ lam_t
            a = y * b * w
            interior = (i > 0.0) & (i < p.t) & (a > 0.0)
            didw = np.zeros(model.n)
            didw[interior] = (y / (y - 1.0)) * b[interior] \
                * a[interior] ** (-y / (y - 1.0))
            dprime = _kernels.grad_demand(pack, i)
            RS = sens.R[sup]
            J = (RS * (dprime * didw)[None, :]) @ RS.T
            try:
                step = np.linalg.solve(J, hs)
            except np.linalg.LinAlgError:
                return None
            norm = float(np.max(np.abs(step)))
            cap = 10.0 * (1.0 + float(np.max(lam_t[sup])))
            if norm > cap:
                step *= cap / norm
            lam_t[sup] = lam_t[sup] - step
            if np.any(lam_t[sup] < 0.0):
                return None  # wrong support: a multiplier wants to leave
        return None

    from itertools import combinations

    for k in range(1, min(max_support, len(pool)) + 1):
        for support in combinations(pool, k):
            sol = _solve_support(support)
            if sol is None:
                continue
            lam_t, i, h = sol
            resid = _kernels.kkt_residual(pack, i, lam_t, h)
            if resid < 1e-12:
                return lam_t, i, h, resid
    return best


def _dual_scale(env: Environment) -> float:
    """Rough magnitude of the optimal duals, from the stationarity balance
    ``1 ~ |response slope| * (R lam)`` at the zero incentive."""
    p = env.model.params
    gd0 = np.abs(env.grad_demand(np.zeros(env.n)))
    rowsum = env.sens.R @ np.ones(env.n)
    with np.errstate(divide="ignore"):
        per_bus = 1.0 / (gd0 * rowsum)
    finite = per_bus[np.isfinite(per_bus)]
    if finite.size == 0:
        return 1.0
    return float(max(1.0, np.median(finite)))


def _polish_dual_scaling(model: ResponseModel, sens: SensitivityModel,
                         env: Environment, lam: np.ndarray, h: np.ndarray,
                         bisections: int = 80):
    """Minimal uniform scale-up of the duals that restores feasibility.

    More dual pressure can only raise incentives and lift voltages, so the
    violation is monotone in the scale and bisection applies; because the
    primal stays the exact argmin of the scaled duals, stationarity is
    preserved through the polish."""

    def _h_at(scale):
        i = lagrangian_argmin(model, sens, scale * lam)
        return i, env.h_of_demand(evaluate_demand(model, i))

    if not np.any(lam > 0.0):
        raise RuntimeError("cannot restore feasibility without dual pressure")
    hi = 2.0
    i_hi, h_hi = _h_at(hi)
    grow = 0
    while h_hi.max() > 0.0:
        hi *= 2.0
        grow += 1
        if grow > 60:
            raise RuntimeError("feasibility unreachable by dual scaling")
        i_hi, h_hi = _h_at(hi)
    lo = 1.0
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        _, h_mid = _h_at(mid)
        if h_mid.max() <= 0.0:
            hi = mid
        else:
            lo = mid
    i = lagrangian_argmin(model, sens, hi * lam)
    return hi * lam, i, env.h_of_demand(evaluate_demand(model, i))


def brute_force_oracle(model: ResponseModel, sens: SensitivityModel,
                       safety: SafetySpec, q_demand=None,
                       grid_points: int = 200) -> tuple[np.ndarray, float]:
    """Exhaustive grid search over ``[0, t]^n``; the test-scale oracle.

    Refuses more than three buses (the grid grows as ``grid_points**n``).
    Returns the cheapest feasible grid point.
    """
    n = model.n
    if n > 3:
        raise ValueError("grid search only supports up to 3 buses")
    if grid_points < 2:
        raise ValueError("need at least 2 grid points per axis")
    if grid_points**n > 4_000_000:
        raise ValueError("grid too large; lower grid_points")
    env = _lower_only_env(model, sens, safety, q_demand)
    axes = [np.linspace(0.0, model.params.t[j], grid_points) for j in range(n)]
    # Separability: one evaluation per grid level fills a whole table row.
    levels = np.stack(axes, axis=1)
    d_table = np.stack([evaluate_demand(model, row) for row in levels])
    idx = np.meshgrid(*[np.arange(grid_points)] * n, indexing="ij")
    pts = np.stack([axes[j][idx[j].ravel()] for j in range(n)], axis=1)
    demands = np.stack([d_table[idx[j].ravel(), j] for j in range(n)], axis=1)
    v = env.sens.v_tilde[None, :] - demands @ env.sens.R.T - (env.sens.X @ env.q_demand)[None, :]
    lo, _ = env.safety.bounds(n)
    feas = np.all(lo[None, :] - v <= 0.0, axis=1)
    if not feas.any():
        raise RuntimeError("no feasible grid point; scenario premise violated")
    costs = pts.sum(axis=1)
    costs[~feas] = np.inf
    best = int(np.argmin(costs))
    return pts[best], float(costs[best])
