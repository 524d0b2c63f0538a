"""Pure-NumPy iteration kernels (fallback backend).

The compiled backend in ``_core.pyx`` mirrors these loops operation for
operation; any semantic change here must be replicated there.  Shared
conventions:

* one measurement drives both the trace row and the dual update of an
  iteration, and rows describe the state *after* that iteration's update;
* dual ramp schedules apply the current step size first and grow by
  ``ramp_inc`` afterwards when the iteration saw a violation (trigger 0)
  or saw one before any feasible iterate (trigger 1); trigger 2 is never
  grown (constant step);
* all iterates are projected onto the non-negative orthant.
"""

import numpy as np

TRIG_ON_VIOLATION = 0
TRIG_BEFORE_FEASIBLE = 1
TRIG_NONE = 2
TRIG_RESETTING = 3

MODE_PRACTICAL = 0
MODE_THEOREM2 = 1

GRAD_EXACT = 0
GRAD_COARSE = 1
GRAD_LINAPPROX = 2


def demand(pack, i):
    ic = np.minimum(i, pack.t)
    if pack.family == 0:
        return pack.u_star + pack.delta * ((pack.t - ic) / pack.t)
    if pack.family in (1, 2):
        return pack.u_star + pack.delta * ((pack.t - ic) / pack.t) ** pack.exponent
    if pack.family == 3:
        return pack.u_star + pack.delta * (1.0 - (ic / pack.t) ** pack.exponent)
    idx = np.sum(ic[:, None] >= pack.step_inc, axis=1) - 1
    peak = pack.u_star + pack.delta
    rows = np.arange(pack.n)
    return np.where(idx < 0, peak, pack.step_lvl[rows, np.maximum(idx, 0)])


def grad_demand(pack, i):
    ic = np.minimum(i, pack.t)
    if pack.family == 0:
        return np.where(ic < pack.t, -pack.delta / pack.t, 0.0)
    y = pack.exponent
    b = pack.delta / pack.t**y
    if pack.family in (1, 2):
        return y * b * (ic - pack.t) ** (y - 1)
    if pack.family == 3:
        return -y * b * ic ** (y - 1)
    raise ValueError("step responses have no gradient")


def _measure(pack, i):
    d = demand(pack, i)
    v = pack.vc - pack.R @ d
    h = pack.v_lo - v
    return d, v, h


def _ramp(eps_dual, ramp_inc, trigger, feasible_seen, violated, eps1=0.0):
    if violated and (
        trigger == TRIG_ON_VIOLATION
        or trigger == TRIG_RESETTING
        or (trigger == TRIG_BEFORE_FEASIBLE and not feasible_seen)
    ):
        eps_dual = eps_dual + ramp_inc
    if not violated:
        feasible_seen = True
        if trigger == TRIG_RESETTING:
            eps_dual = eps1
    return eps_dual, feasible_seen


def run_iii(pack, i, iters, eps, cost, minv, maxh, feas, dualn):
    d = demand(pack, i)
    for k in range(iters):
        np.maximum(i + eps * (d - pack.u_star), 0.0, out=i)
        d = demand(pack, i)
        v = pack.vc - pack.R @ d
        h = pack.v_lo - v
        cost[k] = i.sum()
        minv[k] = v.min()
        maxh[k] = h.max()
        feas[k] = maxh[k] <= 0.0
        dualn[k] = 0.0
    return 0.0, False, 0.0


def daio_primal(pack, lam):
    """Closed-form Lagrangian argmin for the quadratic-convex response."""
    if not np.any(lam > 0.0):
        return np.zeros(pack.n)
    b = pack.delta / pack.t**2
    w = 2.0 * b * (pack.R @ lam)
    i = np.zeros(pack.n)
    pos = w > 0.0
    i[pos] = np.maximum(pack.t[pos] - 1.0 / w[pos], 0.0)
    return i


def run_daio(pack, i, lam, iters, eps_dual, ramp_inc, trigger, feasible_seen,
             cost, minv, maxh, feas, dualn, eps1=0.0):
    min_lam = np.inf
    for k in range(iters):
        i[:] = daio_primal(pack, lam)
        d, v, h = _measure(pack, i)
        np.maximum(lam + eps_dual * h, 0.0, out=lam)
        min_lam = min(min_lam, lam.min())
        cost[k] = i.sum()
        minv[k] = v.min()
        maxh[k] = h.max()
        feas[k] = maxh[k] <= 0.0
        dualn[k] = np.sqrt((lam * lam).sum())
        eps_dual, feasible_seen = _ramp(eps_dual, ramp_inc, trigger,
                                        feasible_seen, maxh[k] > 0.0, eps1)
    return eps_dual, feasible_seen, min_lam


def run_foio(pack, i, lam, h_prev, iters, mode, eps_primal, gamma_c, gamma_k0,
             k_global, psi_primal_only, grad_mode, coarse, eps_dual, ramp_inc,
             trigger, feasible_seen, cost, minv, maxh, feas, dualn, eps1=0.0):
    min_lam = np.inf
    d_meas = demand(pack, i)
    for k in range(iters):
        if grad_mode == GRAD_COARSE:
            # estimate gated on observed compliance: a bus already measured
            # at the setpoint cannot shed further, whatever the estimate says
            gd = np.where(d_meas > pack.u_star, coarse, 0.0)
        elif grad_mode == GRAD_LINAPPROX:
            gd = np.where(i < pack.t, -pack.delta / pack.t, 0.0)
        else:
            gd = grad_demand(pack, i)
        gL = 1.0 + gd * (pack.R @ lam)
        if mode == MODE_THEOREM2:
            psi_sq = (gL * gL).sum()
            if not psi_primal_only:
                psi_sq += (h_prev * h_prev).sum()
            psi = np.sqrt(psi_sq)
            gamma = gamma_c / (gamma_k0 + k_global + k + 1)
            step = 0.0 if psi == 0.0 else gamma / psi
            eps_p = eps_d = step
        else:
            eps_p = eps_primal
            eps_d = eps_dual
        np.maximum(i - eps_p * gL, 0.0, out=i)
        d, v, h = _measure(pack, i)
        d_meas = d
        np.maximum(lam + eps_d * h, 0.0, out=lam)
        h_prev[:] = h
        min_lam = min(min_lam, lam.min())
        cost[k] = i.sum()
        minv[k] = v.min()
        maxh[k] = h.max()
        feas[k] = maxh[k] <= 0.0
        dualn[k] = np.sqrt((lam * lam).sum())
        if mode == MODE_PRACTICAL:
            eps_dual, feasible_seen = _ramp(eps_dual, ramp_inc, trigger,
                                            feasible_seen, maxh[k] > 0.0, eps1)
        elif maxh[k] <= 0.0:
            feasible_seen = True
    return eps_dual, feasible_seen, min_lam


def run_zoio(pack, i, lam, iters, eps_primal, p_reg, sigma, decay, zeta, noise,
             eps_dual, ramp_inc, trigger, feasible_seen,
             cost, minv, maxh, feas, dualn, eps1=0.0):
    min_lam = np.inf
    has_noise = noise is not None
    for k in range(iters):
        z = zeta[k]
        ip = np.maximum(i + sigma * z, 0.0)
        im = np.maximum(i - sigma * z, 0.0)
        dp = demand(pack, ip)
        dm = demand(pack, im)
        if has_noise:
            dp = dp + noise[k, 0]
            dm = dm + noise[k, 1]
        hp = pack.v_lo - (pack.vc - pack.R @ dp)
        hm = pack.v_lo - (pack.vc - pack.R @ dm)
        lp = ip.sum() + lam @ hp
        lm = im.sum() + lam @ hm
        gest = z * ((lp - lm) / (2.0 * sigma))
        np.maximum((1.0 - eps_primal * p_reg) * i - eps_primal * gest, 0.0, out=i)
        d = demand(pack, i)
        if has_noise:
            d = d + noise[k, 2]
        v = pack.vc - pack.R @ d
        h = pack.v_lo - v
        np.maximum(decay * lam + eps_dual * h, 0.0, out=lam)
        min_lam = min(min_lam, lam.min())
        cost[k] = i.sum()
        minv[k] = v.min()
        maxh[k] = h.max()
        feas[k] = maxh[k] <= 0.0
        dualn[k] = np.sqrt((lam * lam).sum())
        eps_dual, feasible_seen = _ramp(eps_dual, ramp_inc, trigger,
                                        feasible_seen, maxh[k] > 0.0, eps1)
    return eps_dual, feasible_seen, min_lam


def kkt_residual(pack, i, lam, h):
    """Projected stationarity + complementarity + primal feasibility.

    Stationarity uses the projected-gradient residual
    ``i - [i - grad]_+``, which vanishes exactly at a constrained
    stationary point and stays small for near-zero coordinates pressed
    against the bound.
    """
    gL = 1.0 + grad_demand(pack, i) * (pack.R @ lam)
    stat = np.abs(i - np.maximum(i - gL, 0.0))
    comp = abs(float(lam @ h))
    viol = max(0.0, float(h.max()))
    return max(float(stat.max()), comp, viol)
