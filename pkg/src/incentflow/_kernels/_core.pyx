# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled iteration kernels; mirrors ``_py.py`` operation for operation.

Every loop keeps the same update order, measurement reuse and projection
placement as the NumPy fallback, so traces agree between backends to
floating-point reassociation level.  The hot loops run without the GIL so
independent runs can execute on a thread pool.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, pow, sqrt

cnp.import_array()

DEF TRIG_ON_VIOLATION = 0
DEF TRIG_BEFORE_FEASIBLE = 1
DEF TRIG_NONE = 2
DEF TRIG_RESETTING = 3

DEF MODE_PRACTICAL = 0
DEF MODE_THEOREM2 = 1

DEF GRAD_EXACT = 0
DEF GRAD_COARSE = 1
DEF GRAD_LINAPPROX = 2


cdef inline void _matvec(double[:, ::1] R, double[::1] x, double[::1] out, int n) nogil:
    cdef int m, j
    cdef double acc
    for m in range(n):
        acc = 0.0
        for j in range(n):
            acc += R[m, j] * x[j]
        out[m] = acc


cdef inline void _demand(int family, int y, double[::1] u_star, double[::1] delta,
                         double[::1] t, double[:, ::1] s_inc, double[:, ::1] s_lvl,
                         long[::1] s_cnt, double[::1] i, double[::1] out, int n) nogil:
    cdef int j, d
    cdef double ic, frac, level
    for j in range(n):
        ic = i[j]
        if ic > t[j]:
            ic = t[j]
        if family == 0:
            out[j] = u_star[j] + delta[j] * ((t[j] - ic) / t[j])
        elif family == 1 or family == 2:
            frac = (t[j] - ic) / t[j]
            out[j] = u_star[j] + delta[j] * pow(frac, <double> y)
        elif family == 3:
            frac = ic / t[j]
            out[j] = u_star[j] + delta[j] * (1.0 - pow(frac, <double> y))
        else:
            level = u_star[j] + delta[j]
            for d in range(s_cnt[j]):
                if ic >= s_inc[j, d]:
                    level = s_lvl[j, d]
                else:
                    break
            out[j] = level


cdef inline void _grad(int family, int y, double[::1] delta, double[::1] t,
                       double[::1] i, double[::1] out, int n) nogil:
    cdef int j
    cdef double ic, b
    for j in range(n):
        ic = i[j]
        if ic > t[j]:
            ic = t[j]
        if family == 0:
            out[j] = -delta[j] / t[j] if ic < t[j] else 0.0
        else:
            b = delta[j] / pow(t[j], <double> y)
            if family == 1 or family == 2:
                out[j] = (<double> y) * b * pow(ic - t[j], <double> (y - 1))
            else:
                out[j] = -(<double> y) * b * pow(ic, <double> (y - 1))


cdef inline double _vsum(double[::1] x, int n) nogil:
    cdef int j
    cdef double acc = 0.0
    for j in range(n):
        acc += x[j]
    return acc


cdef inline double _dot(double[::1] a, double[::1] b, int n) nogil:
    cdef int j
    cdef double acc = 0.0
    for j in range(n):
        acc += a[j] * b[j]
    return acc


cdef class _Pack:
    cdef int n, family, exponent
    cdef double[::1] u_star, delta, t, vc, v_lo
    cdef double[:, ::1] R, s_inc, s_lvl
    cdef long[::1] s_cnt

    def __init__(self, pack):
        self.n = pack.n
        self.family = pack.family
        self.exponent = pack.exponent
        self.u_star = pack.u_star
        self.delta = pack.delta
        self.t = pack.t
        self.R = pack.R
        self.vc = pack.vc
        self.v_lo = pack.v_lo
        self.s_inc = pack.step_inc
        self.s_lvl = pack.step_lvl
        self.s_cnt = pack.step_count


def run_iii(pack, double[::1] i, int iters, double eps,
            double[::1] cost, double[::1] minv, double[::1] maxh,
            cnp.uint8_t[::1] feas, double[::1] dualn):
    cdef _Pack pk = _Pack(pack)
    cdef int n = pk.n
    cdef double[::1] d = np.empty(n)
    cdef double[::1] v = np.empty(n)
    cdef int k, j
    cdef double mn, mh, hval
    with nogil:
        _demand(pk.family, pk.exponent, pk.u_star, pk.delta, pk.t,
                pk.s_inc, pk.s_lvl, pk.s_cnt, i, d, n)
        for k in range(iters):
            for j in range(n):
                i[j] = i[j] + eps * (d[j] - pk.u_star[j])
                if i[j] < 0.0:
                    i[j] = 0.0
            _demand(pk.family, pk.exponent, pk.u_star, pk.delta, pk.t,
                    pk.s_inc, pk.s_lvl, pk.s_cnt, i, d, n)
            _matvec(pk.R, d, v, n)
            mn = 1e300
            mh = -1e300
            for j in range(n):
                v[j] = pk.vc[j] - v[j]
                hval = pk.v_lo[j] - v[j]
                if v[j] < mn:
                    mn = v[j]
                if hval > mh:
                    mh = hval
            cost[k] = _vsum(i, n)
            minv[k] = mn
            maxh[k] = mh
            feas[k] = 1 if mh <= 0.0 else 0
            dualn[k] = 0.0
    return 0.0, False, 0.0


cdef inline void _measure(_Pack pk, double[::1] i, double[::1] d, double[::1] v,
                          double[::1] h, double* mn, double* mh) nogil:
    cdef int j, n = pk.n
    _demand(pk.family, pk.exponent, pk.u_star, pk.delta, pk.t,
            pk.s_inc, pk.s_lvl, pk.s_cnt, i, d, n)
    _matvec(pk.R, d, v, n)
    mn[0] = 1e300
    mh[0] = -1e300
    for j in range(n):
        v[j] = pk.vc[j] - v[j]
        h[j] = pk.v_lo[j] - v[j]
        if v[j] < mn[0]:
            mn[0] = v[j]
        if h[j] > mh[0]:
            mh[0] = h[j]


def run_daio(pack, double[::1] i, double[::1] lam, int iters, double eps_dual,
             double ramp_inc, int trigger, bint feasible_seen,
             double[::1] cost, double[::1] minv, double[::1] maxh,
             cnp.uint8_t[::1] feas, double[::1] dualn, double eps1=0.0):
    cdef _Pack pk = _Pack(pack)
    cdef int n = pk.n
    cdef double[::1] d = np.empty(n)
    cdef double[::1] v = np.empty(n)
    cdef double[::1] h = np.empty(n)
    cdef double[::1] w = np.empty(n)
    cdef int k, j
    cdef double mn, mh, min_lam = 1e300, b, wj, lam_max, acc
    with nogil:
        for k in range(iters):
            lam_max = 0.0
            for j in range(n):
                if lam[j] > lam_max:
                    lam_max = lam[j]
            if lam_max <= 0.0:
                for j in range(n):
                    i[j] = 0.0
            else:
                _matvec(pk.R, lam, w, n)
                for j in range(n):
                    b = pk.delta[j] / (pk.t[j] * pk.t[j])
                    wj = 2.0 * b * w[j]
                    if wj > 0.0:
                        i[j] = pk.t[j] - 1.0 / wj
                        if i[j] < 0.0:
                            i[j] = 0.0
                    else:
                        i[j] = 0.0
            _measure(pk, i, d, v, h, &mn, &mh)
            acc = 0.0
            for j in range(n):
                lam[j] = lam[j] + eps_dual * h[j]
                if lam[j] < 0.0:
                    lam[j] = 0.0
                if lam[j] < min_lam:
                    min_lam = lam[j]
                acc += lam[j] * lam[j]
            cost[k] = _vsum(i, n)
            minv[k] = mn
            maxh[k] = mh
            feas[k] = 1 if mh <= 0.0 else 0
            dualn[k] = sqrt(acc)
            if mh > 0.0:
                if trigger == TRIG_ON_VIOLATION or trigger == TRIG_RESETTING or (
                        trigger == TRIG_BEFORE_FEASIBLE and not feasible_seen):
                    eps_dual = eps_dual + ramp_inc
            else:
                feasible_seen = True
                if trigger == TRIG_RESETTING:
                    eps_dual = eps1
    return eps_dual, bool(feasible_seen), min_lam


def run_foio(pack, double[::1] i, double[::1] lam, double[::1] h_prev, int iters,
             int mode, double eps_primal, double gamma_c, long gamma_k0,
             long k_global, bint psi_primal_only, int grad_mode,
             double[::1] coarse, double eps_dual, double ramp_inc, int trigger,
             bint feasible_seen,
             double[::1] cost, double[::1] minv, double[::1] maxh,
             cnp.uint8_t[::1] feas, double[::1] dualn, double eps1=0.0):
    cdef _Pack pk = _Pack(pack)
    cdef int n = pk.n
    cdef double[::1] d = np.empty(n)
    cdef double[::1] v = np.empty(n)
    cdef double[::1] h = np.empty(n)
    cdef double[::1] w = np.empty(n)
    cdef double[::1] gd = np.empty(n)
    cdef double[::1] gL = np.empty(n)
    cdef double[::1] d_meas = np.empty(n)
    cdef int k, j
    cdef double mn, mh, min_lam = 1e300, psi_sq, psi, gamma, step, eps_p, eps_d, acc
    with nogil:
        _demand(pk.family, pk.exponent, pk.u_star, pk.delta, pk.t,
                pk.s_inc, pk.s_lvl, pk.s_cnt, i, d_meas, n)
        for k in range(iters):
            if grad_mode == GRAD_COARSE:
                for j in range(n):
                    gd[j] = coarse[j] if d_meas[j] > pk.u_star[j] else 0.0
            elif grad_mode == GRAD_LINAPPROX:
                for j in range(n):
                    gd[j] = -pk.delta[j] / pk.t[j] if i[j] < pk.t[j] else 0.0
            else:
                _grad(pk.family, pk.exponent, pk.delta, pk.t, i, gd, n)
            _matvec(pk.R, lam, w, n)
            for j in range(n):
                gL[j] = 1.0 + gd[j] * w[j]
            if mode == MODE_THEOREM2:
                psi_sq = 0.0
                for j in range(n):
                    psi_sq += gL[j] * gL[j]
                if not psi_primal_only:
                    for j in range(n):
                        psi_sq += h_prev[j] * h_prev[j]
                psi = sqrt(psi_sq)
                gamma = gamma_c / (<double> (gamma_k0 + k_global + k + 1))
                step = 0.0 if psi == 0.0 else gamma / psi
                eps_p = step
                eps_d = step
            else:
                eps_p = eps_primal
                eps_d = eps_dual
            for j in range(n):
                i[j] = i[j] - eps_p * gL[j]
                if i[j] < 0.0:
                    i[j] = 0.0
            _measure(pk, i, d, v, h, &mn, &mh)
            for j in range(n):
                d_meas[j] = d[j]
            acc = 0.0
            for j in range(n):
                lam[j] = lam[j] + eps_d * h[j]
                if lam[j] < 0.0:
                    lam[j] = 0.0
                if lam[j] < min_lam:
                    min_lam = lam[j]
                acc += lam[j] * lam[j]
            for j in range(n):
                h_prev[j] = h[j]
            cost[k] = _vsum(i, n)
            minv[k] = mn
            maxh[k] = mh
            feas[k] = 1 if mh <= 0.0 else 0
            dualn[k] = sqrt(acc)
            if mode == MODE_PRACTICAL:
                if mh > 0.0:
                    if trigger == TRIG_ON_VIOLATION or trigger == TRIG_RESETTING or (
                            trigger == TRIG_BEFORE_FEASIBLE and not feasible_seen):
                        eps_dual = eps_dual + ramp_inc
                else:
                    feasible_seen = True
                    if trigger == TRIG_RESETTING:
                        eps_dual = eps1
            elif mh <= 0.0:
                feasible_seen = True
    return eps_dual, bool(feasible_seen), min_lam


def run_zoio(pack, double[::1] i, double[::1] lam, int iters, double eps_primal,
             double p_reg, double sigma, double decay, double[:, ::1] zeta,
             noise, double eps_dual, double ramp_inc, int trigger,
             bint feasible_seen,
             double[::1] cost, double[::1] minv, double[::1] maxh,
             cnp.uint8_t[::1] feas, double[::1] dualn, double eps1=0.0):
    cdef _Pack pk = _Pack(pack)
    cdef int n = pk.n
    cdef bint has_noise = noise is not None
    cdef double[:, :, ::1] nv
    if has_noise:
        nv = noise
    else:
        nv = np.zeros((1, 3, n))
    cdef double[::1] ip = np.empty(n)
    cdef double[::1] im = np.empty(n)
    cdef double[::1] dp = np.empty(n)
    cdef double[::1] dm = np.empty(n)
    cdef double[::1] hp = np.empty(n)
    cdef double[::1] hm = np.empty(n)
    cdef double[::1] d = np.empty(n)
    cdef double[::1] v = np.empty(n)
    cdef double[::1] h = np.empty(n)
    cdef double[::1] tmp = np.empty(n)
    cdef int k, j
    cdef double mn, mh, min_lam = 1e300, lp, lm, gest, acc
    with nogil:
        for k in range(iters):
            for j in range(n):
                ip[j] = i[j] + sigma * zeta[k, j]
                if ip[j] < 0.0:
                    ip[j] = 0.0
                im[j] = i[j] - sigma * zeta[k, j]
                if im[j] < 0.0:
                    im[j] = 0.0
            _demand(pk.family, pk.exponent, pk.u_star, pk.delta, pk.t,
                    pk.s_inc, pk.s_lvl, pk.s_cnt, ip, dp, n)
            _demand(pk.family, pk.exponent, pk.u_star, pk.delta, pk.t,
                    pk.s_inc, pk.s_lvl, pk.s_cnt, im, dm, n)
            if has_noise:
                for j in range(n):
                    dp[j] = dp[j] + nv[k, 0, j]
                    dm[j] = dm[j] + nv[k, 1, j]
            _matvec(pk.R, dp, tmp, n)
            for j in range(n):
                hp[j] = pk.v_lo[j] - (pk.vc[j] - tmp[j])
            _matvec(pk.R, dm, tmp, n)
            for j in range(n):
                hm[j] = pk.v_lo[j] - (pk.vc[j] - tmp[j])
            lp = _vsum(ip, n) + _dot(lam, hp, n)
            lm = _vsum(im, n) + _dot(lam, hm, n)
            for j in range(n):
                gest = zeta[k, j] * ((lp - lm) / (2.0 * sigma))
                i[j] = (1.0 - eps_primal * p_reg) * i[j] - eps_primal * gest
                if i[j] < 0.0:
                    i[j] = 0.0
            _demand(pk.family, pk.exponent, pk.u_star, pk.delta, pk.t,
                    pk.s_inc, pk.s_lvl, pk.s_cnt, i, d, n)
            if has_noise:
                for j in range(n):
                    d[j] = d[j] + nv[k, 2, j]
            _matvec(pk.R, d, v, n)
            mn = 1e300
            mh = -1e300
            for j in range(n):
                v[j] = pk.vc[j] - v[j]
                h[j] = pk.v_lo[j] - v[j]
                if v[j] < mn:
                    mn = v[j]
                if h[j] > mh:
                    mh = h[j]
            acc = 0.0
            for j in range(n):
                lam[j] = decay * lam[j] + eps_dual * h[j]
                if lam[j] < 0.0:
                    lam[j] = 0.0
                if lam[j] < min_lam:
                    min_lam = lam[j]
                acc += lam[j] * lam[j]
            cost[k] = _vsum(i, n)
            minv[k] = mn
            maxh[k] = mh
            feas[k] = 1 if mh <= 0.0 else 0
            dualn[k] = sqrt(acc)
            if mh > 0.0:
                if trigger == TRIG_ON_VIOLATION or trigger == TRIG_RESETTING or (
                        trigger == TRIG_BEFORE_FEASIBLE and not feasible_seen):
                    eps_dual = eps_dual + ramp_inc
            else:
                feasible_seen = True
                if trigger == TRIG_RESETTING:
                    eps_dual = eps1
    return eps_dual, bool(feasible_seen), min_lam
