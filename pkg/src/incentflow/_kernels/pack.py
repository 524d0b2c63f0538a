"""Flat array view of an environment for the iteration kernels.

Both the compiled and the pure-NumPy kernels consume this layout; it
covers the fast configuration (affine voltage channel, lower-bound safety
map).  Demands enter the voltage as ``v(i) = vc - R d(i)`` and the safety
map as ``h(i) = (v_lo - vc) + R d(i)``.
"""

from dataclasses import dataclass

import numpy as np

FAMILY_CODES = {
    "linear": 0,
    "quadratic_convex": 1,
    "polynomial_convex": 2,
    "polynomial_concave": 3,
    "step": 4,
}


@dataclass
class EnvPack:
    n: int
    family: int
    exponent: int
    u_star: np.ndarray
    delta: np.ndarray
    t: np.ndarray
    R: np.ndarray
    vc: np.ndarray
    v_lo: np.ndarray
    # staircase data, padded to the widest bus; counts give true widths
    step_inc: np.ndarray
    step_lvl: np.ndarray
    step_count: np.ndarray

    @classmethod
    def from_environment(cls, env) -> "EnvPack":
        if env.channel != "lindistflow" or env.safety.mode != "lower-only":
            raise ValueError(
                "kernels cover the affine channel with lower-only safety; "
                "use the generic stepping path otherwise"
            )
        n = env.n
        p = env.model.params
        lo, _ = env.safety.bounds(n)
        vc = env.sens.v_tilde - env.sens.X @ env.q_demand
        if env.model.family == "step":
            counts = np.array([len(b) for b in env.model.breakpoints], dtype=np.int64)
            width = int(counts.max())
            inc = np.full((n, width), np.inf)
            lvl = np.zeros((n, width))
            for j, bus in enumerate(env.model.breakpoints):
                for d, (bi, bu) in enumerate(bus):
                    inc[j, d] = bi
                    lvl[j, d] = bu
        else:
            counts = np.zeros(n, dtype=np.int64)
            inc = np.zeros((n, 1))
            lvl = np.zeros((n, 1))
        # plain writable copies: the source models freeze their arrays, and
        # the compiled kernels take non-const buffer views
        return cls(
            n=n,
            family=FAMILY_CODES[env.model.family],
            exponent=int(env.model.exponent),
            u_star=np.array(p.u_star, dtype=float, order="C"),
            delta=np.array(p.delta, dtype=float, order="C"),
            t=np.array(p.t, dtype=float, order="C"),
            R=np.array(env.sens.R, dtype=float, order="C"),
            vc=np.array(vc, dtype=float, order="C"),
            v_lo=np.array(lo, dtype=float, order="C"),
            step_inc=np.array(inc, dtype=float, order="C"),
            step_lvl=np.array(lvl, dtype=float, order="C"),
            step_count=np.array(counts, dtype=np.int64, order="C"),
        )
