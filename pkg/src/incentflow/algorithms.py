"""The four feedback optimizers and their step-size machinery.

All four drive an incentive vector from measurements of the environment:

* ``III``  -- iterative incentive increase: push incentives by the demand
  residual until the setpoint is met; feasible but pays full price.
* ``DAIO`` -- dual ascent with the closed-form primal minimizer available
  for quadratic-convex responses.
* ``FOIO`` -- primal-dual gradient steps from exact or coarse response
  gradients.
* ``ZOIO`` -- model-free primal-dual with a two-point gradient estimate of
  the (regularized) Lagrangian from perturbed measurements.

Single steps are exposed as pure functions over :class:`AlgorithmState`;
long runs go through :func:`run_stationary` / :func:`run_time_varying`,
which dispatch the inner loops to the active kernel backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from ._kernels import EnvPack
from .dynamics import TimeVaryingScenario
from .environment import Environment
from .response import STEP

ON_VIOLATION = "on-violation"
BEFORE_FEASIBLE = "on-violation-before-first-feasible"
RESETTING = "on-violation-resetting"

_TRIGGER_CODE = {
    ON_VIOLATION: _kernels.TRIG_ON_VIOLATION,
    BEFORE_FEASIBLE: _kernels.TRIG_BEFORE_FEASIBLE,
    RESETTING: _kernels.TRIG_RESETTING,
}

_CHUNK = 16384  # fixed internal chunk so RNG consumption is config-independent


class DegenerateDualError(ArithmeticError):
    """A responsive bus received no dual pressure in the closed-form update."""


# ---------------------------------------------------------------------------
# step schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("step sizes must be strictly positive")


@dataclass(frozen=True)
class DualRamp:
    """Grows the dual step by ``increment`` on iterations that violate.

    ``trigger`` picks when growth applies: every violating iteration, or
    only violations seen before the first feasible iterate.
    """

    eps1: float = 1.0
    increment: float = 0.1
    trigger: str = ON_VIOLATION

    def __post_init__(self):
        if self.eps1 <= 0:
            raise ValueError("initial dual step must be strictly positive")
        if self.increment < 0:
            raise ValueError("ramp increment cannot be negative")
        if self.trigger not in _TRIGGER_CODE:
            raise ValueError(f"unknown ramp trigger {self.trigger!r}")


@dataclass(frozen=True)
class SquareSummable:
    """Normalized diminishing steps ``eps_k = gamma_k / ||psi_k||``.

    ``gamma_k = c / (k0 + k)`` is square summable but not summable for any
    ``c > 0``.  ``norm`` selects whether ``psi`` stacks the primal gradient
    with the dual block (default) or uses the primal block alone.
    """

    c: float = 1.0
    k0: int = 0
    norm: str = "stacked"

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("gamma scale must be strictly positive")
        if self.k0 < 0:
            raise ValueError("gamma offset cannot be negative")
        if self.norm not in ("stacked", "primal"):
            raise ValueError(f"unknown psi norm {self.norm!r}")

    def gamma(self, k: int) -> float:
        return self.c / (self.k0 + k)


Schedule = Constant | DualRamp | SquareSummable


# ---------------------------------------------------------------------------
# zero-order configuration and exploration signals
# ---------------------------------------------------------------------------

class UniformZeta:
    """I.i.d. uniform(-1, 1) exploration; ``E[zeta zeta^T] = I/3``."""

    normalizer = 1.0 / 3.0
    name = "uniform"

    def batch(self, start: int, count: int, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=(count, n))


class SinusoidalZeta:
    """Deterministic sinusoids with distinct integer frequencies.

    Over one full period the empirical second moment is exactly the
    identity, which is the property the averaged-update analysis needs.
    """

    normalizer = 1.0
    name = "sinusoidal"

    def __init__(self, period: int):
        if period < 2:
            raise ValueError("period must be at least 2")
        self.period = period

    def batch(self, start: int, count: int, n: int, rng=None) -> np.ndarray:
        if self.period < 2 * n + 1:
            raise ValueError("period must exceed twice the dimension")
        k = (np.arange(start, start + count) % self.period)[:, None]
        freqs = np.arange(1, n + 1)[None, :]
        return math.sqrt(2.0) * np.sin(2.0 * np.pi * freqs * k / self.period)


@dataclass(frozen=True)
class ZOConfig:
    """Two-point estimator knobs: perturbation, regularization, exploration.

    ``dual_decay`` is the multiplicative shrink applied to the duals each
    step (the regularizer ``d`` expressed through ``1 - eps*d``); 1 means
    no decay.  ``measurement_noise`` bounds the uniform noise injected on
    every measured demand.
    """

    sigma: float = 0.005
    p: float = 0.0
    dual_decay: float = 0.95
    zeta_sampler: str = "uniform"
    period: int | None = None
    measurement_noise: float = 0.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("perturbation magnitude must be strictly positive")
        if self.p < 0 or self.measurement_noise < 0:
            raise ValueError("regularization and noise bounds must be non-negative")
        if not 0.0 < self.dual_decay <= 1.0:
            raise ValueError("dual decay must lie in (0, 1]")
        if self.zeta_sampler not in ("uniform", "sinusoidal"):
            raise ValueError(f"unknown exploration sampler {self.zeta_sampler!r}")
        if self.zeta_sampler == "sinusoidal" and self.period is None:
            raise ValueError("the sinusoidal sampler needs a period")

    def sampler(self, n: int):
        if self.zeta_sampler == "uniform":
            return UniformZeta()
        return SinusoidalZeta(self.period if self.period is not None else 4 * n)


def zeta_estimator_bias_check(sampler, samples: int, n: int = 8,
                              rng: np.random.Generator | None = None) -> float:
    """Max-abs deviation of the empirical ``mean(zeta zeta^T)`` from ``c*I``."""
    if samples < 1:
        raise ValueError("need at least one sample")
    if rng is None:
        rng = np.random.default_rng(0)
    second = np.zeros((n, n))
    done = 0
    while done < samples:
        m = min(samples - done, 65536)
        Z = sampler.batch(done, m, n, rng)
        second += Z.T @ Z
        done += m
    dev = second / samples - sampler.normalizer * np.eye(n)
    return float(np.max(np.abs(dev)))


# ---------------------------------------------------------------------------
# costs and Lagrangians
# ---------------------------------------------------------------------------

def cost(i: np.ndarray) -> float:
    """Incentive spend: the l1 norm of a non-negative incentive vector."""
    i = np.asarray(i, dtype=float)
    if np.any(i < 0):
        raise ValueError("incentives must be non-negative")
    return float(i.sum())


def lagrangian(i: np.ndarray, lam: np.ndarray, env: Environment,
               regularized: tuple[float, float] | None = None) -> float:
    """``cost + lam . h(g(i))``, optionally with the strongly-convex terms."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("dual variables must be non-negative")
    val = cost(i) + float(lam @ env.h(np.asarray(i, dtype=float)))
    if regularized is not None:
        p, d = regularized
        val += 0.5 * p * float(np.sum(np.square(i)))
        val -= 0.5 * d * float(np.sum(np.square(lam)))
    return val


# ---------------------------------------------------------------------------
# algorithm state and single steps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlgorithmState:
    """One optimizer's iterate: primal/dual pair plus schedule bookkeeping.

    ``last_gradient`` is the primal block of the stacked map used by the
    normalized step rule; ``last_h`` its dual block (negated).  ``dual_step``
    carries the current ramp position.
    """

    incentive: np.ndarray
    dual: np.ndarray
    iteration: int = 0
    last_gradient: np.ndarray | None = None
    last_h: np.ndarray | None = None
    feasible_seen: bool = False
    dual_step: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "incentive", np.asarray(self.incentive, dtype=float))
        object.__setattr__(self, "dual", np.asarray(self.dual, dtype=float))
        if np.any(self.incentive < 0):
            raise ValueError("incentives must be non-negative")
        if np.any(self.dual < 0):
            raise ValueError("dual variables must be non-negative")


def initial_state(n: int, incentive=None, dual=None) -> AlgorithmState:
    i0 = np.zeros(n) if incentive is None else np.asarray(incentive, dtype=float)
    l0 = np.zeros(n) if dual is None else np.asarray(dual, dtype=float)
    return AlgorithmState(incentive=i0.copy(), dual=l0.copy())


def _dual_eps(schedule: Constant | DualRamp, state: AlgorithmState) -> float:
    if isinstance(schedule, Constant):
        return schedule.eps
    return schedule.eps1 if state.dual_step is None else state.dual_step


def _advance_ramp(schedule, eps_now: float, violated: bool,
                  feasible_seen: bool) -> tuple[float, bool]:
    if isinstance(schedule, DualRamp) and violated and (
        schedule.trigger in (ON_VIOLATION, RESETTING)
        or (schedule.trigger == BEFORE_FEASIBLE and not feasible_seen)
    ):
        eps_now += schedule.increment
    if (not violated and isinstance(schedule, DualRamp)
            and schedule.trigger == RESETTING):
        eps_now = schedule.eps1
    return eps_now, feasible_seen or not violated


def iii_step(state: AlgorithmState, env: Environment, eps: float = 0.1) -> AlgorithmState:
    """Raise each incentive by the signed gap between demand and setpoint."""
    if eps <= 0:
        raise ValueError("step size must be strictly positive")
    r = env.demand(state.incentive) - env.u_star_demand
    i_new = np.maximum(state.incentive + eps * r, 0.0)
    h = env.h(i_new)
    return replace(
        state,
        incentive=i_new,
        iteration=state.iteration + 1,
        last_h=h,
        feasible_seen=state.feasible_seen or bool(np.all(h <= 0)),
    )


def daio_primal(env: Environment, lam: np.ndarray) -> np.ndarray:
    """Exact Lagrangian minimizer for the quadratic-convex response.

    With no dual pressure the cheapest incentive is zero; otherwise each
    coordinate solves its scalar stationarity condition and is clipped to
    the feasible orthant.  A bus with demand excess but exactly zero
    pressure would divide by zero, which signals a structurally degenerate
    sensitivity row.
    """
    if env.model.family != "quadratic_convex":
        raise ValueError("closed-form update needs a quadratic-convex response")
    lam = np.asarray(lam, dtype=float)
    p = env.model.params
    if not np.any(lam > 0):
        return np.zeros(env.n)
    w = 2.0 * (p.delta / p.t**2) * (env.sens.R @ lam)
    if np.any((w <= 0) & (p.delta > 0)):
        raise DegenerateDualError(
            "zero dual pressure on a responsive bus; sensitivity row degenerate"
        )
    i = np.zeros(env.n)
    pos = w > 0
    i[pos] = np.maximum(p.t[pos] - 1.0 / w[pos], 0.0)
    return i


def daio_step(state: AlgorithmState, env: Environment,
              dual: Constant | DualRamp = DualRamp()) -> AlgorithmState:
    """Closed-form primal update, then projected dual ascent on measured h."""
    i_new = daio_primal(env, state.dual)
    h = env.h(i_new)
    eps = _dual_eps(dual, state)
    lam_new = np.maximum(state.dual + eps * h, 0.0)
    violated = bool(np.any(h > 0))
    eps_next, seen = _advance_ramp(dual, eps, violated, state.feasible_seen)
    return replace(
        state,
        incentive=i_new,
        dual=lam_new,
        iteration=state.iteration + 1,
        last_h=h,
        feasible_seen=seen,
        dual_step=eps_next,
    )


def daio_step_condition(lam0: np.ndarray, h0: np.ndarray, dual_value_fn) -> float:
    """Largest provably safe dual step from the starting point.

    ``dual_value_fn`` evaluates the dual function (the Lagrangian at its
    inner minimizer); ``h0`` is the safety map at the zero incentive.
    """
    denom = float(np.sum(np.square(h0)))
    if denom == 0.0:
        return np.inf
    return 2.0 * float(dual_value_fn(np.asarray(lam0, dtype=float))) / denom


def dual_value(env: Environment, lam: np.ndarray) -> float:
    """Dual function for quadratic-convex responses via the exact argmin."""
    i = daio_primal(env, lam)
    return lagrangian(i, lam, env)


def _resolve_grad(env: Environment, grad_source, i: np.ndarray) -> np.ndarray:
    if isinstance(grad_source, str):
        if grad_source == "exact":
            return env.grad_demand(i)
        if grad_source == "linear-approx":
            p = env.model.params
            return np.where(np.asarray(i) < p.t, -p.delta / p.t, 0.0)
        raise ValueError(f"unknown gradient source {grad_source!r}")
    # explicit coarse estimates are gated on observed compliance: a bus
    # already measured at the setpoint cannot shed further
    gd = np.asarray(grad_source, dtype=float)
    return np.where(env.demand(np.asarray(i, dtype=float)) > env.u_star_demand, gd, 0.0)


def lagrangian_gradient(env: Environment, i: np.ndarray, lam: np.ndarray,
                        grad_source="exact") -> np.ndarray:
    """Primal (sub)gradient of the Lagrangian under the lower-bound map.

    The cost contributes the all-ones vector; the constraint block chains
    the response slope through the sensitivity rows weighted by the duals.
    """
    gd = _resolve_grad(env, grad_source, i)
    # R is symmetric by construction, so R @ lam serves as R^T lam
    return 1.0 + gd * (env.sens.R @ np.asarray(lam, dtype=float))


def foio_step(state: AlgorithmState, env: Environment, grad_source="exact",
              primal: Constant | SquareSummable = Constant(5e-4),
              dual: Constant | DualRamp | None = DualRamp()) -> AlgorithmState:
    """Primal gradient descent plus projected dual ascent.

    With a :class:`SquareSummable` primal schedule the same normalized
    step feeds both updates; otherwise the primal step is constant and the
    dual follows its own (typically ramped) schedule.
    """
    if env.safety.mode != "lower-only":
        raise ValueError("gradient-based stepping assumes the lower-only safety map")
    k = state.iteration + 1
    gL = lagrangian_gradient(env, state.incentive, state.dual, grad_source)
    if isinstance(primal, SquareSummable):
        h_now = state.last_h if state.last_h is not None else env.h(state.incentive)
        eps_p, _ = foio_theoretical_schedule(
            replace(state, last_gradient=gL, last_h=h_now), primal
        )
        eps_d = eps_p
    else:
        eps_p = primal.eps
        eps_d = _dual_eps(dual, state)
    i_new = np.maximum(state.incentive - eps_p * gL, 0.0)
    h = env.h(i_new)
    lam_new = np.maximum(state.dual + eps_d * h, 0.0)
    violated = bool(np.any(h > 0))
    if isinstance(primal, SquareSummable):
        eps_next, seen = state.dual_step, state.feasible_seen or not violated
    else:
        eps_next, seen = _advance_ramp(dual, eps_d, violated, state.feasible_seen)
    return replace(
        state,
        incentive=i_new,
        dual=lam_new,
        iteration=k,
        last_gradient=gL,
        last_h=h,
        feasible_seen=seen,
        dual_step=eps_next,
    )


def foio_theoretical_schedule(state: AlgorithmState,
                              rule: SquareSummable = SquareSummable()) -> tuple[float, bool]:
    """Normalized diminishing step from the state's stacked map.

    Returns ``(eps_k, stationary)``: a zero stacked norm yields a zero
    step and flags stationarity instead of dividing by zero.
    """
    if state.last_gradient is None:
        raise ValueError("state carries no gradient yet; take one step first")
    psi_sq = float(np.sum(np.square(state.last_gradient)))
    if rule.norm == "stacked":
        h = state.last_h if state.last_h is not None else 0.0
        psi_sq += float(np.sum(np.square(h)))
    if psi_sq == 0.0:
        return 0.0, True
    return rule.gamma(state.iteration + 1) / math.sqrt(psi_sq), False


def zoio_step(state: AlgorithmState, env: Environment, cfg: ZOConfig = ZOConfig(),
              eps_primal: float = 1e-4,
              dual: Constant | DualRamp = DualRamp(trigger=BEFORE_FEASIBLE),
              rng: np.random.Generator | None = None,
              zeta: np.ndarray | None = None,
              noise: np.ndarray | None = None) -> AlgorithmState:
    """Two-point gradient estimate, regularized primal step, decayed dual.

    Perturbed incentives are clamped at zero before being measured.  The
    exploration vector and measurement noise can be passed explicitly
    (the batched runners pre-draw them); otherwise they come from ``rng``.
    """
    n = env.n
    if zeta is None:
        sampler = cfg.sampler(n)
        zeta = sampler.batch(state.iteration, 1, n, rng)[0]
    if noise is None and cfg.measurement_noise > 0:
        if rng is None:
            raise ValueError("measurement noise needs an rng or explicit draws")
        noise = rng.uniform(-cfg.measurement_noise, cfg.measurement_noise, size=(3, n))
    ip = np.maximum(state.incentive + cfg.sigma * zeta, 0.0)
    im = np.maximum(state.incentive - cfg.sigma * zeta, 0.0)
    dp = env.demand(ip)
    dm = env.demand(im)
    if noise is not None:
        dp = dp + noise[0]
        dm = dm + noise[1]
    lp = float(ip.sum()) + float(state.dual @ env.h_of_demand(dp))
    lm = float(im.sum()) + float(state.dual @ env.h_of_demand(dm))
    gest = zeta * ((lp - lm) / (2.0 * cfg.sigma))
    i_new = np.maximum((1.0 - eps_primal * cfg.p) * state.incentive - eps_primal * gest, 0.0)
    d = env.demand(i_new)
    if noise is not None:
        d = d + noise[2]
    h = env.h_of_demand(d)
    eps_d = _dual_eps(dual, state)
    lam_new = np.maximum(cfg.dual_decay * state.dual + eps_d * h, 0.0)
    violated = bool(np.any(h > 0))
    eps_next, seen = _advance_ramp(dual, eps_d, violated, state.feasible_seen)
    return replace(
        state,
        incentive=i_new,
        dual=lam_new,
        iteration=state.iteration + 1,
        last_gradient=gest,
        last_h=h,
        feasible_seen=seen,
        dual_step=eps_next,
    )


# ---------------------------------------------------------------------------
# batched runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class III:
    eps: float = 0.1
    name: str = "III"


@dataclass(frozen=True)
class DAIO:
    dual: Constant | DualRamp = DualRamp()
    lam0: float = 1.0
    name: str = "DAIO"


@dataclass(frozen=True)
class FOIO:
    primal: Constant | SquareSummable = Constant(5e-4)
    dual: Constant | DualRamp = DualRamp()
    grad: object = "exact"  # "exact", or an explicit coarse gradient vector
    name: str = "FOIO"


@dataclass(frozen=True)
class ZOIO:
    zo: ZOConfig = ZOConfig()
    eps_primal: float = 1e-4
    dual: Constant | DualRamp = DualRamp(trigger=BEFORE_FEASIBLE)
    name: str = "ZOIO"


Algorithm = III | DAIO | FOIO | ZOIO


@dataclass
class Trace:
    """Per-iteration history of one run plus its final state."""

    algorithm: str
    cost: np.ndarray
    min_voltage: np.ndarray
    max_h: np.ndarray
    feasible: np.ndarray
    dual_norm: np.ndarray
    slow_step: np.ndarray
    final_incentive: np.ndarray
    final_dual: np.ndarray
    min_dual_entry: float

    @property
    def iterations(self) -> int:
        return self.cost.shape[0]

    @property
    def final_cost(self) -> float:
        return float(self.cost[-1])

    @property
    def final_feasible(self) -> bool:
        return bool(self.feasible[-1])


@dataclass
class _LoopState:
    i: np.ndarray
    lam: np.ndarray
    h_prev: np.ndarray
    eps_dual: float
    feasible_seen: bool
    k_global: int
    min_dual: float


def _validate_algo(env: Environment, algo: Algorithm):
    if isinstance(algo, DAIO) and env.model.family != "quadratic_convex":
        raise ValueError("DAIO needs a quadratic-convex response (closed-form primal)")
    if isinstance(algo, FOIO) and isinstance(algo.grad, str) and algo.grad == "exact":
        if env.model.family == STEP:
            raise ValueError("exact gradients are unavailable for step responses; "
                             "pass a coarse gradient vector")


def _trigger_code(sched) -> int:
    if isinstance(sched, DualRamp):
        return _TRIGGER_CODE[sched.trigger]
    return _kernels.TRIG_NONE


def _ramp_inc(sched) -> float:
    return sched.increment if isinstance(sched, DualRamp) else 0.0


def _init_dual_eps(sched) -> float:
    return sched.eps1 if isinstance(sched, DualRamp) else sched.eps


def _run_segment(pack: EnvPack, env: Environment, algo: Algorithm, ls: _LoopState,
                 iters: int, rng, out: dict, lo: int):
    """Advance one environment segment, writing trace rows [lo, lo+iters)."""
    sl = slice(lo, lo + iters)
    args = (out["cost"][sl], out["min_voltage"][sl], out["max_h"][sl],
            out["feasible"][sl], out["dual_norm"][sl])
    if isinstance(algo, III):
        _kernels.run_iii(pack, ls.i, iters, algo.eps, *args)
        ls.k_global += iters
        return
    if isinstance(algo, DAIO):
        eps, seen, mn = _kernels.run_daio(
            pack, ls.i, ls.lam, iters, ls.eps_dual, _ramp_inc(algo.dual),
            _trigger_code(algo.dual), ls.feasible_seen, *args,
            eps1=_init_dual_eps(algo.dual))
    elif isinstance(algo, FOIO):
        if isinstance(algo.primal, SquareSummable):
            mode, eps_p = _kernels.MODE_THEOREM2, 0.0
            gamma_c, gamma_k0 = algo.primal.c, algo.primal.k0
            primal_only = algo.primal.norm == "primal"
        else:
            mode, eps_p = _kernels.MODE_PRACTICAL, algo.primal.eps
            gamma_c, gamma_k0, primal_only = 1.0, 0, False
        if isinstance(algo.grad, str) and algo.grad == "exact":
            grad_mode, coarse = _kernels.GRAD_EXACT, np.zeros(pack.n)
        elif isinstance(algo.grad, str) and algo.grad == "linear-approx":
            grad_mode, coarse = _kernels.GRAD_LINAPPROX, np.zeros(pack.n)
        else:
            grad_mode, coarse = _kernels.GRAD_COARSE, np.asarray(algo.grad, dtype=float)
        eps, seen, mn = _kernels.run_foio(
            pack, ls.i, ls.lam, ls.h_prev, iters, mode, eps_p, gamma_c, gamma_k0,
            ls.k_global, primal_only, grad_mode, coarse, ls.eps_dual,
            _ramp_inc(algo.dual), _trigger_code(algo.dual), ls.feasible_seen, *args,
            eps1=_init_dual_eps(algo.dual))
    else:
        n = pack.n
        sampler = algo.zo.sampler(n)
        ey = algo.zo.measurement_noise
        eps, seen, mn = ls.eps_dual, ls.feasible_seen, np.inf
        done = 0
        while done < iters:
            m = min(iters - done, _CHUNK)
            zeta = sampler.batch(ls.k_global + done, m, n, rng)
            noise = rng.uniform(-ey, ey, size=(m, 3, n)) if ey > 0 else None
            sub = slice(lo + done, lo + done + m)
            sub_args = (out["cost"][sub], out["min_voltage"][sub], out["max_h"][sub],
                        out["feasible"][sub], out["dual_norm"][sub])
            eps, seen, mn_c = _kernels.run_zoio(
                pack, ls.i, ls.lam, m, algo.eps_primal, algo.zo.p, algo.zo.sigma,
                algo.zo.dual_decay, zeta, noise, eps, _ramp_inc(algo.dual),
                _trigger_code(algo.dual), seen, *sub_args,
                eps1=_init_dual_eps(algo.dual))
            mn = min(mn, mn_c)
            done += m
    ls.eps_dual, ls.feasible_seen = eps, seen
    ls.min_dual = min(ls.min_dual, mn)
    ls.k_global += iters


def _alloc(total: int) -> dict:
    return {
        "cost": np.empty(total),
        "min_voltage": np.empty(total),
        "max_h": np.empty(total),
        "feasible": np.zeros(total, dtype=np.uint8),
        "dual_norm": np.empty(total),
    }


def _fresh_loop_state(env: Environment, algo: Algorithm) -> _LoopState:
    n = env.n
    lam0 = np.full(n, algo.lam0) if isinstance(algo, DAIO) else np.zeros(n)
    dual_sched = getattr(algo, "dual", None)
    eps_dual = _init_dual_eps(dual_sched) if dual_sched is not None else 0.0
    i0 = np.zeros(n)
    return _LoopState(
        i=i0,
        lam=lam0,
        h_prev=env.h(i0),
        eps_dual=eps_dual,
        feasible_seen=False,
        k_global=0,
        min_dual=np.inf,
    )


def _finish(algo, out, slow, ls) -> Trace:
    return Trace(
        algorithm=algo.name,
        cost=out["cost"],
        min_voltage=out["min_voltage"],
        max_h=out["max_h"],
        feasible=out["feasible"].astype(bool),
        dual_norm=out["dual_norm"],
        slow_step=slow,
        final_incentive=ls.i.copy(),
        final_dual=ls.lam.copy(),
        min_dual_entry=float(ls.min_dual) if np.isfinite(ls.min_dual) else 0.0,
    )


def _kernel_eligible(env: Environment) -> bool:
    return env.channel == "lindistflow" and env.safety.mode == "lower-only"


def _run_segment_generic(env: Environment, algo: Algorithm, state: AlgorithmState,
                         iters: int, rng, out: dict, lo: int,
                         min_dual: float) -> tuple[AlgorithmState, float]:
    """Slow path through the single-step functions (nonlinear channel or
    two-sided safety map); used where the kernels do not apply."""
    for k in range(iters):
        if isinstance(algo, III):
            state = iii_step(state, env, algo.eps)
        elif isinstance(algo, DAIO):
            state = daio_step(state, env, algo.dual)
        elif isinstance(algo, FOIO):
            state = foio_step(state, env, algo.grad, algo.primal, algo.dual)
        else:
            state = zoio_step(state, env, algo.zo, algo.eps_primal, algo.dual, rng)
        v = env.voltage(state.incentive)
        row = lo + k
        out["cost"][row] = state.incentive.sum()
        out["min_voltage"][row] = v.min()
        out["max_h"][row] = state.last_h.max()
        out["feasible"][row] = out["max_h"][row] <= 0.0
        out["dual_norm"][row] = np.sqrt(np.sum(np.square(state.dual)))
        min_dual = min(min_dual, float(state.dual.min()))
    return state, min_dual


def run_stationary(env: Environment, algo: Algorithm, iterations: int,
                   rng: np.random.Generator | None = None,
                   settle_feasible: bool = False) -> Trace:
    """Run one optimizer against a fixed environment.

    With ``settle_feasible`` the loop keeps stepping past the horizon (by
    at most 20%) until the current iterate satisfies the safety map: a
    feedback controller is not switched off while the band is violated.
    Non-smooth responses orbit the feasibility boundary forever, so the
    plain horizon would end on an arbitrary side of it.
    """
    if iterations < 1:
        raise ValueError("need at least one iteration")
    _validate_algo(env, algo)
    if rng is None:
        rng = np.random.default_rng(0)
    extension = int(0.2 * iterations) if settle_feasible else 0
    out = _alloc(iterations + extension)
    ls = _fresh_loop_state(env, algo)
    kernel_ok = _kernel_eligible(env)
    pack = EnvPack.from_environment(env) if kernel_ok else None
    state = None if kernel_ok else AlgorithmState(incentive=ls.i, dual=ls.lam)

    def _advance(lo: int, count: int):
        nonlocal state
        if kernel_ok:
            _run_segment(pack, env, algo, ls, count, rng, out, lo)
        else:
            state, ls.min_dual = _run_segment_generic(env, algo, state, count,
                                                      rng, out, lo, ls.min_dual)
            ls.i, ls.lam = state.incentive, state.dual

    _advance(0, iterations)
    done = iterations
    while extension > 0 and not out["feasible"][done - 1] and done < iterations + extension:
        _advance(done, 1)
        done += 1
    trimmed = {k: v[:done] for k, v in out.items()}
    return _finish(algo, trimmed, np.zeros(done, dtype=np.int64), ls)


def run_time_varying(env: Environment, scenario: TimeVaryingScenario,
                     algo: Algorithm, rng: np.random.Generator | None = None) -> Trace:
    """Run one optimizer while the response (and possibly the linearization)
    is swapped underneath it once per slow step."""
    if rng is None:
        rng = np.random.default_rng(0)
    total = scenario.total_iterations
    out = _alloc(total)
    slow = np.repeat(np.arange(scenario.slow_steps, dtype=np.int64),
                     scenario.iters_per_slow_step)
    ls = None
    state = None
    lo = 0
    for k in range(scenario.slow_steps):
        sens_k = scenario.sensitivities[k] if scenario.sensitivities else None
        env_k = env.with_model(scenario.schedule[k], sens_k)
        _validate_algo(env_k, algo)
        if ls is None:
            ls = _fresh_loop_state(env_k, algo)
        if _kernel_eligible(env_k):
            pack = EnvPack.from_environment(env_k)
            # the stacked norm of the very next step must see the new h
            ls.h_prev[:] = env_k.h(ls.i)
            _run_segment(pack, env_k, algo, ls, scenario.iters_per_slow_step,
                         rng, out, lo)
        else:
            if state is None:
                state = AlgorithmState(incentive=ls.i, dual=ls.lam)
            state = replace(state, last_h=env_k.h(state.incentive))
            state, ls.min_dual = _run_segment_generic(
                env_k, algo, state, scenario.iters_per_slow_step, rng, out, lo,
                ls.min_dual)
            ls.i, ls.lam = state.incentive, state.dual
        lo += scenario.iters_per_slow_step
    return _finish(algo, out, slow, ls)
