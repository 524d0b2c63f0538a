"""Incentive-response models: how paid users move demand toward a setpoint.

Every family interpolates between two anchored points in demand units:
``g(0) = u_star + delta`` (no incentive, full excess demand) and
``g(t) = u_star`` (at the threshold incentive the setpoint is met).
Responses are elementwise non-increasing in the incentive and separable
across buses.  Incentives above the threshold are clamped to it before
evaluation, so paying more than ``t`` never moves demand further.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import OperatingPoint, _frozen

LINEAR = "linear"
QUADRATIC_CONVEX = "quadratic_convex"
POLYNOMIAL_CONVEX = "polynomial_convex"
POLYNOMIAL_CONCAVE = "polynomial_concave"
STEP = "step"

SMOOTH_FAMILIES = (LINEAR, QUADRATIC_CONVEX, POLYNOMIAL_CONVEX, POLYNOMIAL_CONCAVE)
FAMILIES = SMOOTH_FAMILIES + (STEP,)


class NotDifferentiableError(TypeError):
    """Raised when a gradient is requested from a step-function response."""


@dataclass(frozen=True)
class ResponseParams:
    """Anchors of a response: setpoint, demand excess, incentive thresholds.

    ``u_star`` is the operator's demand setpoint per bus (positive demand
    units, per-unit power), ``delta >= 0`` the extra demand present at zero
    incentive, and ``t > 0`` the incentive at which each bus fully complies.
    """

    u_star: np.ndarray
    delta: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        for name in ("u_star", "delta", "t"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = self.u_star.shape[0]
        if self.delta.shape != (n,) or self.t.shape != (n,):
            raise ValueError("u_star, delta and t must share one length")
        if np.any(self.delta < 0):
            raise ValueError("delta must be non-negative")
        if np.any(self.t <= 0):
            raise ValueError("thresholds must be strictly positive")

    @property
    def n(self) -> int:
        return self.u_star.shape[0]


@dataclass(frozen=True)
class ResponseModel:
    """One response family with its parameters.

    ``exponent`` is the even polynomial degree for the polynomial families
    (2 reproduces the quadratic ones).  ``breakpoints`` holds, per bus, the
    staircase of a step response as ``(incentive, demand)`` pairs with
    strictly increasing incentives and strictly decreasing demand levels;
    the final pair is always ``(t_j, u_star_j)``.
    """

    params: ResponseParams
    family: str = LINEAR
    exponent: int = 2
    breakpoints: tuple[tuple[tuple[float, float], ...], ...] = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown response family {self.family!r}")
        if self.family in (POLYNOMIAL_CONVEX, POLYNOMIAL_CONCAVE, QUADRATIC_CONVEX):
            if self.exponent < 2 or self.exponent % 2 != 0:
                raise ValueError("polynomial exponent must be an even integer >= 2")
        if self.family == QUADRATIC_CONVEX and self.exponent != 2:
            raise ValueError("quadratic family has exponent 2")
        if self.family == STEP:
            bps = tuple(tuple((float(i), float(u)) for i, u in bus) for bus in self.breakpoints)
            object.__setattr__(self, "breakpoints", bps)
            self._check_breakpoints()
        elif self.breakpoints:
            raise ValueError("breakpoints only apply to the step family")

    def _check_breakpoints(self):
        p = self.params
        if len(self.breakpoints) != p.n:
            raise ValueError("need one breakpoint list per bus")
        for j, bus in enumerate(self.breakpoints):
            if not bus:
                raise ValueError(f"bus {j} has no breakpoints")
            incs = [i for i, _ in bus]
            lvls = [u for _, u in bus]
            if incs[0] <= 0:
                raise ValueError(f"bus {j}: first breakpoint must sit at positive incentive")
            if any(b <= a for a, b in zip(incs, incs[1:])):
                raise ValueError(f"bus {j}: incentive breakpoints must strictly increase")
            if any(b >= a for a, b in zip(lvls, lvls[1:])):
                raise ValueError(f"bus {j}: demand levels must strictly decrease")
            if abs(incs[-1] - p.t[j]) > 1e-12 or abs(lvls[-1] - p.u_star[j]) > 1e-12:
                raise ValueError(f"bus {j}: staircase must end at (t, u_star)")
            peak = p.u_star[j] + p.delta[j]
            if lvls[0] >= peak + 1e-12:
                raise ValueError(f"bus {j}: first drop must fall below the peak demand")

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def coefficients(self) -> np.ndarray:
        """Polynomial coefficient ``b = delta / t**y`` (zero where delta is)."""
        y = self.exponent if self.family != LINEAR else 1
        return self.params.delta / self.params.t**y

    @property
    def devices(self) -> int:
        """Step count of a step response (same for every bus by construction)."""
        if self.family != STEP:
            raise ValueError("only step responses have a device count")
        return len(self.breakpoints[0])


def _clamp(model: ResponseModel, i: np.ndarray) -> np.ndarray:
    i = np.asarray(i, dtype=float)
    if i.shape != (model.n,):
        raise ValueError(f"incentive must be a length-{model.n} vector")
    if np.any(i < 0):
        raise ValueError("incentives must be non-negative")
    return np.minimum(i, model.params.t)


def evaluate_demand(model: ResponseModel, i: np.ndarray) -> np.ndarray:
    """Active-power demand per bus under incentive ``i`` (demand units).

    The polynomial forms are evaluated as ``delta * ((t - i)/t)**y`` (and
    the concave one as ``delta * (1 - (i/t)**y)``) so the anchor values at
    ``i = 0`` and ``i = t`` are exact in floating point, not just to
    rounding; algebraically these match ``b = delta / t**y`` coefficients.
    """
    p = model.params
    ic = _clamp(model, i)
    if model.family == LINEAR:
        return p.u_star + p.delta * ((p.t - ic) / p.t)
    if model.family in (QUADRATIC_CONVEX, POLYNOMIAL_CONVEX):
        return p.u_star + p.delta * ((p.t - ic) / p.t) ** model.exponent
    if model.family == POLYNOMIAL_CONCAVE:
        return p.u_star + p.delta * (1.0 - (ic / p.t) ** model.exponent)
    out = np.empty(p.n)
    for j, bus in enumerate(model.breakpoints):
        level = p.u_star[j] + p.delta[j]
        for inc, lvl in bus:
            if ic[j] >= inc:
                level = lvl
            else:
                break
        out[j] = level
    return out


def evaluate(model: ResponseModel, i: np.ndarray, q_demand: np.ndarray | None = None) -> OperatingPoint:
    """Realized operating point (net injections) under incentive ``i``.

    Buses are pure consumers: the injection is the negated demand.
    Reactive power is incentive-agnostic and fixed at ``q_demand``
    (defaults to zero).
    """
    d = evaluate_demand(model, i)
    qd = np.zeros(model.n) if q_demand is None else np.asarray(q_demand, dtype=float)
    return OperatingPoint(p=-d, q=-qd)


def gradient(model: ResponseModel, i: np.ndarray) -> np.ndarray:
    """Diagonal of the demand Jacobian (separability makes this lossless).

    Entries are non-positive on ``[0, t]`` and zero beyond the threshold,
    consistent with the clamped :func:`evaluate_demand`.
    """
    if model.family == STEP:
        raise NotDifferentiableError("step responses have no gradient")
    p = model.params
    ic = _clamp(model, i)
    if model.family == LINEAR:
        return np.where(ic < p.t, -p.delta / p.t, 0.0)
    y = model.exponent
    if model.family in (QUADRATIC_CONVEX, POLYNOMIAL_CONVEX):
        return y * model.coefficients * (ic - p.t) ** (y - 1)
    return -y * model.coefficients * ic ** (y - 1)


def linear_approximation(model: ResponseModel) -> ResponseModel:
    """Linear interpolation through the anchors of any response."""
    return ResponseModel(params=model.params, family=LINEAR)


def coarse_gradient(params: ResponseParams, t_est: np.ndarray | float) -> np.ndarray:
    """Gradient surrogate ``-delta / t_est`` from a threshold estimate."""
    t_est = np.broadcast_to(np.asarray(t_est, dtype=float), (params.n,))
    if np.any(t_est <= 0):
        raise ValueError("threshold estimates must be strictly positive")
    return -params.delta / t_est


def generate_step_model(
    rng: np.random.Generator, params: ResponseParams, devices: int
) -> ResponseModel:
    """Random staircase response with ``devices`` demand drops per bus.

    Starts from the single threshold jump and repeatedly inserts a new
    drop at an incentive drawn uniformly on ``[0, t_j]``, with the new
    demand level drawn uniformly between the neighbouring levels, until
    the staircase has the requested number of drops.  Deterministic given
    the generator state.
    """
    if devices < 2:
        raise ValueError("step responses need at least 2 devices per bus")
    if np.any(params.delta <= 0):
        raise ValueError("every bus needs positive demand excess to host devices")
    all_bps: list[tuple[tuple[float, float], ...]] = []
    for j in range(params.n):
        t_j = params.t[j]
        u_j = params.u_star[j]
        peak = u_j + params.delta[j]
        xs = [t_j]
        lvls = [u_j]
        while len(xs) < devices:
            x = float(rng.uniform(0.0, t_j))
            if x in xs or x == 0.0:
                continue
            k = int(np.searchsorted(xs, x))
            above = peak if k == 0 else lvls[k - 1]
            below = lvls[k]
            lvl = float(rng.uniform(below, above))
            if lvl <= below or lvl >= above:
                continue
            xs.insert(k, x)
            lvls.insert(k, lvl)
        all_bps.append(tuple(zip(xs, lvls)))
    return ResponseModel(params=params, family=STEP, breakpoints=tuple(all_bps))


# ---------------------------------------------------------------------------
# serialization (scenario reproducibility)
# ---------------------------------------------------------------------------

def model_to_dict(model: ResponseModel) -> dict:
    doc = {
        "family": model.family,
        "u_star": model.params.u_star.tolist(),
        "delta": model.params.delta.tolist(),
        "t": model.params.t.tolist(),
    }
    if model.family in (POLYNOMIAL_CONVEX, POLYNOMIAL_CONCAVE, QUADRATIC_CONVEX):
        doc["exponent"] = model.exponent
    if model.family == STEP:
        doc["breakpoints"] = [[list(bp) for bp in bus] for bus in model.breakpoints]
    return doc


def model_from_dict(doc: dict) -> ResponseModel:
    params = ResponseParams(
        u_star=np.asarray(doc["u_star"], dtype=float),
        delta=np.asarray(doc["delta"], dtype=float),
        t=np.asarray(doc["t"], dtype=float),
    )
    return ResponseModel(
        params=params,
        family=doc["family"],
        exponent=int(doc.get("exponent", 2)),
        breakpoints=tuple(
            tuple(tuple(bp) for bp in bus) for bus in doc.get("breakpoints", [])
        ),
    )


def save_model(model: ResponseModel, path: str | Path):
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path: str | Path) -> ResponseModel:
    return model_from_dict(json.loads(Path(path).read_text()))
