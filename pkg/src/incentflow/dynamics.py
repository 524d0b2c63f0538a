"""Time-varying response sequences on the slow (per-minute) time scale.

A :class:`TimeVaryingScenario` holds one response model per slow step;
algorithms run a fixed number of fast iterations against each step's model
before the environment is swapped underneath them.  Three constructions
are provided: a device birth-death process over staircase responses, the
quadratic-convex sequence derived from it, and a load-table-driven
sequence that refreshes the linearization each minute.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .grid import NetworkCase, OperatingPoint, SensitivityModel, compute_sensitivity
from .response import (
    QUADRATIC_CONVEX,
    STEP,
    ResponseModel,
    ResponseParams,
    model_from_dict,
    model_to_dict,
)

PER_BUS = "per-bus"
GLOBAL = "global"


@dataclass(frozen=True)
class TimeVaryingConfig:
    """Knobs of the slow time scale; defaults follow the 100-minute setup."""

    slow_steps: int = 100
    iters_per_slow_step: int = 1000
    event_rate: float = 1.0 / 2.5
    event_scope: str = PER_BUS

    def __post_init__(self):
        if self.slow_steps < 1 or self.iters_per_slow_step < 1:
            raise ValueError("slow_steps and iters_per_slow_step must be positive")
        if self.event_rate < 0:
            raise ValueError("event rate cannot be negative")
        if self.event_scope not in (PER_BUS, GLOBAL):
            raise ValueError(f"unknown event scope {self.event_scope!r}")


@dataclass(frozen=True)
class TimeVaryingScenario:
    """A per-slow-step sequence of response models (and optional refits).

    ``setpoints`` tracks the demand setpoint per step; for birth-death
    schedules it is constant while for load-driven schedules it follows
    the blended base loads.  ``sensitivities`` is populated only when the
    linearization is refreshed per step (load-driven case).
    """

    slow_steps: int
    iters_per_slow_step: int
    event_rate: float
    schedule: tuple[ResponseModel, ...]
    setpoints: tuple[np.ndarray, ...]
    sensitivities: tuple[SensitivityModel, ...] | None = None

    def __post_init__(self):
        if len(self.schedule) != self.slow_steps:
            raise ValueError("need exactly one response model per slow step")
        if len(self.setpoints) != self.slow_steps:
            raise ValueError("need exactly one setpoint per slow step")
        if self.sensitivities is not None and len(self.sensitivities) != self.slow_steps:
            raise ValueError("per-step sensitivities must cover every slow step")
        for k, m in enumerate(self.schedule):
            if m.family == STEP and m.devices < 2:
                raise ValueError(f"slow step {k} dropped below 2 devices per bus")

    @property
    def total_iterations(self) -> int:
        return self.slow_steps * self.iters_per_slow_step

    def device_counts(self) -> np.ndarray:
        """Devices per (slow step, bus); step-family schedules only."""
        return np.array([[len(bus) for bus in m.breakpoints] for m in self.schedule])


class _Staircase:
    """Mutable per-bus staircase while the birth-death process runs."""

    def __init__(self, u_star: float, peak: float, xs: Sequence[float], lvls: Sequence[float]):
        self.u_star = u_star
        self.peak = peak
        self.xs = list(xs)
        self.lvls = list(lvls)

    @property
    def devices(self) -> int:
        return len(self.xs)

    @property
    def threshold(self) -> float:
        return self.xs[-1]

    @property
    def delta(self) -> float:
        return self.peak - self.u_star

    def widths(self) -> list[float]:
        return [self.xs[0]] + [b - a for a, b in zip(self.xs, self.xs[1:])]

    def sheds(self) -> list[float]:
        levels = [self.peak] + self.lvls
        return [a - b for a, b in zip(levels, levels[1:])]

    def add_left(self, shed: float, width: float):
        self.xs = [width] + [x + width for x in self.xs]
        self.lvls = [self.peak] + self.lvls
        self.peak = self.peak + shed

    def remove_left(self):
        self.peak = self.lvls[0]
        w = self.xs[0]
        self.xs = [x - w for x in self.xs[1:]]
        self.lvls = self.lvls[1:]


def _staircases_from_model(model: ResponseModel) -> list[_Staircase]:
    p = model.params
    out = []
    for j, bus in enumerate(model.breakpoints):
        xs = [i for i, _ in bus]
        lvls = [u for _, u in bus]
        out.append(_Staircase(p.u_star[j], p.u_star[j] + p.delta[j], xs, lvls))
    return out


def _model_from_staircases(u_star: np.ndarray, stairs: list[_Staircase]) -> ResponseModel:
    delta = np.array([s.delta for s in stairs])
    t = np.array([s.threshold for s in stairs])
    params = ResponseParams(u_star=u_star, delta=delta, t=t)
    bps = tuple(tuple(zip(s.xs, s.lvls)) for s in stairs)
    return ResponseModel(params=params, family=STEP, breakpoints=bps)


def _event_minutes(rng: np.random.Generator, rate: float, horizon: int) -> list[int]:
    """Arrival minutes of one Poisson stream, inter-arrivals discretized up."""
    minutes: list[int] = []
    if rate <= 0:
        return minutes
    tau = rng.exponential(1.0 / rate)
    while tau < horizon:
        minutes.append(int(np.floor(tau)) + 1)
        tau += rng.exponential(1.0 / rate)
    return [m for m in minutes if m < horizon]


def build_birth_death_schedule(
    rng: np.random.Generator,
    initial: ResponseModel,
    cfg: TimeVaryingConfig = TimeVaryingConfig(),
) -> TimeVaryingScenario:
    """Evolve a staircase response by random device arrivals/departures.

    Events per bus follow a Poisson process at ``cfg.event_rate`` per
    minute (one shared stream with random bus assignment under the
    ``global`` scope).  Each event adds or removes a device with equal
    probability; removals that would leave fewer than 2 devices are
    discarded.  An added device enters "from the left": the zero-incentive
    peak demand grows and every existing breakpoint shifts right, with the
    shed/width drawn uniformly from the min-max ranges of the devices
    present at step 0.  A removal drops the leftmost device, so the new
    peak is the former second level.  The setpoint never moves.
    """
    if initial.family != STEP:
        raise ValueError("birth-death schedules start from a step response")
    u_star = initial.params.u_star
    n = initial.n
    stairs = _staircases_from_model(initial)
    shed_rng = [(min(s.sheds()), max(s.sheds())) for s in stairs]
    width_rng = [(min(s.widths()), max(s.widths())) for s in stairs]

    if cfg.event_scope == PER_BUS:
        events = []
        for j in range(n):
            events.extend((m, j) for m in _event_minutes(rng, cfg.event_rate, cfg.slow_steps))
    else:
        minutes = _event_minutes(rng, cfg.event_rate, cfg.slow_steps)
        events = [(m, int(rng.integers(n))) for m in minutes]
    events.sort()

    by_minute: dict[int, list[int]] = {}
    for m, j in events:
        by_minute.setdefault(m, []).append(j)

    schedule = [initial]
    for k in range(1, cfg.slow_steps):
        changed = False
        for j in by_minute.get(k, ()):
            s = stairs[j]
            if rng.uniform() < 0.5:
                lo, hi = shed_rng[j]
                shed = float(rng.uniform(lo, hi))
                lo, hi = width_rng[j]
                width = float(rng.uniform(lo, hi))
                s.add_left(shed, width)
                changed = True
            elif s.devices > 2:
                s.remove_left()
                changed = True
            # else: removal with only 2 devices remaining is discarded
        schedule.append(_model_from_staircases(u_star, stairs) if changed
                        else schedule[-1])
    return TimeVaryingScenario(
        slow_steps=cfg.slow_steps,
        iters_per_slow_step=cfg.iters_per_slow_step,
        event_rate=cfg.event_rate,
        schedule=tuple(schedule),
        setpoints=tuple(u_star for _ in schedule),
    )


def derive_quadratic_schedule(step_schedule: TimeVaryingScenario) -> TimeVaryingScenario:
    """Replace every staircase by the quadratic response with its anchors."""
    models = []
    for m in step_schedule.schedule:
        if m.family != STEP:
            raise ValueError("input schedule must be a step-family schedule")
        models.append(ResponseModel(params=m.params, family=QUADRATIC_CONVEX))
    return TimeVaryingScenario(
        slow_steps=step_schedule.slow_steps,
        iters_per_slow_step=step_schedule.iters_per_slow_step,
        event_rate=step_schedule.event_rate,
        schedule=tuple(models),
        setpoints=step_schedule.setpoints,
        sensitivities=step_schedule.sensitivities,
    )


def build_load_series_schedule(
    rng: np.random.Generator,
    case: NetworkCase,
    load_table: np.ndarray,
    alpha: float,
    thresholds: np.ndarray,
    q_demand: np.ndarray,
    inflate: Callable[[np.random.Generator, np.ndarray, SensitivityModel], np.ndarray],
    cfg: TimeVaryingConfig = TimeVaryingConfig(),
) -> TimeVaryingScenario:
    """Quadratic response sequence driven by a per-minute load table.

    Per slow step the base load is the exponential blend
    ``(1 - alpha) * previous + alpha * table_row``, the linearization
    (and so the voltage offset) is refreshed at the blended point, and a
    fresh demand excess is drawn through the supplied ``inflate`` rule.
    The threshold vector stays fixed across steps.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    load_table = np.asarray(load_table, dtype=float)
    if load_table.ndim != 2 or load_table.shape[1] != case.n:
        raise ValueError(f"load table must have {case.n} columns")
    if load_table.shape[0] < cfg.slow_steps:
        raise ValueError(
            f"load table has {load_table.shape[0]} rows; {cfg.slow_steps} needed"
        )
    q_demand = np.asarray(q_demand, dtype=float)

    models: list[ResponseModel] = []
    setpoints: list[np.ndarray] = []
    sensitivities: list[SensitivityModel] = []
    base = load_table[0].copy()
    for k in range(cfg.slow_steps):
        if k > 0:
            base = (1.0 - alpha) * base + alpha * load_table[k]
        sens = compute_sensitivity(case, OperatingPoint(p=-base, q=-q_demand))
        delta = inflate(rng, base, sens)
        params = ResponseParams(u_star=base, delta=delta, t=thresholds)
        models.append(ResponseModel(params=params, family=QUADRATIC_CONVEX))
        setpoints.append(base.copy())
        sensitivities.append(sens)
    return TimeVaryingScenario(
        slow_steps=cfg.slow_steps,
        iters_per_slow_step=cfg.iters_per_slow_step,
        event_rate=0.0,
        schedule=tuple(models),
        setpoints=tuple(setpoints),
        sensitivities=tuple(sensitivities),
    )


# ---------------------------------------------------------------------------
# serialization (replaying schedules)
# ---------------------------------------------------------------------------

def scenario_to_dict(tv: TimeVaryingScenario) -> dict:
    doc = {
        "slow_steps": tv.slow_steps,
        "iters_per_slow_step": tv.iters_per_slow_step,
        "event_rate": tv.event_rate,
        "schedule": [model_to_dict(m) for m in tv.schedule],
        "setpoints": [list(map(float, sp)) for sp in tv.setpoints],
    }
    if tv.sensitivities is not None:
        doc["sensitivities"] = [
            {
                "R": s.R.tolist(),
                "X": s.X.tolist(),
                "v_tilde": s.v_tilde.tolist(),
                "p_star": s.p_star.tolist(),
                "q_star": s.q_star.tolist(),
                "v_star": s.v_star.tolist(),
            }
            for s in tv.sensitivities
        ]
    return doc


def scenario_from_dict(doc: dict) -> TimeVaryingScenario:
    sens = None
    if "sensitivities" in doc:
        sens = tuple(
            SensitivityModel(R=e["R"], X=e["X"], v_tilde=e["v_tilde"],
                             p_star=e["p_star"], q_star=e["q_star"],
                             v_star=e["v_star"])
            for e in doc["sensitivities"]
        )
    return TimeVaryingScenario(
        slow_steps=int(doc["slow_steps"]),
        iters_per_slow_step=int(doc["iters_per_slow_step"]),
        event_rate=float(doc["event_rate"]),
        schedule=tuple(model_from_dict(m) for m in doc["schedule"]),
        setpoints=tuple(np.asarray(sp, dtype=float) for sp in doc["setpoints"]),
        sensitivities=sens,
    )


def save_scenario(tv: TimeVaryingScenario, path) -> None:
    import json
    from pathlib import Path

    Path(path).write_text(json.dumps(scenario_to_dict(tv)) + "\n")


def load_scenario(path) -> TimeVaryingScenario:
    import json
    from pathlib import Path

    return scenario_from_dict(json.loads(Path(path).read_text()))
