"""Composition of a response model with the feeder: the measurable world.

An :class:`Environment` is what the optimizers interact with: they send an
incentive, the (unknown to them) response model produces a demand, demands
become net injections, and the selected voltage channel turns injections
into the safety map ``h``.  Everything here is immutable; time-varying
runs swap a fresh environment underneath the algorithm each slow step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .grid import (
    NetworkCase,
    OperatingPoint,
    SafetySpec,
    SensitivityModel,
    ac_power_flow,
    lindistflow_voltage,
)
from .response import ResponseModel, evaluate_demand, gradient

LINDISTFLOW = "lindistflow"
AC_SWEEP = "ac"


@dataclass(frozen=True)
class Environment:
    """Response model plus grid model plus safety band.

    ``q_demand`` is the fixed (incentive-agnostic) reactive demand in
    positive demand units.  ``channel`` selects which voltage evaluator
    feeds measurements: the affine model (default, matching the theory) or
    the nonlinear sweep, which needs the ``case``.
    """

    model: ResponseModel
    sens: SensitivityModel
    safety: SafetySpec
    q_demand: np.ndarray
    channel: str = LINDISTFLOW
    case: NetworkCase | None = None

    def __post_init__(self):
        q = np.asarray(self.q_demand, dtype=float)
        object.__setattr__(self, "q_demand", q)
        if q.shape != (self.sens.n,) or self.model.n != self.sens.n:
            raise ValueError("response, sensitivity and q_demand sizes disagree")
        if self.channel not in (LINDISTFLOW, AC_SWEEP):
            raise ValueError(f"unknown measurement channel {self.channel!r}")
        if self.channel == AC_SWEEP and self.case is None:
            raise ValueError("the ac channel needs the network case")

    @property
    def n(self) -> int:
        return self.sens.n

    @property
    def u_star_demand(self) -> np.ndarray:
        return self.model.params.u_star

    def operating_point(self, demand: np.ndarray) -> OperatingPoint:
        return OperatingPoint(p=-np.asarray(demand, dtype=float), q=-self.q_demand)

    def demand(self, i: np.ndarray) -> np.ndarray:
        """Measured active demand under incentive ``i``."""
        return evaluate_demand(self.model, i)

    def grad_demand(self, i: np.ndarray) -> np.ndarray:
        """Exact response slope (diagonal), for gradient-fed optimizers."""
        return gradient(self.model, i)

    def voltage_of_demand(self, demand: np.ndarray) -> np.ndarray:
        op = self.operating_point(demand)
        if self.channel == AC_SWEEP:
            return ac_power_flow(self.case, op)
        return lindistflow_voltage(self.sens, op)

    def h_of_demand(self, demand: np.ndarray) -> np.ndarray:
        v = self.voltage_of_demand(demand)
        lo, hi = self.safety.bounds(self.n)
        if self.safety.mode == "lower-only":
            return lo - v
        return np.maximum(lo - v, v - hi)

    def voltage(self, i: np.ndarray) -> np.ndarray:
        return self.voltage_of_demand(self.demand(i))

    def h(self, i: np.ndarray) -> np.ndarray:
        """Safety map of the realized operating point under incentive ``i``."""
        return self.h_of_demand(self.demand(i))

    def h_setpoint(self) -> np.ndarray:
        """Safety map at the setpoint itself (feasible by assumption)."""
        return self.h_of_demand(self.u_star_demand)

    def with_model(self, model: ResponseModel, sens: SensitivityModel | None = None) -> "Environment":
        if sens is None:
            return replace(self, model=model)
        return replace(self, model=model, sens=sens)
