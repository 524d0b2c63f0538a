"""Electrical model of the distribution feeder.

Conventions used throughout the package:

* Active/reactive powers are net *injections* in per-unit: consumers carry
  negative ``p``/``q``.  Demand-side quantities (response curves, load
  tables) live in positive "demand units" and are negated where they enter
  an :class:`OperatingPoint`.
* The "voltage" channel ``v`` is the squared voltage magnitude in per-unit.
  This is the natural variable of the linearized feeder model below: with
  sensitivity ``R = 2 Re(diag(e) Z' diag(e)^-1)`` the affine map
  ``v = R p + X q + v_tilde`` agrees with the nonlinear solver to first
  order in the injections only on the squared scale (a single line with
  impedance r+jx gives dv/dp = 2r exactly).  Bounds such as 0.9/1.1 p.u.
  therefore correspond to magnitude bounds of roughly +/-5%.
* ``ac_power_flow`` solves the exact complex fixed point by
  backward/forward sweeps and reports the same squared-magnitude channel,
  so the two voltage evaluators are directly comparable.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np


class ModelError(ValueError):
    """The network description cannot produce a usable electrical model."""


class PowerFlowError(RuntimeError):
    """The nonlinear solver failed to reach its fixed point."""


class UnsupportedNetworkError(ModelError):
    """The operation requires a network class we deliberately do not solve."""


class Line(NamedTuple):
    from_bus: int
    to_bus: int
    r: float
    x: float


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NetworkCase:
    """A feeder: buses, lines with per-unit impedances, and one slack bus.

    ``bus_count`` includes the slack bus, so a case has ``bus_count - 1``
    PQ buses.  Impedances are already per-unit; ``base_mva`` is carried as
    metadata only.
    """

    bus_count: int
    slack_id: int
    lines: tuple[Line, ...]
    slack_voltage: complex = 1.0 + 0.0j
    base_mva: float = 1.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(Line(*ln) for ln in self.lines))
        if self.bus_count < 2:
            raise ModelError("a case needs at least one PQ bus besides the slack")
        if not 0 <= self.slack_id < self.bus_count:
            raise ModelError(f"slack id {self.slack_id} out of range")
        for ln in self.lines:
            if not (0 <= ln.from_bus < self.bus_count and 0 <= ln.to_bus < self.bus_count):
                raise ModelError(f"line {ln} references an unknown bus")
            if ln.from_bus == ln.to_bus:
                raise ModelError(f"line {ln} is a self-loop")
            if ln.r < 0 or ln.x < 0:
                raise ModelError(f"line {ln} has a negative impedance component")
            if ln.r == 0 and ln.x == 0:
                raise ModelError(f"line {ln} has zero impedance")
        if len(self._connected_from(self.slack_id)) != self.bus_count:
            raise ModelError("network graph is not connected")

    def _connected_from(self, start: int) -> set[int]:
        adj: dict[int, list[int]] = {b: [] for b in range(self.bus_count)}
        for ln in self.lines:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
        seen = {start}
        queue = deque([start])
        while queue:
            b = queue.popleft()
            for nb in adj[b]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        return seen

    @property
    def n(self) -> int:
        """Number of PQ buses."""
        return self.bus_count - 1

    @property
    def pq_buses(self) -> tuple[int, ...]:
        return tuple(b for b in range(self.bus_count) if b != self.slack_id)

    @property
    def is_radial(self) -> bool:
        return len(self.lines) == self.bus_count - 1


@dataclass(frozen=True)
class OperatingPoint:
    """Net injections at the PQ buses (negative entries consume power)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _frozen(self.p))
        object.__setattr__(self, "q", _frozen(self.q))
        if self.p.shape != self.q.shape or self.p.ndim != 1:
            raise ValueError("p and q must be 1-D vectors of equal length")
        if not (np.isfinite(self.p).all() and np.isfinite(self.q).all()):
            raise ValueError("operating point contains non-finite entries")

    @property
    def n(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class SensitivityModel:
    """First-order voltage model ``v = R p + X q + v_tilde``.

    ``(p_star, q_star, v_star)`` is the linearization point; ``v_star`` is
    the squared-magnitude solution of the nonlinear equations there, which
    makes ``v_tilde`` consistent with the measurement channel.
    """

    R: np.ndarray
    X: np.ndarray
    v_tilde: np.ndarray
    p_star: np.ndarray
    q_star: np.ndarray
    v_star: np.ndarray

    def __post_init__(self):
        for name in ("R", "X", "v_tilde", "p_star", "q_star", "v_star"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = self.v_tilde.shape[0]
        if self.R.shape != (n, n) or self.X.shape != (n, n):
            raise ValueError("R and X must be n-by-n")
        for M, name in ((self.R, "R"), (self.X, "X")):
            if not np.isfinite(M).all():
                raise ValueError(f"{name} contains non-finite entries")
            if np.max(np.abs(M - M.T)) > 1e-9:
                raise ValueError(f"{name} is not symmetric")
            if np.any(M <= 0):
                raise ValueError(f"{name} must have strictly positive entries")
        resid = self.v_tilde - (self.v_star - self.R @ self.p_star - self.X @ self.q_star)
        if np.max(np.abs(resid)) > 1e-12:
            raise ValueError("v_tilde is inconsistent with the linearization point")

    @property
    def n(self) -> int:
        return self.v_tilde.shape[0]


@dataclass(frozen=True)
class SafetySpec:
    """Voltage-band specification; ``mode`` picks the safety map shape."""

    v_lower: np.ndarray | float = 0.9
    v_upper: np.ndarray | float = 1.1
    mode: str = "two-sided"

    def __post_init__(self):
        if self.mode not in ("two-sided", "lower-only"):
            raise ValueError(f"unknown safety mode {self.mode!r}")
        lo = np.atleast_1d(np.asarray(self.v_lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.v_upper, dtype=float))
        if np.any(lo >= hi):
            raise ValueError("v_lower must be elementwise below v_upper")

    def bounds(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.broadcast_to(np.asarray(self.v_lower, dtype=float), (n,)).copy()
        hi = np.broadcast_to(np.asarray(self.v_upper, dtype=float), (n,)).copy()
        return lo, hi


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def build_reduced_admittance(case: NetworkCase) -> tuple[np.ndarray, np.ndarray]:
    """Bus admittance restricted to PQ buses plus the slack coupling column.

    Returns ``(Y_LL, Y_LS)`` where ``Y_LL`` is ``n x n`` complex and
    ``Y_LS`` is the length-``n`` column coupling PQ buses to the slack.
    """
    nb = case.bus_count
    Y = np.zeros((nb, nb), dtype=complex)
    for ln in case.lines:
        y = 1.0 / complex(ln.r, ln.x)
        Y[ln.from_bus, ln.from_bus] += y
        Y[ln.to_bus, ln.to_bus] += y
        Y[ln.from_bus, ln.to_bus] -= y
        Y[ln.to_bus, ln.from_bus] -= y
    pq = list(case.pq_buses)
    Y_LL = Y[np.ix_(pq, pq)]
    Y_LS = Y[pq, case.slack_id]
    return Y_LL, Y_LS


def compute_sensitivity(
    case: NetworkCase, linearization: OperatingPoint | None = None
) -> SensitivityModel:
    """Build the affine voltage model around ``linearization``.

    ``v_star`` always comes from :func:`ac_power_flow` at the linearization
    point so the offset ``v_tilde`` is consistent with the nonlinear
    measurement channel.  ``linearization=None`` means zero injections.
    """
    n = case.n
    if linearization is None:
        linearization = OperatingPoint(np.zeros(n), np.zeros(n))
    if linearization.n != n:
        raise ValueError("linearization dimension does not match the case")
    Y_LL, Y_LS = build_reduced_admittance(case)
    try:
        Z = np.linalg.inv(Y_LL)
    except np.linalg.LinAlgError as exc:
        raise ModelError("reduced admittance matrix is singular") from exc
    e = -Z @ (Y_LS * case.slack_voltage)
    M = (e[:, None] * np.conj(Z)) / e[None, :]
    R = 2.0 * M.real
    X = -2.0 * M.imag
    # Enforce exact symmetry; the e-scaling leaves float-level asymmetry.
    R = 0.5 * (R + R.T)
    X = 0.5 * (X + X.T)
    v_star = ac_power_flow(case, linearization)
    v_tilde = v_star - R @ linearization.p - X @ linearization.q
    return SensitivityModel(
        R=R,
        X=X,
        v_tilde=v_tilde,
        p_star=linearization.p,
        q_star=linearization.q,
        v_star=v_star,
    )


def lindistflow_voltage(model: SensitivityModel, op: OperatingPoint) -> np.ndarray:
    """Affine voltage ``R p + X q + v_tilde`` (squared-magnitude channel)."""
    if op.n != model.n:
        raise ValueError(f"operating point has {op.n} buses, model has {model.n}")
    return model.R @ op.p + model.X @ op.q + model.v_tilde


def safety_h(model: SensitivityModel, spec: SafetySpec, op: OperatingPoint) -> np.ndarray:
    """Safety map: non-positive exactly when voltages sit inside the band."""
    v = lindistflow_voltage(model, op)
    lo, hi = spec.bounds(model.n)
    if spec.mode == "lower-only":
        return lo - v
    return np.maximum(lo - v, v - hi)


def _tree_structure(case: NetworkCase):
    """BFS orientation from the slack: per-bus parent, impedance, order."""
    adj: dict[int, list[tuple[int, complex]]] = {b: [] for b in range(case.bus_count)}
    for ln in case.lines:
        z = complex(ln.r, ln.x)
        adj[ln.from_bus].append((ln.to_bus, z))
        adj[ln.to_bus].append((ln.from_bus, z))
    parent = {case.slack_id: -1}
    z_up: dict[int, complex] = {}
    order: list[int] = []
    queue = deque([case.slack_id])
    while queue:
        b = queue.popleft()
        for nb, z in adj[b]:
            if nb not in parent:
                parent[nb] = b
                z_up[nb] = z
                order.append(nb)
                queue.append(nb)
    return parent, z_up, order


def ac_power_flow(
    case: NetworkCase,
    op: OperatingPoint,
    tol: float = 1e-8,
    max_sweeps: int = 100,
) -> np.ndarray:
    """Backward/forward-sweep power flow on a radial feeder.

    Returns the squared voltage magnitude at every PQ bus (same channel as
    :func:`lindistflow_voltage`).  Raises :class:`UnsupportedNetworkError`
    for meshed cases and :class:`PowerFlowError` if the sweep does not
    reach a fixed point with phasor residual below ``tol`` within
    ``max_sweeps`` iterations.
    """
    if not case.is_radial:
        raise UnsupportedNetworkError(
            "backward/forward sweep requires a radial network; "
            f"{case.name or 'case'} has {len(case.lines)} lines for {case.bus_count} buses"
        )
    if op.n != case.n:
        raise ValueError("operating point dimension does not match the case")
    parent, z_up, order = _tree_structure(case)
    s_inj = {b: complex(op.p[k], op.q[k]) for k, b in enumerate(case.pq_buses)}

    V = {b: complex(case.slack_voltage) for b in range(case.bus_count)}
    for _ in range(max_sweeps):
        # Backward: current drawn from the parent by each subtree.
        i_down = {b: -np.conj(s_inj[b] / V[b]) for b in order}
        for b in reversed(order):
            i_down[parent[b]] = i_down.get(parent[b], 0.0) + i_down[b]
        # Forward: propagate voltage drops from the slack outward.
        resid = 0.0
        for b in order:
            v_new = V[parent[b]] - z_up[b] * i_down[b]
            resid = max(resid, abs(v_new - V[b]))
            V[b] = v_new
        if resid < tol:
            return np.array([abs(V[b]) ** 2 for b in case.pq_buses])
    raise PowerFlowError(
        f"no fixed point after {max_sweeps} sweeps (residual {resid:.3e} > {tol:.0e})"
    )


# ---------------------------------------------------------------------------
# case file I/O
# ---------------------------------------------------------------------------

def load_case(source: str | Path | dict) -> NetworkCase:
    """Read a network case from JSON (path or already-parsed dict).

    Schema: ``{"buses": [{"id": ...}, ...], "slack": id,
    "lines": [{"from", "to", "r", "x"}, ...], "slack_voltage": v}`` with
    impedances in per-unit.  Extra per-bus fields are permitted (the
    bundled feeder carries nominal loads used by the scenario sampler).
    """
    if isinstance(source, dict):
        raw = source
    else:
        raw = json.loads(Path(source).read_text())
    bus_ids = [int(b["id"]) if isinstance(b, dict) else int(b) for b in raw["buses"]]
    if sorted(bus_ids) != list(range(len(bus_ids))):
        raise ModelError("bus ids must be 0..bus_count-1")
    sv = raw.get("slack_voltage", 1.0)
    if isinstance(sv, (list, tuple)):
        sv = complex(sv[0], sv[1])
    lines = tuple(
        Line(int(ln["from"]), int(ln["to"]), float(ln["r"]), float(ln["x"]))
        for ln in raw["lines"]
    )
    return NetworkCase(
        bus_count=len(bus_ids),
        slack_id=int(raw["slack"]),
        lines=lines,
        slack_voltage=complex(sv),
        base_mva=float(raw.get("base_mva", 1.0)),
        name=str(raw.get("name", "")),
    )


def dump_case(case: NetworkCase, path: str | Path, bus_extra: dict[int, dict] | None = None):
    """Write a case to JSON in the schema accepted by :func:`load_case`."""
    buses = []
    for b in range(case.bus_count):
        entry: dict = {"id": b}
        if bus_extra and b in bus_extra:
            entry.update(bus_extra[b])
        buses.append(entry)
    doc = {
        "name": case.name,
        "base_mva": case.base_mva,
        "slack": case.slack_id,
        "slack_voltage": [case.slack_voltage.real, case.slack_voltage.imag],
        "buses": buses,
        "lines": [
            {"from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "x": ln.x}
            for ln in case.lines
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
