"""Scenario construction, experiment execution, traces and manifests.

A scenario is built deterministically from a seed: synthetic base loads
on the feeder (spatial pattern of the bundled case, per-bus log-uniform
magnitudes), a demand inflation that provably violates the lower voltage
bound at more than the configured number of buses, uniform incentive
thresholds, and the selected response family.  Each (variant, algorithm)
pair becomes one run with its own CSV trace; the manifest ties runs,
baselines and the configuration hash together.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, algorithms as alg, baseline, cases, dynamics, response
from ._kernels import BACKEND
from .environment import Environment
from .grid import NetworkCase, OperatingPoint, SafetySpec, ac_power_flow, compute_sensitivity

TRACE_HEADER = "run_id,algorithm,iteration,slow_step,min_voltage,cost,max_h,feasible,gap"

SCENARIOS = (
    "quad_convex", "linear", "poly_convex", "poly_concave", "step",
    "tv_quad", "tv_step", "tv_load_series",
)
SMOOTH_SCENARIOS = ("quad_convex", "linear", "poly_convex")
ALGORITHM_NAMES = ("III", "DAIO", "FOIO-exact", "FOIO-coarse", "ZOIO")
COARSE_RULES = ("min_t_over_100", "min_t", "max_t")


class ScenarioError(RuntimeError):
    """The random scenario construction could not satisfy its contract."""


class ConfigError(ValueError):
    """The experiment configuration is invalid."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    scenario: str = "quad_convex"
    algorithms: tuple[str, ...] = ("III", "DAIO", "FOIO-exact", "ZOIO")
    iterations: int = 10_000
    seed: int = 1
    case_path: str | None = None
    out_dir: str = "runs/out"
    name: str = ""
    # safety band
    v_lower: float = 0.9
    v_upper: float = 1.1
    channel: str = "lindistflow"
    # scenario knobs
    load_band: tuple[float, float] = (0.2, 0.6)
    violation_threshold: int = 5
    inflate_extra_rounds: int = 40
    inflate_reactive: bool = False
    poly_exponents: tuple[int, ...] = (4, 6, 8, 10)
    concave_exponents: tuple[int, ...] = (2, 4, 6, 8, 10)
    devices: tuple[int, ...] = (2, 6, 10)
    coarse_rule: str | float = "min_t_over_100"
    slow_steps: int = 100
    iters_per_slow_step: int = 1000
    event_rate: float = 1.0 / 2.5
    event_scope: str = "per-bus"
    alpha: float = 0.5
    load_table: str | None = None
    # step sizes (experiment defaults)
    iii_eps: float = 0.1
    foio_primal: float = 5e-4
    zoio_primal: float = 1e-4
    zoio_sigma: float | None = None  # None: 0.005 smooth, 0.1 non-smooth
    zoio_decay: float = 0.95
    zoio_tv_decay: float = 1.0
    zoio_tv_primal: float = 2e-4
    zoio_tv_increment: float = 2.0
    zoio_noise: float = 0.0
    dual_eps1: float = 1.0
    dual_increment: float = 0.1
    # baselines
    baseline_tol: float = 1e-6
    baseline_max_iter: int = 20_000
    tv_baseline_max_iter: int = 5_000
    jobs: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for a in self.algorithms:
            if a not in ALGORITHM_NAMES:
                raise ConfigError(f"unknown algorithm {a!r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if "DAIO" in self.algorithms and self.scenario not in ("quad_convex", "tv_quad", "tv_load_series"):
            raise ConfigError("DAIO needs a quadratic-convex scenario (closed-form primal)")
        if not isinstance(self.coarse_rule, (int, float)) and self.coarse_rule not in COARSE_RULES:
            raise ConfigError(f"unknown coarse threshold rule {self.coarse_rule!r}")
        if self.v_lower >= self.v_upper:
            raise ConfigError("v_lower must be below v_upper")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    @property
    def is_time_varying(self) -> bool:
        return self.scenario.startswith("tv_")

    def to_dict(self) -> dict:
        d = {}
        for k, v in self.__dict__.items():
            d[k] = list(v) if isinstance(v, tuple) else v
        return d


def config_from_dict(doc: dict) -> ExperimentConfig:
    kwargs = {}
    fields = ExperimentConfig.__dataclass_fields__
    for k, v in doc.items():
        if k not in fields:
            raise ConfigError(f"unknown configuration key {k!r}")
        if isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a TOML or JSON experiment configuration (identical schema)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        doc = tomllib.loads(text)
    else:
        doc = json.loads(text)
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# scenario construction
# ---------------------------------------------------------------------------

def sample_thresholds(rng: np.random.Generator, n: int) -> np.ndarray:
    """Per-bus thresholds uniform on (0, 1]; exact zeros are redrawn."""
    if n < 1:
        raise ValueError("need at least one bus")
    t = rng.uniform(0.0, 1.0, size=n)
    while np.any(t == 0.0):
        zero = t == 0.0
        t[zero] = rng.uniform(0.0, 1.0, size=int(zero.sum()))
    return t


def sample_base_loads(rng: np.random.Generator, case: NetworkCase,
                      template_p: np.ndarray, template_q: np.ndarray,
                      band: tuple[float, float], v_lower: float,
                      margin: float = 0.005, max_tries: int = 50):
    """Scale the nominal load pattern by per-bus log-uniform multipliers,
    redrawing until the unmodified case is voltage-feasible with margin."""
    lo, hi = band
    if not 0 < lo < hi:
        raise ValueError("load band must satisfy 0 < lo < hi")
    for _ in range(max_tries):
        mult = np.exp(rng.uniform(np.log(lo), np.log(hi), size=case.n))
        p = template_p * mult
        q = template_q * mult
        v = ac_power_flow(case, OperatingPoint(p=-p, q=-q))
        if v.min() >= v_lower + margin:
            return p, q
    raise ScenarioError(
        f"no feasible base load found in {max_tries} draws; narrow the band"
    )


def inflate_demand(rng: np.random.Generator, base_p: np.ndarray, sens,
                   safety: SafetySpec, q_demand: np.ndarray,
                   violation_threshold: int = 5,
                   factor_range: tuple[float, float] = (1.0, 1.1),
                   inflate_reactive: bool = False,
                   extra_rounds: int = 25,
                   max_rounds: int = 200):
    """Multiply loads by random per-bus factors until the linear model puts
    more than ``violation_threshold`` buses below the lower voltage bound,
    then keep going for ``extra_rounds`` more rounds.

    The extra rounds deepen the dip well past the counting threshold (the
    count only grows, so the ``> violation_threshold`` condition is
    preserved).  Barely-crossing instances leave the optimal duals huge
    relative to the violation signal and every optimizer crawls; the extra
    depth keeps the dual scale within reach of the ramp schedules.
    Returns ``(delta, q_final)`` where ``delta = inflated - base >= 0`` is
    the demand excess and ``q_final`` the (possibly inflated) reactive
    demand the scenario holds fixed.
    """
    lo, _ = safety.bounds(sens.n)
    p = base_p.copy()
    q = q_demand.copy()
    remaining = None
    for _ in range(max_rounds):
        v = sens.v_tilde - sens.R @ p - sens.X @ q
        if int(np.sum(v < lo)) > violation_threshold:
            if remaining is None:
                remaining = extra_rounds
            if remaining == 0:
                return p - base_p, q
            remaining -= 1
        f = rng.uniform(factor_range[0], factor_range[1], size=sens.n)
        p = p * f
        if inflate_reactive:
            q = q * f
    raise ScenarioError(
        f"demand inflation failed to reach {violation_threshold + 1} violations "
        f"in {max_rounds} rounds"
    )


@dataclass
class Variant:
    """One concrete environment to optimize against (plus its baseline)."""

    label: str
    env: Environment
    tv: dynamics.TimeVaryingScenario | None
    smooth: bool
    baseline_kind: str            # "optimum" or "lower-bound"
    baseline_value: float | None = None
    baseline_per_step: np.ndarray | None = None
    baseline_incentive: np.ndarray | None = None
    baseline_certificate: dict | None = None
    omega: np.ndarray | None = None


@dataclass
class Scenario:
    config: ExperimentConfig
    case: NetworkCase
    base_p: np.ndarray
    q_demand: np.ndarray
    delta: np.ndarray
    thresholds: np.ndarray
    sens: object
    safety: SafetySpec
    variants: list[Variant]
    zero_incentive_violations: int
    base_min_voltage: float


def _case_and_template(cfg: ExperimentConfig):
    if cfg.case_path is None:
        return cases.ieee33_case(), *cases.ieee33_load_template()
    case = cases.load_case_or_bundled(cfg.case_path)
    raw = json.loads(Path(cfg.case_path).read_text())
    p = np.zeros(case.n)
    q = np.zeros(case.n)
    pq_pos = {b: k for k, b in enumerate(case.pq_buses)}
    for entry in raw.get("buses", []):
        if isinstance(entry, dict) and int(entry.get("id", -1)) in pq_pos:
            k = pq_pos[int(entry["id"])]
            p[k] = float(entry.get("p_kw", 0.0)) / (case.base_mva * 1000.0)
            q[k] = float(entry.get("q_kvar", 0.0)) / (case.base_mva * 1000.0)
    if not p.any():
        raise ConfigError("case file carries no nominal loads to seed the sampler")
    return case, p, q


def _mean_devices(models) -> float:
    return float(np.mean([[len(b) for b in m.breakpoints] for m in models]))


def load_profile_csv(path: str | Path, n: int) -> np.ndarray:
    """Per-minute load table: one row per minute, one p.u. column per bus."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            try:
                rows.append([float(x) for x in rec])
            except ValueError:
                if rows:
                    raise
                continue  # header line
    table = np.asarray(rows, dtype=float)
    if table.ndim != 2 or table.shape[1] != n:
        raise ConfigError(f"load table must have {n} columns")
    return table


def generate_load_table(rng: np.random.Generator, base_p: np.ndarray,
                        minutes: int, jitter: float = 0.03,
                        span: tuple[float, float] = (0.75, 1.25)) -> np.ndarray:
    """Synthetic minute-level profile: multiplicative random walk around the
    base loads, reflected into ``span``."""
    n = base_p.shape[0]
    mult = np.ones(n)
    rows = []
    for _ in range(minutes):
        mult = mult * np.exp(rng.uniform(-jitter, jitter, size=n))
        mult = np.clip(mult, span[0], span[1])
        rows.append(base_p * mult)
    return np.asarray(rows)


def build_scenario(cfg: ExperimentConfig) -> Scenario:
    """Deterministically construct the experiment's environments."""
    case, template_p, template_q = _case_and_template(cfg)
    safety = SafetySpec(v_lower=cfg.v_lower, v_upper=cfg.v_upper, mode="lower-only")
    root = np.random.SeedSequence(cfg.seed)
    seq_loads, seq_inflate, seq_t, seq_model, seq_tv = root.spawn(5)

    base_p, base_q = sample_base_loads(
        np.random.default_rng(seq_loads), case, template_p, template_q,
        cfg.load_band, cfg.v_lower)
    sens = compute_sensitivity(case, OperatingPoint(p=-base_p, q=-base_q))
    delta, q_demand = inflate_demand(
        np.random.default_rng(seq_inflate), base_p, sens, safety, base_q,
        violation_threshold=cfg.violation_threshold,
        inflate_reactive=cfg.inflate_reactive,
        extra_rounds=cfg.inflate_extra_rounds)
    thresholds = sample_thresholds(np.random.default_rng(seq_t), case.n)
    params = response.ResponseParams(u_star=base_p, delta=delta, t=thresholds)

    def make_env(model):
        return Environment(model=model, sens=sens, safety=safety,
                           q_demand=q_demand, channel=cfg.channel, case=case)

    rng_model = np.random.default_rng(seq_model)
    rng_tv = np.random.default_rng(seq_tv)
    variants: list[Variant] = []
    if cfg.scenario == "quad_convex":
        m = response.ResponseModel(params=params, family=response.QUADRATIC_CONVEX)
        variants.append(Variant("quad", make_env(m), None, True, "optimum"))
    elif cfg.scenario == "linear":
        m = response.ResponseModel(params=params, family=response.LINEAR)
        variants.append(Variant("linear", make_env(m), None, True, "optimum"))
    elif cfg.scenario == "poly_convex":
        for y in cfg.poly_exponents:
            m = response.ResponseModel(params=params, family=response.POLYNOMIAL_CONVEX,
                                       exponent=int(y))
            variants.append(Variant(f"y{y}", make_env(m), None, True, "optimum"))
    elif cfg.scenario == "poly_concave":
        for y in cfg.concave_exponents:
            m = response.ResponseModel(params=params, family=response.POLYNOMIAL_CONCAVE,
                                       exponent=int(y))
            variants.append(Variant(f"y{y}", make_env(m), None, False, "lower-bound"))
    elif cfg.scenario == "step":
        for d in cfg.devices:
            m = response.generate_step_model(rng_model, params, int(d))
            variants.append(Variant(f"D{d}", make_env(m), None, False, "lower-bound"))
    else:
        tv_cfg = dynamics.TimeVaryingConfig(
            slow_steps=cfg.slow_steps, iters_per_slow_step=cfg.iters_per_slow_step,
            event_rate=cfg.event_rate, event_scope=cfg.event_scope)
        if cfg.scenario == "tv_load_series":
            if cfg.load_table is not None:
                table = load_profile_csv(cfg.load_table, case.n)
            else:
                table = generate_load_table(rng_tv, base_p, cfg.slow_steps)

            def _inflate(r, base, s):
                d, _ = inflate_demand(r, base, s, safety, q_demand,
                                      violation_threshold=cfg.violation_threshold,
                                      extra_rounds=cfg.inflate_extra_rounds)
                return d

            tv = dynamics.build_load_series_schedule(
                rng_tv, case, table, cfg.alpha, thresholds, q_demand, _inflate, tv_cfg)
            variants.append(Variant("loadseries", make_env(tv.schedule[0]), tv,
                                    True, "optimum"))
        else:
            initial = response.generate_step_model(rng_model, params, 6)
            steps = dynamics.build_birth_death_schedule(rng_tv, initial, tv_cfg)
            if cfg.scenario == "tv_quad":
                tv = dynamics.derive_quadratic_schedule(steps)
                label = "tvquad"
                variants.append(Variant(label, make_env(tv.schedule[0]), tv,
                                        True, "optimum"))
            else:
                tv = steps
                variants.append(Variant(f"tvstep-D{_mean_devices(steps.schedule):.1f}",
                                        make_env(tv.schedule[0]), tv, False,
                                        "lower-bound"))

    v0 = sens.v_tilde - sens.R @ (base_p + delta) - sens.X @ q_demand
    lo, _ = safety.bounds(case.n)
    return Scenario(
        config=cfg,
        case=case,
        base_p=base_p,
        q_demand=q_demand,
        delta=delta,
        thresholds=thresholds,
        sens=sens,
        safety=safety,
        variants=variants,
        zero_incentive_violations=int(np.sum(v0 < lo)),
        base_min_voltage=float((sens.v_tilde - sens.R @ base_p - sens.X @ q_demand).min()),
    )


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def _stationary_baseline(v: Variant, scn: Scenario):
    cfg = scn.config
    m = v.env.model
    if v.baseline_kind == "optimum" and m.family == response.LINEAR:
        x, c, _ = baseline.lp_optimum(m, scn.sens, scn.safety, scn.q_demand)
        v.baseline_value, v.baseline_incentive = c, x
    elif v.baseline_kind == "optimum":
        opt = baseline.convex_optimum(
            m, scn.sens, scn.safety, scn.q_demand,
            tol=cfg.baseline_tol, max_iter=cfg.baseline_max_iter)
        v.baseline_value, v.baseline_incentive = opt.cost, opt.incentive
        v.baseline_certificate = {
            "certified": bool(opt.certified),
            "kkt_residual": float(opt.kkt_residual),
            "duality_gap": float(opt.duality_gap),
        }
    else:
        v.baseline_value = baseline.lower_bound(m, scn.sens, scn.safety, scn.q_demand)


def _time_varying_baseline(v: Variant, scn: Scenario):
    cfg = scn.config
    tv = v.tv
    per_step = np.empty(tv.slow_steps)
    omega = np.zeros(tv.slow_steps)
    warm = None
    z_prev = None
    for k, model in enumerate(tv.schedule):
        sens_k = tv.sensitivities[k] if tv.sensitivities else scn.sens
        if v.baseline_kind == "optimum":
            opt = baseline.convex_optimum(
                model, sens_k, scn.safety, scn.q_demand, tol=cfg.baseline_tol,
                max_iter=cfg.tv_baseline_max_iter if k else cfg.baseline_max_iter,
                warm=warm)
            per_step[k] = opt.cost
            warm = (opt.incentive, opt.duals)
            z = np.concatenate([opt.incentive, opt.duals])
        else:
            lin = response.linear_approximation(model)
            x, c, res = baseline.lp_optimum(lin, sens_k, scn.safety, scn.q_demand)
            per_step[k] = c
            z = np.concatenate([x, res.duals[: model.n]])
        if z_prev is not None:
            omega[k] = float(np.linalg.norm(z - z_prev))
        z_prev = z
    v.baseline_per_step = per_step
    v.baseline_value = float(per_step.mean())
    v.omega = omega


def compute_baselines(scn: Scenario):
    for v in scn.variants:
        if v.tv is None:
            _stationary_baseline(v, scn)
        else:
            _time_varying_baseline(v, scn)


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------

def _algo_object(name: str, cfg: ExperimentConfig, v: Variant) -> alg.Algorithm:
    ramp = alg.DualRamp(cfg.dual_eps1, cfg.dual_increment, alg.ON_VIOLATION)
    zramp = alg.DualRamp(cfg.dual_eps1, cfg.dual_increment, alg.BEFORE_FEASIBLE)
    # Staircase responses flip between feasible and violating forever, so a
    # ramp that grows on every violation escalates without bound and the
    # growing dual impulses ratchet the incentive upward; freeze the ramp
    # at first feasibility on those instances.
    framp = ramp if v.smooth else zramp
    if name == "III":
        return alg.III(eps=cfg.iii_eps)
    if name == "DAIO":
        return alg.DAIO(dual=ramp)
    if name == "FOIO-exact":
        grad = "exact" if v.smooth else "linear-approx"
        return alg.FOIO(primal=alg.Constant(cfg.foio_primal), dual=framp, grad=grad,
                        name="FOIO-exact" if v.smooth else "FOIO-linapprox")
    if name == "FOIO-coarse":
        p = v.env.model.params
        rule = cfg.coarse_rule
        if rule == "min_t_over_100":
            t_est = float(p.t.min()) / 100.0
        elif rule == "min_t":
            t_est = float(p.t.min())
        elif rule == "max_t":
            t_est = float(p.t.max())
        else:
            t_est = float(rule)
        grad = response.coarse_gradient(p, t_est)
        return alg.FOIO(primal=alg.Constant(cfg.foio_primal), dual=framp, grad=grad,
                        name=f"FOIO-coarse[{rule}]")
    sigma = cfg.zoio_sigma if cfg.zoio_sigma is not None else (0.005 if v.smooth else 0.1)
    # The multiplicative dual decay parks the hover on the infeasible side
    # of the band, which is harmless only while the environment is smooth
    # and fixed.  Staircase responses and tracking runs instead keep full
    # dual memory; tracking additionally needs the anti-windup ramp
    # (escalate through a persistent violation, relax once safe) so that
    # transitions recover fast without permanently escalated steps.
    eps_p = cfg.zoio_primal
    if v.tv is not None:
        decay = cfg.zoio_tv_decay
        ztrig = alg.DualRamp(cfg.dual_eps1, cfg.zoio_tv_increment, alg.RESETTING)
        eps_p = cfg.zoio_tv_primal
    elif not v.smooth:
        decay, ztrig = 1.0, ramp
    else:
        decay, ztrig = cfg.zoio_decay, zramp
    zo = alg.ZOConfig(sigma=sigma, p=0.0, dual_decay=decay,
                      measurement_noise=cfg.zoio_noise)
    return alg.ZOIO(zo=zo, eps_primal=eps_p, dual=ztrig)


@dataclass
class RunRecord:
    run_id: str
    algorithm: str
    variant: str
    iterations: int
    final_cost: float
    final_feasible: bool
    final_gap: float | None
    min_dual_entry: float
    trace_path: str
    wall_s: float


def _gap_series(trace: alg.Trace, v: Variant) -> np.ndarray:
    if v.baseline_per_step is not None:
        base = v.baseline_per_step[trace.slow_step]
    elif v.baseline_value is not None:
        base = np.full(trace.iterations, v.baseline_value)
    else:
        return np.full(trace.iterations, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (trace.cost - base) / base


def write_trace_csv(path: Path, run_id: str, trace: alg.Trace, gap: np.ndarray):
    with open(path, "w", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        name = trace.algorithm
        for k in range(trace.iterations):
            fh.write(
                f"{run_id},{name},{k + 1},{int(trace.slow_step[k])},"
                f"{float(trace.min_voltage[k])!r},{float(trace.cost[k])!r},"
                f"{float(trace.max_h[k])!r},{int(trace.feasible[k])},"
                f"{float(gap[k])!r}\n"
            )


def _execute_run(scn: Scenario, v: Variant, algo_name: str, out_dir: Path):
    cfg = scn.config
    algo = _algo_object(algo_name, cfg, v)
    run_id = f"{cfg.scenario}-{v.label}-{algo.name}-s{cfg.seed}"
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, hash_name(v.label), hash_name(algo_name)]))
    t0 = time.perf_counter()
    if v.tv is None:
        trace = alg.run_stationary(v.env, algo, cfg.iterations, rng,
                                   settle_feasible=not v.smooth)
    else:
        trace = alg.run_time_varying(v.env, v.tv, algo, rng)
    wall = time.perf_counter() - t0
    gap = _gap_series(trace, v)
    trace_path = out_dir / "traces" / f"{run_id}.csv"
    write_trace_csv(trace_path, run_id, trace, gap)
    rec = RunRecord(
        run_id=run_id,
        algorithm=algo.name,
        variant=v.label,
        iterations=int(trace.iterations),
        final_cost=float(trace.final_cost),
        final_feasible=bool(trace.final_feasible),
        final_gap=float(gap[-1]) if np.isfinite(gap[-1]) else None,
        min_dual_entry=float(trace.min_dual_entry),
        trace_path=str(trace_path.relative_to(out_dir)),
        wall_s=wall,
    )
    return rec, trace


def hash_name(s: str) -> int:
    return int.from_bytes(hashlib.sha256(s.encode()).digest()[:4], "big")


def validate_config(cfg: ExperimentConfig) -> dict:
    """Static and step-size checks; returns the report logged by the CLI."""
    scn = build_scenario(cfg)
    report: dict = {
        "scenario": cfg.scenario,
        "variants": [v.label for v in scn.variants],
        "zero_incentive_violations": scn.zero_incentive_violations,
        "base_min_voltage": scn.base_min_voltage,
        "checks": validate_checks_for_manifest(cfg, scn),
    }
    if cfg.is_time_varying:
        report["total_iterations"] = cfg.slow_steps * cfg.iters_per_slow_step
    return report


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """Build the scenario, compute baselines, run every selected algorithm
    on every variant, and write traces plus the manifest."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    scn = build_scenario(cfg)
    compute_baselines(scn)

    jobs = [(v, a) for v in scn.variants for a in cfg.algorithms]
    records: list[RunRecord] = []
    errors: list[dict] = []

    def _one(pair):
        v, a = pair
        return _execute_run(scn, v, a, out)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_try_run(_one, errors), jobs))
    else:
        results = [_try_run(_one, errors)(j) for j in jobs]
    for res in results:
        if res is not None:
            records.append(res[0])

    manifest = build_manifest(cfg, scn, records, errors)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def _try_run(fn, errors):
    def wrapped(job):
        v, a = job
        try:
            return fn(job)
        except Exception as exc:  # record per-run failure, let others proceed
            errors.append({"variant": v.label, "algorithm": a, "error": str(exc)})
            return None
    return wrapped


def build_manifest(cfg: ExperimentConfig, scn: Scenario,
                   records: list[RunRecord], errors: list[dict]) -> dict:
    variants = []
    for v in scn.variants:
        entry = {
            "label": v.label,
            "family": v.env.model.family,
            "baseline_kind": v.baseline_kind,
            "baseline_value": v.baseline_value,
        }
        if v.baseline_certificate is not None:
            entry["baseline_certificate"] = v.baseline_certificate
        if v.baseline_per_step is not None:
            entry["baseline_per_step"] = [float(x) for x in v.baseline_per_step]
            entry["omega"] = [float(x) for x in v.omega]
        variants.append(entry)
    runs = [
        {
            "run_id": r.run_id,
            "algorithm": r.algorithm,
            "variant": r.variant,
            "iterations": r.iterations,
            "final_cost": r.final_cost,
            "final_feasible": r.final_feasible,
            "final_gap": r.final_gap,
            "min_dual_entry": r.min_dual_entry,
            "trace": r.trace_path,
        }
        for r in sorted(records, key=lambda r: r.run_id)
    ]
    # location and worker count are execution mechanics, not content
    hashed_config = {k: v for k, v in cfg.to_dict().items()
                     if k not in ("out_dir", "jobs")}
    core = {
        "config": cfg.to_dict(),
        "scenario": {
            "violations_at_zero_incentive": scn.zero_incentive_violations,
            "base_min_voltage": scn.base_min_voltage,
            "delta_total": float(scn.delta.sum()),
            "threshold_total": float(scn.thresholds.sum()),
        },
        "validate": validate_checks_for_manifest(cfg, scn),
        "variants": variants,
        "runs": runs,
        "errors": sorted(errors, key=lambda e: (e["variant"], e["algorithm"])),
    }
    blob = json.dumps({**core, "config": hashed_config}, sort_keys=True,
                      separators=(",", ":"))
    return {
        **core,
        "manifest_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "meta": {
            "package_version": __version__,
            "kernel_backend": BACKEND,
            "python": sys.version.split()[0],
            "timings_s": {r.run_id: r.wall_s for r in records},
        },
    }


def validate_checks_for_manifest(cfg: ExperimentConfig, scn: Scenario) -> list[dict]:
    checks = []
    if "DAIO" in cfg.algorithms:
        for v in scn.variants:
            if v.env.model.family != response.QUADRATIC_CONVEX:
                continue
            env = v.env
            h0 = env.h(np.zeros(env.n))
            bound = alg.daio_step_condition(
                np.ones(env.n), h0, lambda lam: alg.dual_value(env, lam))
            checks.append({
                "variant": v.label,
                "daio_eps_bound": float(bound),
                "daio_eps1": cfg.dual_eps1,
                "within_bound": bool(cfg.dual_eps1 < bound),
            })
    return checks
