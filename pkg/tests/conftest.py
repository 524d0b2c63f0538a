import numpy as np
import pytest

from incentflow import baseline
from incentflow.environment import Environment
from incentflow.grid import (
    Line,
    NetworkCase,
    OperatingPoint,
    SafetySpec,
    compute_sensitivity,
)
from incentflow.harness import ExperimentConfig, build_scenario
from incentflow.response import QUADRATIC_CONVEX, ResponseModel, ResponseParams


@pytest.fixture(scope="session")
def case2():
    return NetworkCase(bus_count=2, slack_id=0, lines=[Line(0, 1, 0.01, 0.02)])


@pytest.fixture(scope="session")
def case3():
    z = (0.01, 0.02)
    return NetworkCase(bus_count=3, slack_id=0,
                       lines=[Line(0, 1, *z), Line(1, 2, *z)])


@pytest.fixture(scope="session")
def case33():
    from incentflow.cases import ieee33_case

    return ieee33_case()


def make_toy(v_lower=0.985, u=0.5, excess=0.4, threshold=0.8,
             family=QUADRATIC_CONVEX, exponent=2, r=0.01, x=0.02):
    """One-bus instance with a hand-computable optimum."""
    case = NetworkCase(bus_count=2, slack_id=0, lines=[Line(0, 1, r, x)])
    u_star = np.array([float(u)])
    sens = compute_sensitivity(case, OperatingPoint(p=-u_star, q=np.zeros(1)))
    params = ResponseParams(u_star=u_star, delta=np.array([float(excess)]),
                            t=np.array([float(threshold)]))
    model = ResponseModel(params=params, family=family, exponent=exponent)
    env = Environment(model=model, sens=sens,
                      safety=SafetySpec(v_lower, 1.1, "lower-only"),
                      q_demand=np.zeros(1), case=case)
    return env


def toy_quad_analytic(env):
    """Closed-form optimum of the one-bus quadratic toy via its KKT system."""
    s = env.sens
    p = env.model.params
    r = s.R[0, 0]
    lo, _ = env.safety.bounds(1)
    d_max = (s.v_tilde[0] - lo[0]) / r          # largest feasible demand
    frac = np.sqrt((d_max - p.u_star[0]) / p.delta[0])
    i_star = p.t[0] * (1.0 - frac)
    b = p.delta[0] / p.t[0] ** 2
    lam_star = 1.0 / (2.0 * b * (p.t[0] - i_star) * r)
    return float(i_star), float(lam_star)


@pytest.fixture(scope="session")
def quad33():
    """The default 33-bus quadratic scenario plus its certified optimum."""
    cfg = ExperimentConfig(scenario="quad_convex", iterations=100, seed=1)
    scn = build_scenario(cfg)
    env = scn.variants[0].env
    opt = baseline.convex_optimum(env.model, scn.sens, scn.safety, scn.q_demand)
    assert opt.certified
    return scn, env, opt
