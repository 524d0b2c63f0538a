"""Backend equivalence: the compiled kernels against the NumPy fallback.

Comparisons run over short horizons because several recipes are chaotic
oscillators where last-bit reassociation differences grow exponentially;
agreement at these horizons pins the loop logic, not the dynamics.
"""

import numpy as np
import pytest

from incentflow._kernels import EnvPack, _py

_core = pytest.importorskip("incentflow._kernels._core",
                            reason="compiled backend not built")

HORIZON = 60
# gradient-fed loops cross projection boundaries where one-ulp noise flips
# a branch, so their comparison horizon is shorter
SHORT = {"foio": 25, "foio_coarse": 40}


@pytest.fixture(scope="module")
def pack_env(quad33):
    scn, env, _ = quad33
    return EnvPack.from_environment(env), env


def _outs(iters):
    return (np.zeros(iters), np.zeros(iters), np.zeros(iters),
            np.zeros(iters, dtype=np.uint8), np.zeros(iters))


def _run(mod, name, pack, env, iters, seed=0):
    n = pack.n
    i = np.zeros(n)
    lam = np.zeros(n)
    outs = _outs(iters)
    if name == "iii":
        ret = mod.run_iii(pack, i, iters, 0.1, *outs)
    elif name == "daio":
        lam = np.ones(n)
        ret = mod.run_daio(pack, i, lam, iters, 1.0, 0.1,
                           _py.TRIG_ON_VIOLATION, False, *outs)
    elif name == "foio":
        ret = mod.run_foio(pack, i, lam, env.h(np.zeros(n)), iters,
                           _py.MODE_PRACTICAL, 5e-4, 1.0, 0, 0, False,
                           _py.GRAD_EXACT, np.zeros(n), 1.0, 0.1,
                           _py.TRIG_ON_VIOLATION, False, *outs)
    elif name == "foio_theorem2":
        ret = mod.run_foio(pack, i, lam, env.h(np.zeros(n)), iters,
                           _py.MODE_THEOREM2, 0.0, 1.0, 10, 0, False,
                           _py.GRAD_EXACT, np.zeros(n), 1.0, 0.0,
                           _py.TRIG_NONE, False, *outs)
    elif name == "foio_coarse":
        coarse = -pack.delta / (pack.t.min() / 10.0)
        ret = mod.run_foio(pack, i, lam, env.h(np.zeros(n)), iters,
                           _py.MODE_PRACTICAL, 5e-4, 1.0, 0, 0, False,
                           _py.GRAD_COARSE, coarse, 1.0, 0.1,
                           _py.TRIG_BEFORE_FEASIBLE, False, *outs)
    else:
        rng = np.random.default_rng(seed)
        zeta = rng.uniform(-1, 1, (iters, n))
        noise = rng.uniform(-1e-3, 1e-3, (iters, 3, n))
        ret = mod.run_zoio(pack, i, lam, iters, 1e-4, 0.0, 0.005, 0.95,
                           zeta, noise, 1.0, 0.1, _py.TRIG_BEFORE_FEASIBLE,
                           False, *outs)
    return i, lam, outs, ret


@pytest.mark.parametrize("name", ["iii", "daio", "foio", "foio_theorem2",
                                  "foio_coarse", "zoio"])
def test_backends_agree(pack_env, name):
    pack, env = pack_env
    horizon = SHORT.get(name, HORIZON)
    ip, lp, outs_p, ret_p = _run(_py, name, pack, env, horizon)
    ic, lc, outs_c, ret_c = _run(_core, name, pack, env, horizon)
    assert np.allclose(ip, ic, rtol=1e-9, atol=1e-11)
    assert np.allclose(lp, lc, rtol=1e-9, atol=1e-9)
    assert np.allclose(outs_p[0], outs_c[0], rtol=1e-9, atol=1e-11)  # cost
    assert np.allclose(outs_p[2], outs_c[2], rtol=1e-7, atol=1e-10)  # max_h
    assert np.array_equal(outs_p[3], outs_c[3])                      # feasible
    assert ret_p[0] == pytest.approx(ret_c[0])
    assert ret_p[1] == ret_c[1]


def test_step_family_demand_agrees(quad33):
    from incentflow.response import generate_step_model

    scn, env, _ = quad33
    step = generate_step_model(np.random.default_rng(4), env.model.params, 5)
    env_s = env.with_model(step)
    pack = EnvPack.from_environment(env_s)
    rng = np.random.default_rng(1)
    for _ in range(50):
        i = rng.uniform(0, 1.2 * pack.t)
        d_py = _py.demand(pack, i)
        outs_p = _outs(1)
        outs_c = _outs(1)
        ip = i.copy()
        ic = i.copy()
        _py.run_iii(pack, ip, 1, 0.0, *outs_p)
        _core.run_iii(pack, ic, 1, 0.0, *outs_c)
        # serial vs pairwise summation differ in the last bit
        assert outs_p[0][0] == pytest.approx(outs_c[0][0], rel=1e-13)
        assert outs_p[2][0] == pytest.approx(outs_c[2][0], rel=1e-10, abs=1e-14)
        # the demand table itself agrees with the response module
        from incentflow.response import evaluate_demand

        assert np.array_equal(d_py, evaluate_demand(step, i))


def test_backend_label():
    from incentflow._kernels import BACKEND

    assert BACKEND in ("compiled", "python")
