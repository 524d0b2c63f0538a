"""Timing comparison of the compiled kernels against the NumPy fallback.

Runs each optimizer's inner loop on the default 33-bus quadratic scenario
with both backends and prints iterations per second plus the speedup.

    python benchmarks/bench_backends.py [--iters 50000]
"""

import argparse
import time

import numpy as np

from incentflow._kernels import EnvPack, _py
from incentflow.harness import ExperimentConfig, build_scenario

try:
    from incentflow._kernels import _core
except ImportError:
    _core = None


def bench(mod, name, pack, env, iters):
    n = pack.n
    i = np.zeros(n)
    lam = np.ones(n) if name == "daio" else np.zeros(n)
    outs = (np.zeros(iters), np.zeros(iters), np.zeros(iters),
            np.zeros(iters, dtype=np.uint8), np.zeros(iters))
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    if name == "iii":
        mod.run_iii(pack, i, iters, 0.1, *outs)
    elif name == "daio":
        mod.run_daio(pack, i, lam, iters, 1.0, 0.1, _py.TRIG_ON_VIOLATION,
                     False, *outs)
    elif name == "foio":
        mod.run_foio(pack, i, lam, env.h(np.zeros(n)), iters,
                     _py.MODE_PRACTICAL, 5e-4, 1.0, 0, 0, False,
                     _py.GRAD_EXACT, np.zeros(n), 1.0, 0.1,
                     _py.TRIG_ON_VIOLATION, False, *outs)
    else:
        zeta = rng.uniform(-1, 1, (iters, n))
        mod.run_zoio(pack, i, lam, iters, 1e-4, 0.0, 0.005, 0.95, zeta, None,
                     1.0, 0.1, _py.TRIG_BEFORE_FEASIBLE, False, *outs)
    return time.perf_counter() - t0


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--iters", type=int, default=50_000)
    args = parser.parse_args()

    scn = build_scenario(ExperimentConfig(scenario="quad_convex",
                                          iterations=1, seed=1))
    env = scn.variants[0].env
    pack = EnvPack.from_environment(env)

    print(f"{'kernel':<8} {'python s':>10} {'compiled s':>11} {'speedup':>8}")
    for name in ("iii", "daio", "foio", "zoio"):
        tp = bench(_py, name, pack, env, args.iters)
        if _core is None:
            print(f"{name:<8} {tp:10.3f} {'n/a':>11} {'n/a':>8}")
            continue
        tc = bench(_core, name, pack, env, args.iters)
        print(f"{name:<8} {tp:10.3f} {tc:11.3f} {tp / tc:7.1f}x")
    if _core is None:
        print("compiled backend unavailable; build with `pip install -e .`")


if __name__ == "__main__":
    main()
