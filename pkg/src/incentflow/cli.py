"""Command-line front end: run experiments, validate configs, render plots.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from ._kernels import BACKEND


def _cmd_run(args) -> int:
    from .harness import ConfigError, load_config, run_experiment

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        cfg.__post_init__()
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        manifest = run_experiment(cfg)
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    for run in manifest["runs"]:
        gap = run["final_gap"]
        gap_s = f"{gap:+.3%}" if gap is not None else "n/a"
        feas = "feasible" if run["final_feasible"] else "INFEASIBLE"
        print(f"{run['run_id']}: cost={run['final_cost']:.6g} ({feas}, gap {gap_s})")
    for err in manifest["errors"]:
        print(f"FAILED {err['variant']}/{err['algorithm']}: {err['error']}", file=sys.stderr)
    print(f"manifest: {cfg.out_dir}/manifest.json (backend: {BACKEND})")
    return 2 if manifest["errors"] else 0


def _cmd_validate(args) -> int:
    from .harness import ConfigError, ScenarioError, load_config, validate_config

    try:
        cfg = load_config(args.config)
        report = validate_config(cfg)
    except (ConfigError, ScenarioError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(report, indent=1, sort_keys=True))
    bad = [c for c in report["checks"] if not c.get("within_bound", True)]
    for c in bad:
        print(
            f"warning: dual step {c['daio_eps1']} exceeds the provable bound "
            f"{c['daio_eps_bound']:.4g} on variant {c['variant']}",
            file=sys.stderr,
        )
    return 0


def _cmd_plot(args) -> int:
    from .plots import PlotError, emit_plots

    try:
        written = emit_plots(args.manifest, args.out)
    except (PlotError, FileNotFoundError, KeyError) as exc:
        print(f"plot error: {exc}", file=sys.stderr)
        return 2
    for p in written:
        print(p)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="incentflow",
        description="Feedback optimization of grid incentives on a simulated feeder.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a config and step-size conditions")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=_cmd_validate)

    p_plot = sub.add_parser("plot", help="render SVG figures from a manifest")
    p_plot.add_argument("--manifest", required=True)
    p_plot.add_argument("--out", default=None)
    p_plot.set_defaults(func=_cmd_plot)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
