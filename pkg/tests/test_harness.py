import json

import numpy as np
import pytest

from incentflow import cli
from incentflow.grid import OperatingPoint, SafetySpec, compute_sensitivity
from incentflow.harness import (
    ConfigError,
    ExperimentConfig,
    ScenarioError,
    build_scenario,
    config_from_dict,
    generate_load_table,
    inflate_demand,
    load_config,
    load_profile_csv,
    run_experiment,
    sample_thresholds,
    validate_config,
)
from incentflow.plots import PlotError, emit_plots

SMALL = dict(scenario="quad_convex", iterations=300, seed=1,
             algorithms=("III", "DAIO"), baseline_max_iter=4000)


class TestThresholds:
    def test_reproducible(self):
        a = sample_thresholds(np.random.default_rng(5), 16)
        b = sample_thresholds(np.random.default_rng(5), 16)
        assert np.array_equal(a, b)

    def test_positive_and_unit_mean(self):
        t = sample_thresholds(np.random.default_rng(0), 100_000)
        assert np.all(t > 0) and np.all(t <= 1)
        assert abs(t.mean() - 0.5) < 0.01


class TestInflation:
    def _sens(self, case3):
        base = np.array([0.15, 0.1])
        return base, compute_sensitivity(case3, OperatingPoint(p=-base, q=np.zeros(2)))

    def test_monotone_growth_and_violations(self, case3):
        base, sens = self._sens(case3)
        safety = SafetySpec(0.9925, 1.1, "lower-only")
        delta, q = inflate_demand(np.random.default_rng(1), base, sens, safety,
                                  np.zeros(2), violation_threshold=1,
                                  extra_rounds=0)
        assert np.all(delta >= 0)
        v = sens.v_tilde - sens.R @ (base + delta)
        assert int(np.sum(v < 0.9925)) > 1

    def test_unreachable_bound_errors(self, case3):
        base, sens = self._sens(case3)
        # nothing violates a zero lower bound
        safety = SafetySpec(0.0, 1.1, "lower-only")
        with pytest.raises(ScenarioError, match="failed to reach"):
            inflate_demand(np.random.default_rng(1), base, sens, safety,
                           np.zeros(2), violation_threshold=1, max_rounds=30)

    def test_extra_rounds_deepen(self, case3):
        base, sens = self._sens(case3)
        safety = SafetySpec(0.9925, 1.1, "lower-only")
        d0, _ = inflate_demand(np.random.default_rng(1), base, sens, safety,
                               np.zeros(2), violation_threshold=1, extra_rounds=0)
        d5, _ = inflate_demand(np.random.default_rng(1), base, sens, safety,
                               np.zeros(2), violation_threshold=1, extra_rounds=5)
        assert d5.sum() > d0.sum()

    def test_reactive_inflation_switch(self, case3):
        base, sens = self._sens(case3)
        safety = SafetySpec(0.985, 1.1, "lower-only")
        q0 = np.array([0.05, 0.04])
        _, q_same = inflate_demand(np.random.default_rng(1), base, sens, safety,
                                   q0, violation_threshold=1, extra_rounds=0)
        _, q_up = inflate_demand(np.random.default_rng(1), base, sens, safety,
                                 q0, violation_threshold=1, extra_rounds=0,
                                 inflate_reactive=True)
        assert np.array_equal(q_same, q0)
        assert np.all(q_up >= q0) and q_up.sum() > q0.sum()


class TestConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown configuration key"):
            config_from_dict({"scenario": "quad_convex", "bogus": 1})

    def test_daio_guarded(self):
        with pytest.raises(ConfigError, match="DAIO"):
            ExperimentConfig(scenario="step", algorithms=("DAIO",))

    def test_zero_iterations_rejected(self):
        with pytest.raises(ConfigError, match="at least 1"):
            ExperimentConfig(iterations=0)

    def test_toml_json_equivalence(self, tmp_path):
        doc = {"scenario": "linear", "iterations": 50, "seed": 3,
               "algorithms": ["III"], "out_dir": "x"}
        tj = tmp_path / "c.toml"
        tj.write_text("\n".join(
            [f'scenario = "linear"', "iterations = 50", "seed = 3",
             'algorithms = ["III"]', 'out_dir = "x"']))
        jj = tmp_path / "c.json"
        jj.write_text(json.dumps(doc))
        assert load_config(tj) == load_config(jj)

    def test_validate_reports_daio_bound(self):
        cfg = ExperimentConfig(**SMALL)
        report = validate_config(cfg)
        assert report["zero_incentive_violations"] > 5
        checks = report["checks"]
        assert checks and "daio_eps_bound" in checks[0]


class TestScenario:
    def test_deterministic_build(self):
        a = build_scenario(ExperimentConfig(**SMALL))
        b = build_scenario(ExperimentConfig(**SMALL))
        assert np.array_equal(a.delta, b.delta)
        assert np.array_equal(a.thresholds, b.thresholds)
        assert np.array_equal(a.base_p, b.base_p)

    def test_poly_variants(self):
        cfg = ExperimentConfig(scenario="poly_convex", iterations=10,
                               algorithms=("III",), poly_exponents=(4, 8))
        scn = build_scenario(cfg)
        assert [v.label for v in scn.variants] == ["y4", "y8"]

    def test_step_variants_share_instance(self):
        cfg = ExperimentConfig(scenario="step", iterations=10,
                               algorithms=("III",), devices=(2, 6))
        scn = build_scenario(cfg)
        p0 = scn.variants[0].env.model.params
        p1 = scn.variants[1].env.model.params
        assert np.array_equal(p0.delta, p1.delta)
        assert np.array_equal(p0.t, p1.t)

    def test_tv_counts(self):
        cfg = ExperimentConfig(scenario="tv_step", iterations=10,
                               algorithms=("III",), slow_steps=12,
                               iters_per_slow_step=7)
        scn = build_scenario(cfg)
        tv = scn.variants[0].tv
        assert tv.slow_steps == 12
        assert tv.total_iterations == 84


class TestLoadTables:
    def test_csv_round_trip(self, tmp_path):
        rows = np.abs(np.random.default_rng(0).normal(0.1, 0.02, (6, 4)))
        path = tmp_path / "loads.csv"
        with open(path, "w") as fh:
            fh.write("b1,b2,b3,b4\n")
            for r in rows:
                fh.write(",".join(repr(float(x)) for x in r) + "\n")
        table = load_profile_csv(path, 4)
        assert np.array_equal(table, rows)

    def test_wrong_width_rejected(self, tmp_path):
        path = tmp_path / "loads.csv"
        path.write_text("0.1,0.2\n0.2,0.3\n")
        with pytest.raises(ConfigError, match="columns"):
            load_profile_csv(path, 3)

    def test_generated_table_spans(self):
        base = np.full(5, 0.1)
        table = generate_load_table(np.random.default_rng(0), base, 50)
        assert table.shape == (50, 5)
        assert table.min() >= 0.075 - 1e-12 and table.max() <= 0.125 + 1e-12


class TestRunExperiment:
    def test_manifest_and_traces(self, tmp_path):
        cfg = ExperimentConfig(out_dir=str(tmp_path / "out"), **SMALL)
        manifest = run_experiment(cfg)
        assert not manifest["errors"]
        assert len(manifest["runs"]) == 2
        cert = manifest["variants"][0]["baseline_certificate"]
        assert cert["certified"] and cert["kkt_residual"] < 1e-6
        for run in manifest["runs"]:
            trace = tmp_path / "out" / run["trace"]
            lines = trace.read_text().splitlines()
            assert lines[0] == ("run_id,algorithm,iteration,slow_step,"
                                "min_voltage,cost,max_h,feasible,gap")
            assert len(lines) == 1 + run["iterations"]
            assert run["min_dual_entry"] >= 0.0
        assert manifest["meta"]["kernel_backend"] in ("compiled", "python")

    def test_byte_identical_reruns(self, tmp_path):
        hashes = []
        texts = []
        for sub in ("a", "b"):
            cfg = ExperimentConfig(out_dir=str(tmp_path / sub), **SMALL)
            manifest = run_experiment(cfg)
            hashes.append(manifest["manifest_hash"])
            texts.append(sorted(
                p.read_text() for p in (tmp_path / sub / "traces").iterdir()))
        assert hashes[0] == hashes[1]
        assert texts[0] == texts[1]

    def test_final_costs_respect_lower_bound(self, tmp_path):
        cfg = ExperimentConfig(scenario="step", iterations=4000, seed=1,
                               algorithms=("III", "FOIO-exact"), devices=(6,),
                               out_dir=str(tmp_path / "out"))
        manifest = run_experiment(cfg)
        bound = manifest["variants"][0]["baseline_value"]
        for run in manifest["runs"]:
            if run["final_feasible"]:
                assert run["final_cost"] >= bound - 1e-9

    def test_tv_record_counts(self, tmp_path):
        cfg = ExperimentConfig(scenario="tv_quad", seed=1, algorithms=("FOIO-exact",),
                               slow_steps=5, iters_per_slow_step=40,
                               out_dir=str(tmp_path / "out"),
                               baseline_max_iter=4000, tv_baseline_max_iter=2000)
        manifest = run_experiment(cfg)
        run = manifest["runs"][0]
        assert run["iterations"] == 200
        trace = (tmp_path / "out" / run["trace"]).read_text().splitlines()
        assert len(trace) == 201
        slow = [int(line.split(",")[3]) for line in trace[1:]]
        assert slow == sorted(slow)
        assert slow[0] == 0 and slow[-1] == 4
        variant = manifest["variants"][0]
        assert len(variant["baseline_per_step"]) == 5
        assert len(variant["omega"]) == 5

    def test_parallel_jobs_deterministic(self, tmp_path):
        results = []
        for sub, jobs in (("a", 1), ("b", 3)):
            cfg = ExperimentConfig(out_dir=str(tmp_path / sub), jobs=jobs, **SMALL)
            results.append(run_experiment(cfg))
        assert results[0]["manifest_hash"] == results[1]["manifest_hash"]

    def test_ac_measurement_channel(self):
        from incentflow import algorithms as alg

        cfg = ExperimentConfig(scenario="quad_convex", iterations=60, seed=1,
                               algorithms=("III",), inflate_extra_rounds=0,
                               channel="ac")
        scn = build_scenario(cfg)
        env = scn.variants[0].env
        assert env.channel == "ac"
        tr = alg.run_stationary(env, alg.DAIO(), 60)
        assert tr.final_cost > 0.0
        assert tr.min_dual_entry >= 0.0

    def test_tv_step_scenario_runs(self, tmp_path):
        cfg = ExperimentConfig(scenario="tv_step", seed=1,
                               algorithms=("III", "FOIO-exact", "ZOIO"),
                               slow_steps=8, iters_per_slow_step=150,
                               out_dir=str(tmp_path / "out"))
        manifest = run_experiment(cfg)
        assert not manifest["errors"]
        assert manifest["variants"][0]["baseline_kind"] == "lower-bound"
        assert len(manifest["variants"][0]["baseline_per_step"]) == 8
        for run in manifest["runs"]:
            assert run["iterations"] == 8 * 150

    def test_tv_load_series_from_csv(self, tmp_path):
        base_cfg = ExperimentConfig(scenario="linear", iterations=1,
                                    algorithms=("III",))
        scn = build_scenario(base_cfg)
        table = generate_load_table(np.random.default_rng(0), scn.base_p, 6)
        csv_path = tmp_path / "loads.csv"
        with open(csv_path, "w") as fh:
            for row in table:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
        cfg = ExperimentConfig(scenario="tv_load_series", seed=1,
                               algorithms=("FOIO-exact",), slow_steps=6,
                               iters_per_slow_step=120, load_table=str(csv_path),
                               out_dir=str(tmp_path / "out"),
                               baseline_max_iter=4000, tv_baseline_max_iter=2000)
        manifest = run_experiment(cfg)
        assert not manifest["errors"]
        variant = manifest["variants"][0]
        assert variant["baseline_kind"] == "optimum"
        # setpoints follow the blended table, so per-step optima move
        assert len(set(round(x, 9) for x in variant["baseline_per_step"])) > 1

    def test_poly_concave_scenario_runs(self, tmp_path):
        cfg = ExperimentConfig(scenario="poly_concave", iterations=2000, seed=1,
                               algorithms=("III", "FOIO-exact"),
                               concave_exponents=(2, 6),
                               out_dir=str(tmp_path / "out"))
        manifest = run_experiment(cfg)
        assert not manifest["errors"]
        assert {v["label"] for v in manifest["variants"]} == {"y2", "y6"}
        assert all(v["baseline_kind"] == "lower-bound"
                   for v in manifest["variants"])

    def test_per_run_errors_recorded(self, tmp_path, monkeypatch):
        cfg = ExperimentConfig(out_dir=str(tmp_path / "out"), **SMALL)
        from incentflow import harness

        real = harness._execute_run

        def boom(scn, v, name, out):
            if name == "DAIO":
                raise RuntimeError("synthetic failure")
            return real(scn, v, name, out)

        monkeypatch.setattr(harness, "_execute_run", boom)
        manifest = run_experiment(cfg)
        assert len(manifest["runs"]) == 1
        assert manifest["errors"] == [{"variant": "quad", "algorithm": "DAIO",
                                       "error": "synthetic failure"}]


class TestPlots:
    def test_plots_emitted_and_deterministic(self, tmp_path):
        cfg = ExperimentConfig(out_dir=str(tmp_path / "out"), **SMALL)
        run_experiment(cfg)
        manifest = tmp_path / "out" / "manifest.json"
        files = emit_plots(manifest)
        assert len(files) == 2
        names = {f.name for f in files}
        assert names == {"quad_convex-quad_min_voltage.svg",
                         "quad_convex-quad_cost.svg"}
        first = {f: f.read_text() for f in files}
        again = emit_plots(manifest)
        assert {f: f.read_text() for f in again} == first

    def test_baseline_overlay_value(self, tmp_path):
        cfg = ExperimentConfig(out_dir=str(tmp_path / "out"), **SMALL)
        manifest_doc = run_experiment(cfg)
        files = emit_plots(tmp_path / "out" / "manifest.json")
        cost_svg = [f for f in files if "cost" in f.name][0].read_text()
        base = manifest_doc["variants"][0]["baseline_value"]
        assert f"optimum = {base!r}" in cost_svg

    def test_empty_manifest_rejected(self, tmp_path):
        doc = {"runs": [], "variants": [], "config": {"v_lower": 0.9}}
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(PlotError):
            emit_plots(path)


class TestCli:
    def _config_file(self, tmp_path, **over):
        doc = dict(SMALL)
        doc["algorithms"] = list(doc["algorithms"])
        doc["out_dir"] = str(tmp_path / "out")
        doc.update(over)
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(doc))
        return path

    def test_run_validate_plot_round_trip(self, tmp_path, capsys):
        cfg = self._config_file(tmp_path)
        assert cli.main(["validate", "--config", str(cfg)]) == 0
        assert cli.main(["run", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert "manifest" in out
        assert cli.main(["plot", "--manifest",
                         str(tmp_path / "out" / "manifest.json")]) == 0

    def test_bad_config_exit_code(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"scenario": "nope"}))
        assert cli.main(["run", "--config", str(path)]) == 1
        assert cli.main(["validate", "--config", str(path)]) == 1

    def test_missing_manifest_exit_code(self, tmp_path):
        assert cli.main(["plot", "--manifest", str(tmp_path / "none.json")]) == 2

    def test_seed_override(self, tmp_path, capsys):
        cfg = self._config_file(tmp_path)
        assert cli.main(["run", "--config", str(cfg), "--seed", "7",
                         "--out", str(tmp_path / "o7")]) == 0
        manifest = json.loads((tmp_path / "o7" / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 7
