import numpy as np
import pytest

from incentflow.dynamics import (
    GLOBAL,
    TimeVaryingConfig,
    TimeVaryingScenario,
    build_birth_death_schedule,
    build_load_series_schedule,
    derive_quadratic_schedule,
)
from incentflow.grid import OperatingPoint, compute_sensitivity
from incentflow.response import (
    QUADRATIC_CONVEX,
    ResponseParams,
    evaluate_demand,
    generate_step_model,
)

N = 8


def initial_model(seed=0, devices=4):
    rng = np.random.default_rng(seed)
    params = ResponseParams(
        u_star=rng.uniform(0.05, 0.4, N),
        delta=rng.uniform(0.02, 0.2, N),
        t=rng.uniform(0.1, 1.0, N),
    )
    return generate_step_model(rng, params, devices)


class TestBirthDeath:
    def test_zero_rate_is_constant(self):
        m0 = initial_model()
        cfg = TimeVaryingConfig(slow_steps=20, iters_per_slow_step=10, event_rate=0.0)
        tv = build_birth_death_schedule(np.random.default_rng(1), m0, cfg)
        assert all(m.breakpoints == m0.breakpoints for m in tv.schedule)

    def test_event_count_scale(self):
        # rate 1/2.5 per minute for 100 minutes: about 40 events per bus
        m0 = initial_model()
        cfg = TimeVaryingConfig(slow_steps=100, iters_per_slow_step=1, event_rate=1 / 2.5)
        counts = []
        for seed in range(4):
            tv = build_birth_death_schedule(np.random.default_rng(seed), m0, cfg)
            dev = tv.device_counts()
            # adds and discarded removals make exact recovery impossible;
            # use the per-step change count as a lower bound on events
            changes = np.abs(np.diff(dev, axis=0)).sum()
            counts.append(changes / N)
        assert 15 < np.mean(counts) < 45

    def test_device_floor_never_broken(self):
        m0 = initial_model(devices=2)
        cfg = TimeVaryingConfig(slow_steps=100, iters_per_slow_step=1, event_rate=1.0)
        for seed in range(10):
            tv = build_birth_death_schedule(np.random.default_rng(seed), m0, cfg)
            assert tv.device_counts().min() >= 2

    def test_removal_promotes_second_step(self):
        m0 = initial_model(devices=4)
        cfg = TimeVaryingConfig(slow_steps=60, iters_per_slow_step=1, event_rate=0.8)
        tv = build_birth_death_schedule(np.random.default_rng(3), m0, cfg)
        seen_removal = False
        for k in range(1, tv.slow_steps):
            prev, cur = tv.schedule[k - 1], tv.schedule[k]
            for j in range(N):
                a, b = prev.breakpoints[j], cur.breakpoints[j]
                if len(b) == len(a) - 1:
                    seen_removal = True
                    # new peak is the former second level, thresholds shift
                    assert cur.params.delta[j] == pytest.approx(
                        a[0][1] - prev.params.u_star[j])
                    assert cur.params.t[j] == pytest.approx(
                        prev.params.t[j] - a[0][0])
        assert seen_removal

    def test_addition_shifts_right_and_raises_peak(self):
        m0 = initial_model(devices=2)
        cfg = TimeVaryingConfig(slow_steps=60, iters_per_slow_step=1, event_rate=0.8)
        tv = build_birth_death_schedule(np.random.default_rng(4), m0, cfg)
        seen_add = False
        for k in range(1, tv.slow_steps):
            prev, cur = tv.schedule[k - 1], tv.schedule[k]
            for j in range(N):
                a, b = prev.breakpoints[j], cur.breakpoints[j]
                if len(b) == len(a) + 1:
                    seen_add = True
                    width = b[0][0]
                    assert width > 0
                    assert cur.params.delta[j] > prev.params.delta[j]
                    assert cur.params.t[j] == pytest.approx(prev.params.t[j] + width)
                    # the old staircase is intact, shifted right
                    shifted = [(x + width, lv) for x, lv in a]
                    for (x1, l1), (x2, l2) in zip(b[1:], shifted):
                        assert x1 == pytest.approx(x2)
                        assert l1 == pytest.approx(l2)
        assert seen_add

    def test_setpoint_fixed(self):
        m0 = initial_model()
        cfg = TimeVaryingConfig(slow_steps=30, iters_per_slow_step=1, event_rate=0.5)
        tv = build_birth_death_schedule(np.random.default_rng(5), m0, cfg)
        for sp, m in zip(tv.setpoints, tv.schedule):
            assert np.array_equal(sp, m0.params.u_star)
            assert np.array_equal(m.params.u_star, m0.params.u_star)

    def test_deterministic(self):
        m0 = initial_model()
        cfg = TimeVaryingConfig(slow_steps=50, iters_per_slow_step=1, event_rate=0.7)
        tv1 = build_birth_death_schedule(np.random.default_rng(9), m0, cfg)
        tv2 = build_birth_death_schedule(np.random.default_rng(9), m0, cfg)
        assert all(a.breakpoints == b.breakpoints
                   for a, b in zip(tv1.schedule, tv2.schedule))

    def test_global_scope(self):
        m0 = initial_model()
        cfg = TimeVaryingConfig(slow_steps=50, iters_per_slow_step=1,
                                event_rate=0.7, event_scope=GLOBAL)
        tv = build_birth_death_schedule(np.random.default_rng(2), m0, cfg)
        assert tv.device_counts().min() >= 2

    def test_anchors_preserved_each_step(self):
        m0 = initial_model()
        cfg = TimeVaryingConfig(slow_steps=40, iters_per_slow_step=1, event_rate=0.8)
        tv = build_birth_death_schedule(np.random.default_rng(6), m0, cfg)
        for m in tv.schedule:
            p = m.params
            assert np.array_equal(evaluate_demand(m, np.zeros(N)), p.u_star + p.delta)
            assert np.array_equal(evaluate_demand(m, p.t.copy()), p.u_star)


class TestQuadraticDerivation:
    def test_constant_input_constant_output(self):
        m0 = initial_model()
        cfg = TimeVaryingConfig(slow_steps=10, iters_per_slow_step=1, event_rate=0.0)
        steps = build_birth_death_schedule(np.random.default_rng(1), m0, cfg)
        quads = derive_quadratic_schedule(steps)
        first = quads.schedule[0]
        assert all(m.family == QUADRATIC_CONVEX for m in quads.schedule)
        for m in quads.schedule:
            assert np.array_equal(m.params.delta, first.params.delta)

    def test_boundary_and_coefficients(self):
        m0 = initial_model()
        cfg = TimeVaryingConfig(slow_steps=40, iters_per_slow_step=1, event_rate=0.8)
        steps = build_birth_death_schedule(np.random.default_rng(7), m0, cfg)
        quads = derive_quadratic_schedule(steps)
        for sm, qm in zip(steps.schedule, quads.schedule):
            p = qm.params
            assert np.array_equal(p.delta, sm.params.delta)
            assert np.array_equal(p.t, sm.params.t)
            assert np.array_equal(evaluate_demand(qm, np.zeros(N)), p.u_star + p.delta)
            assert np.array_equal(evaluate_demand(qm, p.t.copy()), p.u_star)
            b = qm.coefficients
            assert np.max(np.abs(b - p.delta / p.t**2)) < 1e-12

    def test_rejects_non_step_schedule(self):
        m0 = initial_model()
        cfg = TimeVaryingConfig(slow_steps=5, iters_per_slow_step=1, event_rate=0.0)
        steps = build_birth_death_schedule(np.random.default_rng(1), m0, cfg)
        quads = derive_quadratic_schedule(steps)
        with pytest.raises(ValueError, match="step-family"):
            derive_quadratic_schedule(quads)


class TestLoadSeries:
    def _setup(self, case3):
        q = np.zeros(2)
        thresholds = np.array([0.5, 0.7])

        def inflate(rng, base, sens):
            return 0.4 * base

        return q, thresholds, inflate

    def test_alpha_validation(self, case3):
        q, t, inflate = self._setup(case3)
        table = np.full((10, 2), 0.05)
        with pytest.raises(ValueError, match="alpha"):
            build_load_series_schedule(np.random.default_rng(0), case3, table,
                                       0.0, t, q, inflate,
                                       TimeVaryingConfig(slow_steps=10, iters_per_slow_step=1))

    def test_alpha_one_tracks_table(self, case3):
        q, t, inflate = self._setup(case3)
        rng = np.random.default_rng(0)
        table = np.abs(rng.uniform(0.02, 0.08, (12, 2)))
        tv = build_load_series_schedule(rng, case3, table, 1.0, t, q, inflate,
                                        TimeVaryingConfig(slow_steps=12, iters_per_slow_step=1))
        for k in range(12):
            assert np.allclose(tv.setpoints[k], table[k])

    def test_blend_recursion(self, case3):
        q, t, inflate = self._setup(case3)
        rng = np.random.default_rng(0)
        table = np.abs(rng.uniform(0.02, 0.08, (8, 2)))
        tv = build_load_series_schedule(rng, case3, table, 0.5, t, q, inflate,
                                        TimeVaryingConfig(slow_steps=8, iters_per_slow_step=1))
        base = table[0].copy()
        for k in range(1, 8):
            base = 0.5 * base + 0.5 * table[k]
            assert np.allclose(tv.setpoints[k], base)

    def test_constant_table_geometric_convergence(self, case3):
        q, t, inflate = self._setup(case3)
        row = np.array([0.08, 0.02])
        table = np.vstack([np.array([0.02, 0.08])] + [row] * 19)
        tv = build_load_series_schedule(np.random.default_rng(0), case3, table,
                                        0.5, t, q, inflate,
                                        TimeVaryingConfig(slow_steps=20, iters_per_slow_step=1))
        errs = [np.max(np.abs(sp - row)) for sp in tv.setpoints]
        for a, b in zip(errs[1:], errs[2:]):
            assert b <= 0.5 * a + 1e-15

    def test_sensitivity_refreshed(self, case3):
        q, t, inflate = self._setup(case3)
        rng = np.random.default_rng(0)
        table = np.abs(rng.uniform(0.02, 0.3, (6, 2)))
        tv = build_load_series_schedule(rng, case3, table, 1.0, t, q, inflate,
                                        TimeVaryingConfig(slow_steps=6, iters_per_slow_step=1))
        assert tv.sensitivities is not None
        for k, sens in enumerate(tv.sensitivities):
            expect = compute_sensitivity(case3, OperatingPoint(p=-table[k], q=-q))
            assert np.allclose(sens.v_tilde, expect.v_tilde)

    def test_short_table_rejected(self, case3):
        q, t, inflate = self._setup(case3)
        with pytest.raises(ValueError, match="rows"):
            build_load_series_schedule(np.random.default_rng(0), case3,
                                       np.full((3, 2), 0.05), 0.5, t, q, inflate,
                                       TimeVaryingConfig(slow_steps=10, iters_per_slow_step=1))


class TestScenarioSerialization:
    def test_round_trip_step_schedule(self, tmp_path):
        from incentflow.dynamics import load_scenario, save_scenario
        from incentflow.response import model_to_dict

        m0 = initial_model()
        cfg = TimeVaryingConfig(slow_steps=12, iters_per_slow_step=5, event_rate=0.8)
        tv = build_birth_death_schedule(np.random.default_rng(2), m0, cfg)
        path = tmp_path / "schedule.json"
        save_scenario(tv, path)
        again = load_scenario(path)
        assert again.slow_steps == tv.slow_steps
        assert again.iters_per_slow_step == tv.iters_per_slow_step
        assert all(model_to_dict(a) == model_to_dict(b)
                   for a, b in zip(tv.schedule, again.schedule))
        for a, b in zip(tv.setpoints, again.setpoints):
            assert np.array_equal(a, b)

    def test_round_trip_with_sensitivities(self, case3, tmp_path):
        from incentflow.dynamics import load_scenario, save_scenario

        q = np.zeros(2)
        t = np.array([0.5, 0.7])
        table = np.abs(np.random.default_rng(0).uniform(0.02, 0.08, (5, 2)))
        tv = build_load_series_schedule(
            np.random.default_rng(0), case3, table, 1.0, t, q,
            lambda rng, base, sens: 0.4 * base,
            TimeVaryingConfig(slow_steps=5, iters_per_slow_step=2))
        path = tmp_path / "schedule.json"
        save_scenario(tv, path)
        again = load_scenario(path)
        assert again.sensitivities is not None
        for a, b in zip(tv.sensitivities, again.sensitivities):
            assert np.allclose(a.R, b.R)
            assert np.allclose(a.v_tilde, b.v_tilde)


class TestScenarioInvariants:
    def test_schedule_length_enforced(self):
        m0 = initial_model()
        with pytest.raises(ValueError, match="per slow step"):
            TimeVaryingScenario(slow_steps=3, iters_per_slow_step=1, event_rate=0.0,
                                schedule=(m0,), setpoints=(m0.params.u_star,))

    def test_total_iterations(self):
        m0 = initial_model()
        cfg = TimeVaryingConfig(slow_steps=7, iters_per_slow_step=13, event_rate=0.0)
        tv = build_birth_death_schedule(np.random.default_rng(0), m0, cfg)
        assert tv.total_iterations == 91
