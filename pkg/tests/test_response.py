import numpy as np
import pytest

from incentflow.response import (
    FAMILIES,
    LINEAR,
    POLYNOMIAL_CONCAVE,
    POLYNOMIAL_CONVEX,
    QUADRATIC_CONVEX,
    STEP,
    NotDifferentiableError,
    ResponseModel,
    ResponseParams,
    coarse_gradient,
    evaluate,
    evaluate_demand,
    generate_step_model,
    gradient,
    linear_approximation,
    model_from_dict,
    model_to_dict,
)

N = 8


def make_params(rng=None):
    rng = rng or np.random.default_rng(0)
    return ResponseParams(
        u_star=rng.uniform(0.05, 0.4, N),
        delta=rng.uniform(0.01, 0.2, N),
        t=rng.uniform(0.05, 1.0, N),
    )


def all_models(rng=None):
    rng = rng or np.random.default_rng(0)
    p = make_params(rng)
    models = [
        ResponseModel(params=p, family=LINEAR),
        ResponseModel(params=p, family=QUADRATIC_CONVEX),
        ResponseModel(params=p, family=POLYNOMIAL_CONVEX, exponent=6),
        ResponseModel(params=p, family=POLYNOMIAL_CONCAVE, exponent=4),
        generate_step_model(rng, p, devices=5),
    ]
    return p, models


def central_difference(model, i, step=None):
    """Finite-difference oracle for the diagonal response Jacobian.

    The probe is scaled per bus so truncation and roundoff stay balanced
    across threshold magnitudes."""
    out = np.empty(model.n)
    for j in range(model.n):
        h = step if step is not None else 1e-6 * model.params.t[j]
        hi = i.copy()
        lo = i.copy()
        hi[j] += h
        lo[j] -= h
        out[j] = (evaluate_demand(model, hi)[j] - evaluate_demand(model, lo)[j]) / (2 * h)
    return out


class TestBoundaries:
    def test_anchors_exact_every_family(self):
        p, models = all_models()
        for m in models:
            assert np.array_equal(evaluate_demand(m, np.zeros(N)), p.u_star + p.delta), m.family
            assert np.array_equal(evaluate_demand(m, p.t.copy()), p.u_star), m.family

    def test_midpoints(self):
        p, _ = all_models()
        lin = ResponseModel(params=p, family=LINEAR)
        quad = ResponseModel(params=p, family=QUADRATIC_CONVEX)
        assert np.allclose(evaluate_demand(lin, p.t / 2), p.u_star + p.delta / 2, atol=1e-15)
        assert np.allclose(evaluate_demand(quad, p.t / 2), p.u_star + p.delta / 4, atol=1e-15)

    def test_operating_point_negates_demand(self):
        p, models = all_models()
        op = evaluate(models[0], np.zeros(N), q_demand=np.full(N, 0.1))
        assert np.array_equal(op.p, -(p.u_star + p.delta))
        assert np.all(op.q == -0.1)


class TestMonotonicityAndClamping:
    def test_monotone_in_every_coordinate(self):
        rng = np.random.default_rng(42)
        p, models = all_models(rng)
        for m in models:
            for _ in range(200):
                i2 = rng.uniform(0, 1.5 * p.t.max(), N)
                i1 = i2 + rng.uniform(0, 0.5, N)
                d1 = evaluate_demand(m, i1)
                d2 = evaluate_demand(m, i2)
                assert np.all(d1 <= d2 + 1e-12), m.family

    def test_clamped_beyond_threshold(self):
        p, models = all_models()
        for m in models:
            big = p.t * 3.0
            assert np.array_equal(evaluate_demand(m, big), evaluate_demand(m, p.t.copy()))

    def test_negative_incentive_rejected(self):
        _, models = all_models()
        with pytest.raises(ValueError, match="non-negative"):
            evaluate_demand(models[0], np.full(N, -0.1))

    def test_separability(self):
        rng = np.random.default_rng(3)
        p, models = all_models(rng)
        for m in models:
            base = rng.uniform(0, p.t, N)
            d0 = evaluate_demand(m, base)
            for j in range(N):
                bumped = base.copy()
                bumped[j] = min(bumped[j] + 0.05 * p.t[j], p.t[j])
                d1 = evaluate_demand(m, bumped)
                changed = np.nonzero(d1 != d0)[0]
                assert set(changed) <= {j}


class TestGradients:
    def test_linear_constant_inside(self):
        p, _ = all_models()
        m = ResponseModel(params=p, family=LINEAR)
        for frac in (0.0, 0.3, 0.9):
            assert np.allclose(gradient(m, frac * p.t), -p.delta / p.t)

    def test_zero_slope_at_threshold(self):
        p, _ = all_models()
        quad = ResponseModel(params=p, family=QUADRATIC_CONVEX)
        assert np.array_equal(gradient(quad, p.t.copy()), np.zeros(N))
        lin = ResponseModel(params=p, family=LINEAR)
        assert np.array_equal(gradient(lin, 2 * p.t), np.zeros(N))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        p, models = all_models(rng)
        for m in models:
            if m.family == STEP:
                continue
            for _ in range(100):
                i = rng.uniform(0.05, 0.9, N) * p.t
                g = gradient(m, i)
                fd = central_difference(m, i)
                scale = np.maximum(np.abs(fd), 1e-7)
                assert np.max(np.abs(g - fd) / scale) < 1e-4, m.family

    def test_quadratic_at_zero_fd(self):
        p, _ = all_models()
        m = ResponseModel(params=p, family=QUADRATIC_CONVEX)
        fd = central_difference(m, np.zeros(N) + 1e-5)
        g = gradient(m, np.zeros(N) + 1e-5)
        assert np.max(np.abs(g - fd) / np.abs(fd)) < 1e-4

    def test_step_not_differentiable(self):
        rng = np.random.default_rng(1)
        p = make_params(rng)
        m = generate_step_model(rng, p, devices=3)
        with pytest.raises(NotDifferentiableError):
            gradient(m, np.zeros(N))


class TestLinearApproximation:
    def test_idempotent(self):
        p, _ = all_models()
        m = ResponseModel(params=p, family=LINEAR)
        assert model_to_dict(linear_approximation(m)) == model_to_dict(m)

    def test_shares_anchors(self):
        p, models = all_models()
        for m in models:
            lin = linear_approximation(m)
            assert np.array_equal(evaluate_demand(lin, np.zeros(N)),
                                  evaluate_demand(m, np.zeros(N)))
            assert np.array_equal(evaluate_demand(lin, p.t.copy()),
                                  evaluate_demand(m, p.t.copy()))

    def test_never_exceeds_step_peak(self):
        rng = np.random.default_rng(5)
        p = make_params(rng)
        m = generate_step_model(rng, p, devices=6)
        lin = linear_approximation(m)
        peak = p.u_star + p.delta
        for _ in range(1000):
            i = rng.uniform(0, p.t, N)
            d = evaluate_demand(lin, i)
            assert np.all(d <= peak + 1e-12)
            assert np.all(d >= p.u_star - 1e-12)


class TestCoarseGradient:
    def test_exact_estimate_matches_linear(self):
        p, _ = all_models()
        lin = ResponseModel(params=p, family=LINEAR)
        assert np.allclose(coarse_gradient(p, p.t), gradient(lin, p.t / 2))

    def test_uniform_estimate(self):
        p, _ = all_models()
        x = p.t.min() / 100
        g = coarse_gradient(p, x)
        assert np.allclose(g, -p.delta / x)

    def test_nonpositive_estimate_rejected(self):
        p, _ = all_models()
        with pytest.raises(ValueError, match="positive"):
            coarse_gradient(p, 0.0)


class TestStepGeneration:
    def test_minimal_construction(self):
        rng = np.random.default_rng(2)
        p = make_params(rng)
        m = generate_step_model(rng, p, devices=2)
        assert m.devices == 2
        for j, bus in enumerate(m.breakpoints):
            assert len(bus) == 2
            assert bus[-1] == (pytest.approx(p.t[j]), pytest.approx(p.u_star[j]))
            assert 0 < bus[0][0] < p.t[j]

    def test_anchors_any_seed(self):
        p = make_params()
        for seed in range(5):
            m = generate_step_model(np.random.default_rng(seed), p, devices=7)
            assert np.array_equal(evaluate_demand(m, np.zeros(N)), p.u_star + p.delta)
            assert np.array_equal(evaluate_demand(m, p.t.copy()), p.u_star)

    def test_deterministic_from_seed(self):
        p = make_params()
        m1 = generate_step_model(np.random.default_rng(77), p, devices=5)
        m2 = generate_step_model(np.random.default_rng(77), p, devices=5)
        assert m1.breakpoints == m2.breakpoints
        assert model_to_dict(m1) == model_to_dict(m2)

    def test_right_continuous_at_breakpoints(self):
        rng = np.random.default_rng(8)
        p = make_params(rng)
        m = generate_step_model(rng, p, devices=4)
        for j, bus in enumerate(m.breakpoints):
            for inc, lvl in bus:
                at = np.zeros(N)
                at[j] = inc
                assert evaluate_demand(m, at)[j] == pytest.approx(lvl)

    def test_too_few_devices_rejected(self):
        p = make_params()
        with pytest.raises(ValueError, match="2 devices"):
            generate_step_model(np.random.default_rng(0), p, devices=1)


class TestSerialization:
    def test_round_trip_all_families(self):
        _, models = all_models()
        for m in models:
            again = model_from_dict(model_to_dict(m))
            assert model_to_dict(again) == model_to_dict(m)

    def test_family_set_documented(self):
        assert set(FAMILIES) == {LINEAR, QUADRATIC_CONVEX, POLYNOMIAL_CONVEX,
                                 POLYNOMIAL_CONCAVE, STEP}
