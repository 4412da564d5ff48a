"""Objective generators: gradient, metadata, and determinism checks."""

from __future__ import annotations

import numpy as np
import pytest

from csgd_lab.errors import (
    DimensionMismatchError,
    EstimationFailedError,
    InvalidSpecError,
)
from csgd_lab.objectives import (
    ObjectiveSpec,
    build_objective,
    estimate_sgc_constant,
    make_diag_quadratic,
    make_interpolated_regression,
    make_strongly_convex_mix,
)
from csgd_lab.prng import RandomStream


def central_difference_grad(value_fn, x, step_scale=1e-6):
    """Independent gradient oracle: central differences coordinate-wise."""
    h = step_scale * (1.0 + float(np.linalg.norm(x)))
    grad = np.zeros_like(x)
    for j in range(x.size):
        plus = x.copy()
        minus = x.copy()
        plus[j] += h
        minus[j] -= h
        grad[j] = (value_fn(plus) - value_fn(minus)) / (2.0 * h)
    return grad


def fixture_objectives():
    return [
        make_diag_quadratic([0.5, 0.25, 2.0, 1.0]),
        make_interpolated_regression(12, 6, 1.0, seed=8),
        make_interpolated_regression(5, 9, 3.0, seed=9),
        make_strongly_convex_mix(10, 5, 0.1, seed=10),
    ]


class TestDiagQuadratic:
    def test_hand_values(self):
        obj = make_diag_quadratic([1.0])
        x = np.array([3.0])
        assert obj.component_value(0, x) == 9.0
        assert np.array_equal(obj.component_grad(0, x), np.array([6.0]))
        assert obj.full_value(np.array([1.0])) == 1.0

    def test_metadata(self):
        obj = make_diag_quadratic([2.0 ** -(i + 1) for i in range(10)])
        assert obj.l_max == 2.0 * 0.5
        assert obj.strong_convexity[0] == 2.0 * 2.0**-10
        assert np.array_equal(obj.minimizer, np.zeros(10))
        assert obj.optimal_value == 0.0

    def test_symmetric_variant(self):
        obj = make_diag_quadratic([2.0**-5] * 10)
        assert obj.full_value(np.ones(10)) == pytest.approx(10 * 2.0**-5)

    def test_rejects_nonpositive_curvature(self):
        with pytest.raises(InvalidSpecError):
            make_diag_quadratic([1.0, 0.0])
        with pytest.raises(InvalidSpecError):
            make_diag_quadratic([-1.0])


class TestInterpolatedRegression:
    def test_forced_instance(self):
        obj = make_interpolated_regression(
            1, 1, 1.0, seed=0, features=np.array([[2.0]]), minimizer=np.array([1.0])
        )
        # f(x) = (2x - 2)^2
        assert obj.component_value(0, np.array([0.0])) == 4.0
        assert obj.component_grad(0, np.array([1.0]))[0] == 0.0
        assert obj.lipschitz[0] == 8.0

    def test_interpolation_by_construction(self):
        for obj in fixture_objectives():
            x_star = obj.minimizer
            worst = max(
                float(np.linalg.norm(obj.component_grad(i, x_star))) for i in range(obj.n)
            )
            assert worst <= 1e-9

    def test_mu_recorded_zero_even_if_full_rank(self):
        obj = make_interpolated_regression(50, 3, 1.0, seed=11)
        assert np.all(obj.strong_convexity == 0.0)
        assert obj.mu_bar == 0.0

    def test_lipschitz_exact_formula(self):
        obj = make_interpolated_regression(7, 4, 2.0, seed=12)
        for i in range(obj.n):
            assert obj.lipschitz[i] == pytest.approx(
                2.0 * float(obj.features[i] @ obj.features[i]), rel=1e-15
            )


class TestStronglyConvexMix:
    def test_mu_bar_arithmetic(self):
        obj = make_strongly_convex_mix(4, 3, 0.0, seed=1, mu_values=[1.0, 0, 0, 0])
        assert obj.mu_bar == 0.25

    def test_gradients_vanish_at_shared_root(self):
        obj = make_strongly_convex_mix(10, 16, 0.1, seed=7)
        for i in range(obj.n):
            assert np.linalg.norm(obj.component_grad(i, obj.minimizer)) <= 1e-9

    def test_floor_respected(self):
        obj = make_strongly_convex_mix(9, 4, 0.3, seed=2)
        positive = obj.strong_convexity[obj.strong_convexity > 0]
        assert positive.size >= 1
        assert np.all(positive >= 0.3)
        assert obj.mu_bar > 0

    def test_mu_values_validation(self):
        with pytest.raises(InvalidSpecError):
            make_strongly_convex_mix(3, 2, 0.0, seed=0, mu_values=[0.0, 0.0, 0.0])


class TestEvaluation:
    def test_full_is_mean_of_components(self):
        stream = RandomStream(20)
        for obj in fixture_objectives():
            x = stream.normal(obj.dim)
            mean_value = np.mean([obj.component_value(i, x) for i in range(obj.n)])
            mean_grad = np.mean(
                [obj.component_grad(i, x) for i in range(obj.n)], axis=0
            )
            assert obj.full_value(x) == pytest.approx(mean_value, rel=1e-12)
            np.testing.assert_allclose(obj.full_grad(x), mean_grad, rtol=1e-12)

    def test_gradients_match_central_differences(self):
        stream = RandomStream(21)
        for obj in fixture_objectives():
            for _ in range(100):
                i = int(stream.integers(1, obj.n)[0])
                x = stream.normal(obj.dim) * 2.0
                exact = obj.component_grad(i, x)
                approx = central_difference_grad(lambda p: obj.component_value(i, p), x)
                scale = max(1.0, float(np.linalg.norm(exact)))
                assert np.linalg.norm(exact - approx) / scale < 1e-5

    def test_sampled_lipschitz_never_exceeds_metadata(self):
        stream = RandomStream(22)
        for obj in fixture_objectives():
            for _ in range(50):
                i = int(stream.integers(1, obj.n)[0])
                x = stream.normal(obj.dim)
                y = stream.normal(obj.dim)
                gap = np.linalg.norm(obj.component_grad(i, x) - obj.component_grad(i, y))
                assert gap <= obj.lipschitz[i] * np.linalg.norm(x - y) * (1 + 1e-9)

    def test_curvature_metadata_ordering(self):
        for obj in fixture_objectives():
            assert obj.l_max >= np.max(obj.lipschitz) - 1e-15
            assert np.all(obj.strong_convexity <= obj.lipschitz)

    def test_index_and_dimension_errors(self):
        obj = make_interpolated_regression(3, 2, 1.0, seed=1)
        with pytest.raises(IndexError):
            obj.component_value(3, np.zeros(2))
        with pytest.raises((DimensionMismatchError, ValueError)):
            obj.component_grad(0, np.zeros(5))

    def test_mean_component_grad_sq_matches_loop(self):
        stream = RandomStream(23)
        for obj in fixture_objectives():
            x = stream.normal(obj.dim)
            by_loop = np.mean(
                [float(np.sum(obj.component_grad(i, x) ** 2)) for i in range(obj.n)]
            )
            assert obj.mean_component_grad_sq(x) == pytest.approx(by_loop, rel=1e-10)


class TestTracker:
    def test_tracker_tracks_sparse_updates(self):
        stream = RandomStream(24)
        for obj in fixture_objectives():
            x = stream.normal(obj.dim)
            tracker = obj.loss_tracker(x)
            for _ in range(60):
                k = min(3, obj.dim)
                idx = np.unique(stream.integers(k, obj.dim))
                delta = stream.normal(idx.size) * 0.1
                tracker.apply(idx, delta)
                full = np.zeros(obj.dim)
                full[idx] = delta
                x = x - full
                assert tracker.value() == pytest.approx(obj.full_value(x), rel=1e-9, abs=1e-12)


class TestDeterminism:
    @pytest.mark.parametrize(
        "spec",
        [
            ObjectiveSpec(kind="diag_quadratic", pow2_count=10),
            ObjectiveSpec(kind="interpolated_regression", n=20, d=8, seed=5),
            ObjectiveSpec(kind="strongly_convex_mix", n=9, d=4, seed=5, mu_floor=0.2),
        ],
    )
    def test_same_spec_bit_identical(self, spec):
        a = build_objective(spec)
        b = build_objective(spec)
        x = RandomStream(30).normal(a.dim)
        assert a.full_value(x) == b.full_value(x)
        assert np.array_equal(a.full_grad(x), b.full_grad(x))
        for i in range(a.n):
            assert a.component_value(i, x) == b.component_value(i, x)

    def test_spec_validation(self):
        with pytest.raises(InvalidSpecError):
            ObjectiveSpec(kind="nope")
        with pytest.raises(InvalidSpecError):
            ObjectiveSpec(kind="diag_quadratic")  # neither curvature source


class TestSgcEstimate:
    def test_single_component_is_one(self):
        obj = make_diag_quadratic([1.0, 2.0])
        assert estimate_sgc_constant(obj, 20, seed=3) == pytest.approx(1.0, rel=1e-12)

    def test_identical_components_give_one(self):
        obj = make_interpolated_regression(
            2, 1, 1.0, seed=0,
            features=np.array([[1.0], [1.0]]), minimizer=np.array([0.0]),
        )
        assert estimate_sgc_constant(obj, 20, seed=4) == pytest.approx(1.0, rel=1e-12)

    def test_at_least_one_by_jensen(self):
        obj = make_strongly_convex_mix(10, 4, 0.1, seed=6)
        # Brute-force the same ratio over a fresh grid of points.
        stream = RandomStream(77)
        brute = 1.0
        for _ in range(50):
            x = stream.normal(obj.dim)
            g = obj.full_grad(x)
            denom = float(g @ g)
            if denom > 1e-24:
                brute = max(brute, obj.mean_component_grad_sq(x) / denom)
        est = estimate_sgc_constant(obj, 50, seed=78)
        assert est >= 1.0 - 1e-12
        assert brute >= 1.0

    def test_all_gradients_vanish_errors(self):
        obj = make_diag_quadratic([1.0])
        with pytest.raises(EstimationFailedError):
            estimate_sgc_constant(obj, 5, seed=1, grad_floor=1e12)
