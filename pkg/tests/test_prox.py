import numpy as np
import pytest

from facalloc.model import (
    Box,
    CustomCost,
    CustomUtility,
    LinearCost,
    LogRateComposedUtility,
    NonnegCap,
    ParameterError,
    PathImage,
    PiecewiseLinearCost,
    QuadraticCost,
    QuadraticLatencyUtility,
    ScaledSimplex,
    UnsupportedError,
    ZeroUtility,
)
from facalloc.prox import (
    brute_force_minimize,
    minimize_linear_tilt,
    project_scaled_simplex,
    prox_facility,
    prox_user,
)


class TestProjectScaledSimplex:
    def test_already_feasible(self):
        assert np.allclose(project_scaled_simplex([1.0, 1.0], 2.0), [1.0, 1.0])

    def test_threshold_case(self):
        # shifting (3,1) down by 1 and clipping gives (2,0)
        assert np.allclose(project_scaled_simplex([3.0, 1.0], 2.0), [2.0, 0.0])

    def test_uniform_shift(self):
        assert np.allclose(project_scaled_simplex([-1.0, -1.0], 2.0), [1.0, 1.0])

    def test_requires_positive_total(self):
        with pytest.raises(ParameterError):
            project_scaled_simplex([1.0], 0.0)

    def test_sum_and_nonnegativity_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n = rng.integers(1, 8)
            v = rng.normal(0, 10, n)
            t = rng.uniform(0.1, 5.0)
            x = project_scaled_simplex(v, t)
            assert np.all(x >= 0)
            assert x.sum() == pytest.approx(t, abs=1e-12)

    def test_matches_grid_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            v = rng.uniform(-2, 2, 2)
            t = rng.uniform(0.5, 2.0)
            x = project_scaled_simplex(v, t)
            grid_x, _ = brute_force_minimize(
                lambda p: float(np.dot(p - v, p - v)),
                ScaledSimplex(t, 2), step=1e-3)
            assert np.max(np.abs(x - grid_x)) <= 1e-3 + 1e-9


class TestProxUser:
    def test_zero_utility_is_projection_all_set_kinds(self):
        rng = np.random.default_rng(2)
        sets = [ScaledSimplex(2.0, 3), Box([-1.0, 0.0, 0.0], [1.0, 2.0, 0.5]),
                NonnegCap([1.0, 1.0, 3.0]),
                PathImage(np.array([[1.0, 0], [1, 0], [0, 1.0]]), [4.0, 4.0])]
        for fset in sets:
            for _ in range(20):
                anchor = rng.normal(0, 2, 3)
                res = prox_user(ZeroUtility(), fset, anchor, rho=0.7)
                assert np.allclose(res.minimizer, fset.project(anchor), atol=1e-12)

    def test_zero_utility_simplex_example(self):
        res = prox_user(ZeroUtility(), ScaledSimplex(2.0, 2), [3.0, 1.0], 1.0)
        assert np.allclose(res.minimizer, [2.0, 0.0])

    def test_anchor_inside_box_is_fixed_point(self):
        fset = Box([0.0, 0.0], [2.0, 2.0])
        anchor = np.array([0.5, 1.5])
        res = prox_user(ZeroUtility(), fset, anchor, 3.0)
        assert np.allclose(res.minimizer, anchor)

    def test_quadratic_latency_matches_grid(self):
        util = QuadraticLatencyUtility(1.0, 1.0, [0.1, 0.2])
        fset = ScaledSimplex(1.0, 2)
        anchor = np.array([0.5, 0.5])
        res = prox_user(util, fset, anchor, rho=1.0)

        def objective(p):
            return -util.value(p) + 0.5 * float(np.dot(p - anchor, p - anchor))

        grid_x, _ = brute_force_minimize(objective, fset, step=1e-4)
        assert np.max(np.abs(res.minimizer - grid_x)) <= 1e-3

    def test_rejects_bad_rho(self):
        with pytest.raises(ParameterError):
            prox_user(ZeroUtility(), Box([0.0], [1.0]), [0.5], 0.0)

    def test_nonexpansiveness_random_pairs(self):
        rng = np.random.default_rng(3)
        util = QuadraticLatencyUtility(1.5, 2.0, [0.3, 0.1, 0.2])
        fset = ScaledSimplex(2.0, 3)
        for _ in range(40):
            a = rng.normal(0, 2, 3)
            b = rng.normal(0, 2, 3)
            pa = prox_user(util, fset, a, 0.9).minimizer
            pb = prox_user(util, fset, b, 0.9).minimizer
            assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-8

    def test_kkt_fixed_point_residual(self):
        rng = np.random.default_rng(4)
        cases = [
            (QuadraticLatencyUtility(2.0, 1.0, [0.1, 0.3]), ScaledSimplex(1.0, 2)),
            (QuadraticLatencyUtility(0.5, 2.0, [0.2, 0.1]), Box([0.0, 0.0], [1.5, 1.5])),
            (LogRateComposedUtility([[1.0, 0.0]], [2.0]), NonnegCap([2.0, 2.0])),
        ]
        for util, fset in cases:
            for _ in range(10):
                anchor = rng.normal(0.5, 1.0, 2)
                rho = rng.uniform(0.5, 2.0)
                x = prox_user(util, fset, anchor, rho).minimizer
                grad = -util.gradient(x) + rho * (x - anchor)
                lip = rho + util.curvature_bound()
                residual = np.max(np.abs(fset.project(x - grad / lip) - x))
                assert residual <= 1e-8

    def test_path_image_prox_stays_in_set_and_beats_grid(self):
        incidence = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        linv = np.array([[0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
        util = LogRateComposedUtility(linv, [2.0, 1.0])
        pset = PathImage(incidence, [3.0, 3.0])
        anchor = np.array([1.0, 0.5, 2.0])
        res = prox_user(util, pset, anchor, rho=1.0)
        x = res.minimizer
        assert pset.distance_inf(x) <= 1e-8

        # grid search over path coordinates as the independent check
        def objective_w(w):
            p = incidence @ w
            return -util.value(p) + 0.5 * float(np.dot(p - anchor, p - anchor))

        grid_w, grid_val = brute_force_minimize(
            objective_w, Box([0.0, 0.0], [3.0, 3.0]), step=5e-3)
        own_val = objective_w(linv @ x)
        assert own_val <= grid_val + 1e-6

    def test_custom_utility_with_gradient(self):
        util = CustomUtility(lambda x: -float(np.dot(x - 1.0, x - 1.0)),
                             lambda x: -2.0 * (x - 1.0), curvature=2.0)
        fset = Box([0.0, 0.0], [2.0, 2.0])
        anchor = np.array([0.0, 0.0])
        res = prox_user(util, fset, anchor, rho=2.0)
        # minimize (x-1)^2 + (x-0)^2 per coordinate -> x = 0.5
        assert np.allclose(res.minimizer, [0.5, 0.5], atol=1e-8)


class TestProxFacility:
    def test_linear_stationary_point(self):
        res = prox_facility(LinearCost(2.0), (0.0, 10.0), anchor=5.0, weight=1.0)
        assert res.minimizer == pytest.approx(3.0, abs=1e-12)

    def test_zero_slope_is_projection(self):
        res = prox_facility(LinearCost(0.0), (0.0, 10.0), anchor=12.0, weight=1.0)
        assert res.minimizer == 10.0
        res = prox_facility(LinearCost(0.0), (0.0, 10.0), anchor=4.0, weight=1.0)
        assert res.minimizer == 4.0

    def test_steep_slope_clips_to_boundary(self):
        res = prox_facility(LinearCost(100.0), (0.0, 10.0), anchor=1.0, weight=1.0)
        assert res.minimizer == 0.0

    def test_quadratic_closed_form(self):
        # minimize a y^2 + b y + (w/2)(y-anchor)^2
        res = prox_facility(QuadraticCost(1.0, 0.0), (0.0, 10.0), 3.0, 2.0)
        assert res.minimizer == pytest.approx(2.0 * 3.0 / 4.0, abs=1e-12)

    def test_matches_grid_oracle_various_kinds(self):
        rng = np.random.default_rng(5)
        costs = [LinearCost(2.0), QuadraticCost(0.7, 0.3),
                 PiecewiseLinearCost([1.0, 2.5], [0.2, 1.0, 3.0]),
                 CustomCost(lambda y: (y - 1.0) ** 4, lambda y: 4 * (y - 1.0) ** 3)]
        for cost in costs:
            for _ in range(15):
                anchor = rng.uniform(-2, 6)
                weight = rng.uniform(0.3, 3.0)
                res = prox_facility(cost, (0.0, 5.0), anchor, weight)

                def objective(y):
                    return cost.value(y) + 0.5 * weight * (y - anchor) ** 2

                grid_y, _ = brute_force_minimize(objective, (0.0, 5.0), 1e-4)
                assert abs(res.minimizer - grid_y) <= 1e-4 + 1e-9

    def test_piecewise_breakpoint_can_be_the_minimizer(self):
        cost = PiecewiseLinearCost([2.0], [0.0, 10.0])
        # derivative jumps from 0 to 10 at y=2; anchor above 2 still lands on 2
        res = prox_facility(cost, (0.0, 5.0), anchor=4.0, weight=1.0)
        assert res.minimizer == pytest.approx(2.0, abs=1e-12)

    def test_custom_bisection_tolerance(self):
        cost = CustomCost(lambda y: np.cosh(y - 2.0), lambda y: np.sinh(y - 2.0))
        res = prox_facility(cost, (0.0, 10.0), anchor=2.0, weight=1.0)
        assert res.minimizer == pytest.approx(2.0, abs=1e-9)

    def test_rejects_bad_weight(self):
        with pytest.raises(ParameterError):
            prox_facility(LinearCost(1.0), (0.0, 1.0), 0.5, 0.0)

    def test_nonexpansive_in_anchor(self):
        rng = np.random.default_rng(6)
        cost = PiecewiseLinearCost([1.0], [0.5, 2.0])
        for _ in range(100):
            a, b = rng.uniform(-3, 6, 2)
            pa = prox_facility(cost, (0.0, 4.0), a, 1.3).minimizer
            pb = prox_facility(cost, (0.0, 4.0), b, 1.3).minimizer
            assert abs(pa - pb) <= abs(a - b) + 1e-12


class TestBruteForce:
    def test_scalar_parabola(self):
        y, _ = brute_force_minimize(lambda y: (y - 3.0) ** 2, (0.0, 10.0), 1e-3)
        assert y == pytest.approx(3.0, abs=1e-3)

    def test_dimension_cap(self):
        with pytest.raises(UnsupportedError):
            brute_force_minimize(lambda p: 0.0, Box(np.zeros(4), np.ones(4)), 0.5)

    def test_simplex_grid_covers_vertices(self):
        x, _ = brute_force_minimize(lambda p: -p[0], ScaledSimplex(1.0, 3), 0.05)
        assert x[0] == pytest.approx(1.0, abs=1e-12)


class TestMinimizeLinearTilt:
    def test_zero_utility_zero_tilt_projects_origin(self):
        fset = ScaledSimplex(2.0, 2)
        res = minimize_linear_tilt(ZeroUtility(), fset, np.zeros(2), np.array([1.0, 1.0]))
        assert np.allclose(res.minimizer, fset.project(np.zeros(2)))

    def test_linear_objective_picks_cheapest_vertex(self):
        fset = ScaledSimplex(1.0, 3)
        tilt = np.array([2.0, 1.0, 3.0])
        res = minimize_linear_tilt(ZeroUtility(), fset, tilt, np.full(3, 1 / 3))
        assert np.allclose(res.minimizer, [0.0, 1.0, 0.0], atol=1e-9)

    def test_strictly_concave_closed_form(self):
        # minimize a(x-m)^2 + tilt*x on a box: x = m - tilt/(2a)
        util = CustomUtility(lambda x: -2.0 * float(np.dot(x - 3.0, x - 3.0)),
                             lambda x: -4.0 * (x - 3.0), curvature=4.0)
        fset = Box([0.0], [10.0])
        res = minimize_linear_tilt(util, fset, np.array([2.0]), np.array([1.0]))
        assert res.minimizer[0] == pytest.approx(3.0 - 2.0 / 4.0, abs=1e-7)
