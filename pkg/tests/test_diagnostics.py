import numpy as np
import pytest

from facalloc.algorithms import (
    ADMM1,
    SolverConfig,
    SolverState,
    init_state,
    run,
    solve_reference,
)
from facalloc.diagnostics import (
    GEOMETRIC,
    SUBLINEAR,
    IterationTrace,
    TraceRow,
    compute_dk,
    compute_primal_residual,
    compute_vk,
    fit_rate,
)
from facalloc.model import DomainError, ParameterError
from facalloc.problems import replicate_instance

from helpers import normalized_glb


def make_state(x, u, v_prev, k=0, dual_kind="scaled"):
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    return SolverState(x=x, y=np.zeros(n), u=np.asarray(u, dtype=float),
                       d=np.zeros(n), k=k, prev_x=x.copy(),
                       v_prev=np.asarray(v_prev, dtype=float),
                       dual_kind=dual_kind)


class TestComputeDk:
    def test_stationary_states_give_zero(self):
        s = make_state([[1.0, 2.0]], [0.5, 0.5], [0.5, 0.5])
        assert compute_dk(s, s) == 0.0

    def test_unit_steps_sum_to_two(self):
        # single user: z step (1, 0) and v step (0, 1) give 1 + 1 = 2
        s0 = make_state([[0.0, 0.0]], [0.0, 0.0], [0.0, 0.0])
        s1 = make_state([[1.0, 1.0]], [0.0, 1.0], [0.0, 0.0], k=1)
        assert np.allclose(s1.z, [[1.0, 0.0]])
        assert np.allclose(s1.v, [0.0, 1.0])
        assert compute_dk(s0, s1) == pytest.approx(2.0)

    def test_rejects_unscaled_states(self):
        s = make_state([[0.0]], [0.0], [0.0], dual_kind="unscaled")
        with pytest.raises(DomainError):
            compute_dk(s, s)

    def test_non_increasing_along_glb_run(self):
        inst = normalized_glb(30, 8, 3)
        res = run(ADMM1, inst, SolverConfig(rho=0.1, max_iters=300,
                                            stop_threshold=0.0))
        dks = res.trace.column("Dk")
        assert np.all(np.diff(dks) <= 1e-12)

    def test_scales_linearly_with_replication(self):
        inst = normalized_glb(31, 6, 3)
        cfg = SolverConfig(rho=0.1, max_iters=40, stop_threshold=0.0)
        base = run(ADMM1, inst, cfg).trace.column("Dk")
        m = 4
        rep = run(ADMM1, replicate_instance(inst, m), cfg).trace.column("Dk")
        rel = np.abs(rep / (m * base) - 1.0)
        assert rel.max() <= 1e-6


class TestComputeVk:
    def test_zero_at_the_reference_itself(self):
        inst = normalized_glb(32, 6, 3)
        ref = solve_reference(inst, SolverConfig(rho=0.1, max_iters=20000,
                                                 stop_threshold=1e-16))
        assert ref.confident
        state = make_state(ref.x_star + (ref.v_star - ref.v_star),
                           inst.n_users * ref.v_star, ref.v_star)
        # state.z equals x + v_prev - v = z_star and v equals v_star
        assert compute_vk(state, ref) <= 1e-18

    def test_decreases_to_zero_along_convergent_run(self):
        inst = normalized_glb(32, 6, 3)
        cfg = SolverConfig(rho=0.1, max_iters=20000, stop_threshold=1e-16)
        ref = solve_reference(inst, cfg)
        res = run(ADMM1, inst, SolverConfig(rho=0.1, max_iters=3000,
                                            stop_threshold=1e-16),
                  reference=ref)
        vks = res.trace.column("Vk")
        assert vks[-1] <= 1e-10 * vks[0]

    def test_sublinear_bound_holds(self):
        inst = normalized_glb(33, 8, 3)
        cfg = SolverConfig(rho=0.1, max_iters=4000, stop_threshold=1e-14)
        ref = solve_reference(inst, cfg)
        assert ref.confident
        res = run(ADMM1, inst, cfg, reference=ref)
        assert res.v0 is not None
        ks = res.trace.column("iter")
        dks = res.trace.column("Dk")
        assert np.all(dks <= res.v0 / (ks + 1.0) + 1e-9)


class TestPrimalResidual:
    def test_zero_at_start_without_clipping(self):
        # generous capacities: no clipping, so v_prev = v and residual is 0
        inst = normalized_glb(34, 6, 3, capacity_ratio=3.0)
        state = init_state(inst, ADMM1)
        assert np.array_equal(state.v_prev, state.v)
        assert compute_primal_residual(state) == 0.0

    def test_two_forms_agree_at_unit_scale(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.normal(0, 1, (4, 3))
            u = rng.normal(0, 1, 3)
            v_prev = rng.normal(0, 1, 3)
            state = make_state(x, u, v_prev)
            direct = compute_primal_residual(state)
            dv = state.v - state.v_prev
            assert direct == pytest.approx(4 * float(dv @ dv), rel=1e-12)


class TestIterationTrace:
    def row(self, k, vk=None, wall=1.5):
        return TraceRow(k=k, objective=-1.0 * k, dk=10.0 / (k + 1), vk=vk,
                        primal_residual=0.5, coupling_residual=0.25,
                        comm_rounds=2, wall_ms=wall)

    def test_rows_must_strictly_increase(self):
        trace = IterationTrace([self.row(0), self.row(1)])
        with pytest.raises(DomainError):
            trace.append(self.row(1))

    def test_csv_round_trip(self, tmp_path):
        trace = IterationTrace([self.row(0, vk=3.5), self.row(1)])
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        again = IterationTrace.from_csv(path)
        assert len(again) == 2
        assert again.rows[0].vk == 3.5
        assert again.rows[1].vk is None
        assert again.rows[0].objective == trace.rows[0].objective

    def test_header_and_empty_fields(self, tmp_path):
        trace = IterationTrace([self.row(0)])
        text = trace.to_csv_text()
        lines = text.strip().split("\n")
        assert lines[0] == ("iter,objective,Dk,Vk,primal_residual,"
                            "coupling_residual,comm_rounds,wall_ms")
        # missing Vk and (by default) wall_ms serialize as empty fields
        assert lines[1].split(",")[3] == ""
        assert lines[1].split(",")[7] == ""
        timed = trace.to_csv_text(include_timing=True)
        assert timed.strip().split("\n")[1].split(",")[7] == "1.5"

    def test_default_text_is_timing_free_and_reproducible(self):
        a = IterationTrace([self.row(0, wall=1.0), self.row(1, wall=2.0)])
        b = IterationTrace([self.row(0, wall=9.0), self.row(1, wall=8.0)])
        assert a.to_csv_text() == b.to_csv_text()


class TestFitRate:
    def test_recovers_sublinear_model(self):
        ks = np.arange(60)
        series = 7.0 / (ks + 1.0)
        fit = fit_rate(series, (0, 59), SUBLINEAR)
        assert fit.r_squared >= 0.999
        assert fit.constants["c"] == pytest.approx(7.0, rel=1e-9)
        assert fit.constants["p"] == pytest.approx(1.0, abs=1e-9)

    def test_recovers_geometric_model(self):
        ks = np.arange(40)
        series = 5.0 * 2.0 ** (-ks)
        fit = fit_rate(series, (0, 39), GEOMETRIC)
        assert fit.constants["a"] == pytest.approx(2.0, abs=1e-6)
        assert fit.r_squared >= 0.999999

    def test_geometric_data_prefers_geometric_fit(self):
        ks = np.arange(50)
        series = 3.0 * 1.3 ** (-ks)
        geo = fit_rate(series, (0, 49), GEOMETRIC)
        sub = fit_rate(series, (0, 49), SUBLINEAR)
        assert geo.r_squared > sub.r_squared

    def test_strictly_convex_cost_run_prefers_geometric_fit(self):
        from helpers import linear_utility_quadratic_cost_instance
        inst = linear_utility_quadratic_cost_instance(20)
        cfg = SolverConfig(rho=1.0, max_iters=30000, stop_threshold=1e-16)
        ref = solve_reference(inst, cfg)
        assert ref.confident
        res = run(ADMM1, inst,
                  SolverConfig(rho=1.0, max_iters=400, stop_threshold=1e-12),
                  reference=ref)
        window = (0, len(res.trace) - 1)
        geo = fit_rate(res.trace, window, GEOMETRIC)
        sub = fit_rate(res.trace, window, SUBLINEAR)
        assert geo.r_squared > sub.r_squared
        assert geo.constants["a"] > 1.0

    def test_window_and_positivity_requirements(self):
        series = np.ones(30)
        with pytest.raises(ParameterError):
            fit_rate(series, (0, 99), GEOMETRIC)
        with pytest.raises(DomainError):
            fit_rate(np.arange(30.0) - 5.0, (0, 29), GEOMETRIC)
        with pytest.raises(DomainError):
            fit_rate(series, (0, 5), GEOMETRIC)  # fewer than 10 rows

    def test_reads_vk_column_from_trace(self):
        rows = [TraceRow(k=k, objective=0.0, dk=1.0, vk=4.0 * 0.5 ** k,
                         primal_residual=0.0, coupling_residual=0.0,
                         comm_rounds=2, wall_ms=0.0) for k in range(15)]
        trace = IterationTrace(rows)
        fit = fit_rate(trace, (0, 14), GEOMETRIC)
        assert fit.constants["a"] == pytest.approx(2.0, abs=1e-9)
