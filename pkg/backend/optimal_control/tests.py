"""
成本泛函、Pontryagin 求解器与延拓的测试用例
"""

import math

import numpy as np
from django.test import SimpleTestCase
from scipy.integrate import simpson

from epidemic.analysis import boundary_feedback_policy
from epidemic.dynamics import integrate, integrate_feedback
from epidemic.exceptions import BoundViolationError, ParameterError
from epidemic.models import ControlSchedule, EpidemicState, ModelParams, Trajectory
from .continuation import VIOLATION_TOL, _check_violations, horizon_continuation, kappa_continuation
from .cost import (
    check_strict_feasibility, evaluate_cost, moreau_envelope, penalty_psi, penalty_psi_derivative,
    running_cost_l0, strict_cost, tail_bound,
)
from .models import AdjointState, ArcKind, CostParams, Regime, SingularPolicy, SolverConfig
from .pmp import (
    adjoint_rhs, control_from_switching, detect_arcs, detect_singular_arcs, forward_backward_sweep,
    gradient_check, hamiltonian, integrate_adjoint, pointwise_minimality_violations, switching_functions,
)

BASELINE = ModelParams(beta=0.5, sigma=0.2, gamma=0.1, u_max=0.05, h_max=0.2, i_max=0.1)
X0 = EpidemicState(0.90, 0.05, 0.05, 0.0)
COSTS = CostParams(c_h=1.0, c_nh=1.0, c_v=0.5, delta=0.05, kappa=100.0)
FAST = SolverConfig(dt=0.1, conv_tol=1e-4)


def constant_run(u, h, horizon, dt=0.01, params=BASELINE, x0=X0):
    schedule = ControlSchedule.constant(params, horizon, 1.0, u, h)
    return integrate(x0, schedule, params, horizon, dt)


class RunningCostTest(SimpleTestCase):
    """测试运行成本与罚项"""

    def test_running_cost(self):
        unit = CostParams(c_h=1.0, c_nh=1.0, c_v=1.0, delta=0.05)
        self.assertEqual(running_cost_l0(EpidemicState(0.0, 0.0, 0.0, 1.0), 0.05, 0.2, unit), 0.0)
        self.assertAlmostEqual(running_cost_l0(X0, 0.05, 0.2, unit), 0.105, places=15)
        weighted = CostParams(c_h=1.0, c_nh=2.0, c_v=1.0, delta=0.05)
        self.assertAlmostEqual(running_cost_l0(EpidemicState(0.8, 0.1, 0.1, 0.0), 0.0, 0.0, weighted), 0.2)

    def test_penalty(self):
        self.assertEqual(penalty_psi(0.05, 0.10), 0.0)
        self.assertAlmostEqual(penalty_psi(0.15, 0.10), 0.0025, places=15)
        self.assertEqual(penalty_psi(0.10, 0.10), 0.0)
        self.assertEqual(penalty_psi_derivative(0.10, 0.10), 0.0)
        self.assertAlmostEqual(penalty_psi_derivative(0.15, 0.10), 0.1, places=15)

    def test_moreau_envelope(self):
        """ε = 1/(2κ) 时 Moreau 包络与 κψ 一致，且投影确实是最小点"""
        grid = np.linspace(0.0, 1.0, 201)
        candidates = np.linspace(-1.0, 0.1, 22001)
        for kappa in (1.0, 10.0, 1000.0):
            epsilon = 1.0 / (2.0 * kappa)
            envelope = moreau_envelope(grid, 0.1, epsilon)
            expected = kappa * np.array([penalty_psi(i, 0.1) for i in grid])
            np.testing.assert_allclose(envelope, expected, rtol=0, atol=1e-12)
            for i, value in zip(grid[::20], envelope[::20]):
                brute = np.min(np.square(i - candidates) / (2.0 * epsilon))
                self.assertGreaterEqual(brute, value - 1e-12)

    def test_moreau_envelope_rejects_bad_epsilon(self):
        with self.assertRaises(ValueError):
            moreau_envelope(0.2, 0.1, 0.0)


class EvaluateCostTest(SimpleTestCase):
    """测试贴现成本的求积"""

    def test_disease_free_trajectory(self):
        x0 = EpidemicState(0.9, 0.0, 0.0, 0.1)
        cost = evaluate_cost(constant_run(0.0, 0.0, 50, dt=0.1, x0=x0), COSTS, 0.1)
        self.assertEqual(cost.total, 0.0)
        self.assertTrue(cost.feasible_strict)

    def test_constant_density_closed_form(self):
        times = np.linspace(0.0, 100.0, 10001)
        states = np.tile([0.9, 0.05, 0.05, 0.0], (len(times), 1))
        trajectory = Trajectory(times, states, np.zeros(len(times)), np.zeros(len(times)))
        cp = CostParams(c_h=0.0, c_nh=1.0, c_v=0.0, delta=0.05)
        cost = evaluate_cost(trajectory, cp, 0.1)
        expected = 0.05 * (1.0 - math.exp(-0.05 * 100.0)) / 0.05
        self.assertLess(abs(cost.total - expected) / expected, 1e-6)

    def test_matches_fine_grid_simpson(self):
        cp = CostParams(c_h=1.0, c_nh=1.0, c_v=1.0, delta=0.05)
        cost = evaluate_cost(constant_run(0.05, 0.2, 200), cp, 0.1, BASELINE)
        fine = constant_run(0.05, 0.2, 200, dt=0.001)
        density = (0.2 * fine.i + fine.i + 0.05 * fine.s) * np.exp(-0.05 * fine.times)
        oracle = simpson(density, x=fine.times)
        self.assertGreater(cost.total, 0.0)
        self.assertLess(abs(cost.total - oracle) / oracle, 1e-6)

    def test_components_add_up(self):
        cost = evaluate_cost(constant_run(0.02, 0.1, 100, dt=0.05), COSTS, 0.1, BASELINE)
        parts = cost.suppression_part + cost.infection_part + cost.vaccination_part + cost.penalty_part
        self.assertLessEqual(abs(cost.total - parts), 1e-10 * cost.total)
        self.assertGreater(cost.max_violation, 0.0)
        self.assertGreater(cost.penalty_part, 0.0)

    def test_penalty_vanishes_without_violation(self):
        cost = evaluate_cost(constant_run(0.05, 0.2, 100, dt=0.05), COSTS, 0.2, BASELINE)
        self.assertEqual(cost.max_violation, 0.0)
        self.assertEqual(cost.penalty_part, 0.0)

    def test_monotone_in_kappa(self):
        trajectory = constant_run(0.0, 0.0, 100, dt=0.05)
        totals = [evaluate_cost(trajectory, COSTS.replace(kappa=k), 0.1).total for k in (0.0, 1.0, 10.0, 100.0)]
        self.assertTrue(all(b > a for a, b in zip(totals, totals[1:])))
        feasible = constant_run(0.05, 0.2, 100, dt=0.05)
        flat = [evaluate_cost(feasible, COSTS.replace(kappa=k), 0.2).total for k in (0.0, 100.0)]
        self.assertEqual(flat[0], flat[1])

    def test_discount_consistency(self):
        trajectory = constant_run(0.02, 0.1, 100, dt=0.05)
        slow = evaluate_cost(trajectory, COSTS, 0.1).total
        fast = evaluate_cost(trajectory, COSTS.replace(delta=0.1), 0.1).total
        self.assertLessEqual(fast, slow)

    def test_tail_bound(self):
        cost = evaluate_cost(constant_run(0.0, 0.0, 100, dt=0.1), COSTS, 0.1, BASELINE)
        constant = 1.0 * 0.2 + 1.0 + 0.5 * 0.05 + 100.0 * 0.9 ** 2
        self.assertAlmostEqual(cost.tail_bound, constant * math.exp(-5.0) / 0.05, places=10)
        self.assertAlmostEqual(tail_bound(COSTS, 400.0, 0.05, 0.2, 0.1), constant * math.exp(-20.0) / 0.05)


class StrictFeasibilityTest(SimpleTestCase):
    """测试硬约束可行性"""

    def test_no_intervention_is_infeasible(self):
        feasible, violation = check_strict_feasibility(constant_run(0.0, 0.0, 200), 0.10)
        self.assertFalse(feasible)
        self.assertAlmostEqual(violation, 0.22, delta=0.01)
        self.assertEqual(strict_cost(constant_run(0.0, 0.0, 200), COSTS, 0.10), math.inf)

    def test_controlled_run_is_feasible_under_loose_capacity(self):
        trajectory = constant_run(0.05, 0.2, 200)
        feasible, violation = check_strict_feasibility(trajectory, 0.15)
        self.assertTrue(feasible)
        self.assertEqual(violation, 0.0)
        self.assertAlmostEqual(strict_cost(trajectory, COSTS, 0.15),
                               evaluate_cost(trajectory, COSTS.replace(kappa=0.0), 0.15).total)

    def test_nearly_vacuous_capacity(self):
        feasible, violation = check_strict_feasibility(constant_run(0.0, 0.0, 200), 0.999)
        self.assertTrue(feasible)
        self.assertEqual(violation, 0.0)


class AdjointTest(SimpleTestCase):
    """测试伴随方程"""

    def test_adjoint_rhs_examples(self):
        zero = AdjointState(0.0, 0.0, 0.0)
        infection_only = CostParams(c_h=0.0, c_nh=1.0, c_v=0.0, delta=0.05)
        np.testing.assert_allclose(adjoint_rhs(0.0, zero, X0, 0.0, 0.0, BASELINE, infection_only), [0.0, 0.0, -1.0])

        tied = AdjointState(0.3, 2.0, 2.0)
        self.assertEqual(adjoint_rhs(5.0, tied, X0, 0.05, 0.1, BASELINE, COSTS)[1], 0.0)

        penalty_only = CostParams(c_h=0.0, c_nh=0.0, c_v=0.0, delta=0.05, kappa=100.0)
        over = EpidemicState(0.8, 0.05, 0.15, 0.0)
        self.assertAlmostEqual(adjoint_rhs(0.0, zero, over, 0.0, 0.0, BASELINE, penalty_only)[2], -10.0, places=12)

    def test_zero_weights_give_zero_adjoint(self):
        trajectory = constant_run(0.05, 0.2, 50, dt=0.1)
        schedule = ControlSchedule.constant(BASELINE, 50, 1.0, 0.05, 0.2)
        adjoints = integrate_adjoint(trajectory, schedule, BASELINE, CostParams(0.0, 0.0, 0.0, 0.05))
        np.testing.assert_array_equal(adjoints.values, np.zeros_like(adjoints.values))

    def test_terminal_step(self):
        """最后一个步长上 λ_i ≈ ε·e^{-δT}"""
        trajectory = constant_run(0.0, 0.0, 10, dt=0.01)
        schedule = ControlSchedule.zeros(10, 1.0)
        cp = CostParams(c_h=0.0, c_nh=1.0, c_v=0.0, delta=0.05)
        adjoints = integrate_adjoint(trajectory, schedule, BASELINE, cp)
        np.testing.assert_array_equal(adjoints.values[-1], [0.0, 0.0, 0.0])
        self.assertAlmostEqual(adjoints.lambda_i[-2], 0.01 * math.exp(-0.5), delta=1e-2 * 0.01)

    def test_hamiltonian_derivatives_are_switching_functions(self):
        adj = AdjointState(1.5, 4.0, 6.0)
        phi_u, phi_h = switching_functions(X0, adj, 3.0, COSTS)
        step = 1e-4
        d_u = (hamiltonian(3.0, X0, adj, 0.03, 0.1, BASELINE, COSTS)
               - hamiltonian(3.0, X0, adj, 0.01, 0.1, BASELINE, COSTS)) / 0.02
        d_h = (hamiltonian(3.0, X0, adj, 0.02, 0.1 + step, BASELINE, COSTS)
               - hamiltonian(3.0, X0, adj, 0.02, 0.1 - step, BASELINE, COSTS)) / (2 * step)
        self.assertAlmostEqual(d_u, phi_u, places=9)
        self.assertAlmostEqual(d_h, phi_h, places=9)


class SwitchingTest(SimpleTestCase):
    """测试切换函数与控制合成"""

    def test_zero_costates(self):
        phi_u, phi_h = switching_functions(X0, AdjointState(0.0, 0.0, 0.0), 0.0, COSTS)
        self.assertAlmostEqual(phi_u, 0.9 * 0.5)
        self.assertAlmostEqual(phi_h, 0.05 * 1.0)
        u, h = control_from_switching(phi_u, phi_h, 0.0, BASELINE, SolverConfig())
        self.assertEqual((u, h), (0.0, 0.0))

    def test_singular_candidate(self):
        t = 7.0
        adj = AdjointState(0.5 * math.exp(-0.05 * t), 1.0, 1.0)
        phi_u, _ = switching_functions(X0, adj, t, COSTS)
        self.assertAlmostEqual(phi_u, 0.0, places=15)
        _, phi_h = switching_functions(EpidemicState(0.9, 0.1, 0.0, 0.0), AdjointState(3.0, 7.0, 9.0), t, COSTS)
        self.assertEqual(phi_h, 0.0)

    def test_bang_bang_and_delay(self):
        params = BASELINE.replace(t_delay_u=10.0)
        cfg = SolverConfig()
        self.assertEqual(control_from_switching(-1.0, 1.0, 12.0, params, cfg)[0], 0.05)
        self.assertEqual(control_from_switching(-1.0, 1.0, 5.0, params, cfg)[0], 0.0)
        self.assertEqual(control_from_switching(1.0, -1.0, 5.0, params, cfg)[1], 0.2)

    def test_singular_policies(self):
        state = EpidemicState(0.25, 0.05, 0.1, 0.6)
        feedback = SolverConfig(singular_policy='boundary-feedback')
        self.assertIs(feedback.singular_policy, SingularPolicy.BOUNDARY_FEEDBACK)
        u, h = control_from_switching(0.0, 1e-9, 0.0, BASELINE, feedback, state)
        self.assertAlmostEqual(h, 0.1, places=12)
        self.assertEqual(u, 0.025)
        u, h = control_from_switching(0.0, 0.0, 0.0, BASELINE, SolverConfig(), state)
        self.assertEqual((u, h), (0.025, 0.1))
        with self.assertRaises(ParameterError):
            control_from_switching(0.0, 0.0, 0.0, BASELINE, feedback)

    def test_solver_config_validation(self):
        with self.assertRaises(ParameterError):
            SolverConfig(damping=0.0)
        with self.assertRaises(ParameterError):
            SolverConfig(conv_tol=0.0)
        with self.assertRaises(ParameterError):
            SolverConfig(conservation_tol=0.0)
        with self.assertRaises(ParameterError):
            SolverConfig(strict_tol=-1e-6)
        self.assertEqual(SolverConfig().as_dict()['strict_tol'], 1e-6)


class ForwardBackwardSweepTest(SimpleTestCase):
    """测试前向-后向扫描"""

    def test_zero_cost_problem(self):
        init = ControlSchedule.upper_bounds(BASELINE, 30, 1.0)
        result = forward_backward_sweep(X0, init, BASELINE, CostParams(0.0, 0.0, 0.0, 0.05), 30, FAST)
        self.assertTrue(result.converged)
        self.assertEqual(result.iterations, 1)
        self.assertTrue(np.all(result.schedule.u_values == 0))
        self.assertTrue(np.all(result.schedule.h_values == 0))
        self.assertEqual(result.cost.total, 0.0)
        self.assertIs(result.initial_schedule, init)

    def test_dominated_vaccination(self):
        cp = CostParams(c_h=0.0, c_nh=0.0, c_v=1e6, delta=0.05)
        result = forward_backward_sweep(X0, ControlSchedule.zeros(30, 1.0), BASELINE, cp, 30, FAST)
        self.assertTrue(result.converged)
        self.assertTrue(np.all(result.schedule.u_values == 0))
        self.assertEqual(pointwise_minimality_violations(result, 1e-12), [])
        self.assertTrue(all(s.regime_u is Regime.AT_MIN for s in result.switching.samples()))

    def test_zero_iterations(self):
        init = ControlSchedule.constant(BASELINE, 30, 1.0, 0.02, 0.1)
        result = forward_backward_sweep(X0, init, BASELINE, COSTS, 30, FAST.replace(max_iters=0))
        self.assertFalse(result.converged)
        self.assertEqual(result.status, 'max-iters')
        self.assertEqual(result.iterations, 0)
        self.assertEqual(result.cost.total, result.initial_cost.total)

    def test_tiny_damping_is_not_convergence(self):
        """松弛系数很小时每步的改变量很小，但未松弛的差距仍远大于容差"""
        cfg = FAST.replace(damping=1e-5, min_damping=1e-5, max_iters=5)
        result = forward_backward_sweep(X0, ControlSchedule.zeros(30, 1.0), BASELINE, COSTS, 30, cfg)
        self.assertFalse(result.converged)
        self.assertIn(result.status, ('max-iters', 'stalled'))
        self.assertEqual(len(result.control_residual_history), result.iterations)
        self.assertTrue(all(gap > cfg.conv_tol for gap in result.control_residual_history))

    def test_tolerances_reach_cost_evaluation(self):
        init = ControlSchedule.upper_bounds(BASELINE, 100, 1.0)
        strict = forward_backward_sweep(X0, init, BASELINE, COSTS, 100, FAST.replace(max_iters=0))
        loose = forward_backward_sweep(X0, init, BASELINE, COSTS, 100, FAST.replace(max_iters=0, strict_tol=0.05))
        self.assertGreater(strict.cost.max_violation, 1e-6)
        self.assertFalse(strict.cost.feasible_strict)
        self.assertTrue(loose.cost.feasible_strict)

    def test_gradient_oracle(self):
        """20 个随机单元上伴随梯度与中心差分一致"""
        schedule = ControlSchedule.constant(BASELINE, 100, 1.0, 0.025, 0.1)
        rng = np.random.default_rng(5)
        cells = rng.choice(100, size=20, replace=False)
        for n, cell in enumerate(cells):
            kind = 'u' if n % 2 == 0 else 'h'
            check = gradient_check(X0, schedule, BASELINE, COSTS, 100, int(cell), kind, 1e-5)
            self.assertFalse(check.frozen_by_delay)
            self.assertLessEqual(abs(check.adjoint_gradient - check.fd_gradient),
                                 1e-4 * max(1.0, abs(check.fd_gradient)))

    def test_gradient_zero_cost_and_delay(self):
        schedule = ControlSchedule.constant(BASELINE, 20, 1.0, 0.025, 0.1)
        zero = gradient_check(X0, schedule, BASELINE, CostParams(0.0, 0.0, 0.0, 0.05), 20, 4, 'u', 1e-5, dt=0.1)
        self.assertEqual((zero.adjoint_gradient, zero.fd_gradient), (0.0, 0.0))

        delayed = BASELINE.replace(t_delay_u=10.0)
        masked = ControlSchedule.constant(delayed, 20, 1.0, 0.025, 0.1)
        frozen = gradient_check(X0, masked, delayed, COSTS, 20, 3, 'u', 1e-5, dt=0.1)
        self.assertTrue(frozen.frozen_by_delay)
        self.assertEqual(frozen.adjoint_gradient, 0.0)

    def test_gradient_bump_must_stay_in_box(self):
        schedule = ControlSchedule.constant(BASELINE, 20, 1.0, 0.0, 0.2)
        with self.assertRaises(BoundViolationError):
            gradient_check(X0, schedule, BASELINE, COSTS, 20, 2, 'u', 1e-5, dt=0.1)
        with self.assertRaises(BoundViolationError):
            gradient_check(X0, schedule, BASELINE, COSTS, 20, 2, 'h', 1e-5, dt=0.1)


class BaselineOptimizationTest(SimpleTestCase):
    """基线场景上的最优控制形状"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.horizon = 100
        cls.result = forward_backward_sweep(X0, ControlSchedule.zeros(cls.horizon, 1.0), BASELINE, COSTS,
                                            cls.horizon, FAST)

    def test_converges(self):
        result = self.result
        self.assertTrue(result.converged)
        self.assertLessEqual(result.control_residual_history[-1], FAST.conv_tol)
        self.assertEqual(len(result.control_residual_history), result.iterations)
        # 收敛的那次迭代不再更新控制
        self.assertEqual(len(result.cost_history), result.iterations - 1)

    def test_initial_saturation(self):
        """u 在一段长度为正的初始区间上取 u_max，而不只是第一个单元"""
        result = self.result
        schedule = result.schedule
        regimes = [sample.regime_u for sample in result.switching.samples()]
        self.assertIs(regimes[0], Regime.AT_MAX)
        end = next((k for k, regime in enumerate(regimes) if regime is not Regime.AT_MAX), len(regimes))
        interval = float(result.switching.times[end - 1])
        full_cells = int(interval // schedule.dt)
        self.assertGreaterEqual(full_cells, 2)
        np.testing.assert_allclose(schedule.u_values[:full_cells], BASELINE.u_max, atol=FAST.conv_tol)
        self.assertFalse(any(arc.kind is ArcKind.SINGULAR_U and arc.start == 0.0
                             for arc in detect_singular_arcs(result, 0.0)))
        self.assertAlmostEqual(schedule.h_values[0], BASELINE.h_max, delta=1e-3)
        peak_cell = int(result.trajectory.peak_time)
        self.assertTrue(np.all(np.diff(schedule.h_values[:peak_cell + 1]) <= 1e-3))

    def test_infection_costate_shape(self):
        adjoints = self.result.adjoints
        lambda_i = adjoints.lambda_i
        half = len(lambda_i) // 2
        self.assertTrue(np.all(lambda_i >= -1e-9))
        self.assertEqual(lambda_i[-1], 0.0)
        self.assertGreaterEqual(lambda_i[0], adjoints.lambda_e[0])
        self.assertGreaterEqual(lambda_i[0], adjoints.lambda_s[0])
        self.assertLessEqual(int(np.argmax(lambda_i)), half)
        self.assertTrue(np.all(np.diff(lambda_i[half:]) <= 1e-9))

    def test_beats_constant_strategies(self):
        cost = self.result.cost.total
        for u, h in ((0.0, 0.0), (BASELINE.u_max, BASELINE.h_max)):
            trajectory = constant_run(u, h, self.horizon, dt=FAST.dt)
            self.assertLessEqual(cost, evaluate_cost(trajectory, COSTS, BASELINE.i_max, BASELINE).total + 1e-6)

    def test_pointwise_minimality(self):
        self.assertTrue(self.result.converged)
        self.assertEqual(pointwise_minimality_violations(self.result, FAST.conv_tol), [])


class ArcDetectionTest(SimpleTestCase):
    """测试奇异弧与边界维持弧的检测"""

    def test_bang_bang_solution_has_no_arcs(self):
        cp = CostParams(c_h=1e3, c_nh=0.0, c_v=1e3, delta=0.05)
        result = forward_backward_sweep(X0, ControlSchedule.zeros(20, 1.0), BASELINE, cp, 20, FAST)
        self.assertTrue(result.converged)
        self.assertEqual(detect_singular_arcs(result, 1.0), [])

    def test_boundary_arc_from_feedback(self):
        e0 = BASELINE.gamma * BASELINE.i_max / BASELINE.sigma
        x0 = EpidemicState(0.3, e0, BASELINE.i_max, 1.0 - 0.3 - e0 - BASELINE.i_max)
        trajectory = integrate_feedback(x0, boundary_feedback_policy(BASELINE), BASELINE, 8, 0.01)
        arcs = detect_arcs(trajectory, BASELINE, min_length=1.0)
        self.assertEqual(len(arcs), 1)
        self.assertIs(arcs[0].kind, ArcKind.BOUNDARY)
        self.assertLessEqual(arcs[0].residual, 1e-6)
        self.assertTrue(arcs[0].verified)
        self.assertAlmostEqual(arcs[0].length, 8.0)
        self.assertEqual(detect_arcs(trajectory, BASELINE, min_length=100.0), [])


class KappaContinuationTest(SimpleTestCase):
    """测试 kappa 延拓"""

    def test_inactive_penalty(self):
        params = BASELINE.replace(i_max=0.999)
        cp = CostParams(c_h=1e3, c_nh=1.0, c_v=1e3, delta=0.05)
        report = kappa_continuation(X0, params, cp, 60, [10.0, 100.0, 1000.0], FAST)
        self.assertEqual(report.violations, [0.0, 0.0, 0.0])
        self.assertIsNone(report.ladder[0].control_distance)
        self.assertEqual([rung.control_distance for rung in report.ladder[1:]], [0.0, 0.0])
        self.assertTrue(report.warm_started)

    def test_single_rung(self):
        report = kappa_continuation(X0, BASELINE, COSTS, 30, [50.0], FAST)
        direct = forward_backward_sweep(X0, ControlSchedule.zeros(30, 1.0), BASELINE, COSTS.replace(kappa=50.0), 30, FAST)
        self.assertEqual(len(report.ladder), 1)
        self.assertAlmostEqual(report.ladder[0].cost_total, direct.cost.total, places=12)

    def test_ladder_must_increase(self):
        with self.assertRaises(ParameterError):
            kappa_continuation(X0, BASELINE, COSTS, 30, [10.0, 10.0], FAST)
        with self.assertRaises(ParameterError):
            horizon_continuation(X0, BASELINE, COSTS, [100.0, 100.0], FAST)

    def test_baseline_ladder(self):
        """违反量沿阶梯不增，最终接近全力控制所能达到的下限"""
        report = kappa_continuation(X0, BASELINE, COSTS, 100, [10.0, 100.0, 1000.0, 10000.0], FAST)
        violations = report.violations
        for previous, current in zip(violations, violations[1:]):
            self.assertLessEqual(current, previous + VIOLATION_TOL)
        self.assertTrue(report.violation_monotone)
        all_max = constant_run(BASELINE.u_max, BASELINE.h_max, 100, dt=FAST.dt)
        floor = max(0.0, all_max.peak_i - BASELINE.i_max)
        self.assertLessEqual(violations[-1], floor + 0.01)

    def test_default_warm_start_uses_cell_dt(self):
        params = BASELINE.replace(i_max=0.999)
        cp = CostParams(c_h=1e3, c_nh=0.0, c_v=1e3, delta=0.05)
        report = kappa_continuation(X0, params, cp, 20, [10.0], FAST, cell_dt=2.0)
        schedule = report.final_result.schedule
        self.assertEqual(schedule.dt, 2.0)
        self.assertEqual(schedule.n_cells, 10)
        self.assertEqual(report.final_result.initial_schedule.dt, 2.0)

    def test_violation_checks(self):
        with self.assertLogs('optimal_control.continuation', level='WARNING') as logs:
            monotone, bridge_met = _check_violations([10.0, 100.0, 1000.0], [0.05, 0.06, 0.001])
        self.assertFalse(monotone)
        self.assertTrue(bridge_met)
        self.assertEqual(len(logs.output), 1)
        with self.assertLogs('optimal_control.continuation', level='WARNING'):
            monotone, bridge_met = _check_violations([10.0, 100.0, 1000.0], [0.05, 0.04, 0.03])
        self.assertTrue(monotone)
        self.assertFalse(bridge_met)
        self.assertEqual(_check_violations([10.0, 100.0], [0.0, 0.0]), (True, True))


class FeasibleLimitTest(SimpleTestCase):
    """容量足够宽松时沿 kappa 阶梯逼近严格可行"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        # i_max=0.10 时即便全程取 u_max、h_max，峰值仍超出容量约 0.0105，
        # 任何容许控制都达不到 i_max + 0.01，所以这里取 0.15
        cls.params = BASELINE.replace(i_max=0.15)
        cp = CostParams(c_h=5.0, c_nh=0.2, c_v=5.0, delta=0.05)
        cls.report = kappa_continuation(X0, cls.params, cp, 100, [10.0, 100.0, 1000.0, 10000.0], FAST)

    def test_feasible_in_the_limit(self):
        report = self.report
        violations = report.violations
        self.assertLessEqual(violations[-1], violations[0] / 10)
        self.assertLessEqual(np.max(report.final_result.trajectory.i), self.params.i_max + 0.01)
        self.assertTrue(report.violation_monotone)
        self.assertTrue(report.bridge_met)

    def test_converged_rungs_satisfy_minimality(self):
        """报告收敛的每一级都满足逐点最小化条件，未松弛差距在容差内"""
        for rung, result in zip(self.report.ladder, self.report.results):
            self.assertEqual(rung.converged, result.converged)
            if result.converged:
                self.assertLessEqual(result.control_residual_history[-1], FAST.conv_tol)
                self.assertEqual(pointwise_minimality_violations(result, FAST.conv_tol), [], f"kappa={rung.value:g}")
            elif result.status != 'deteriorated':
                self.assertGreater(result.control_residual_history[-1], FAST.conv_tol)


class HorizonContinuationTest(SimpleTestCase):
    """测试时间长度延拓"""

    def test_zero_cost_ladder(self):
        report = horizon_continuation(X0, BASELINE, CostParams(0.0, 0.0, 0.0, 0.05), [20.0, 40.0], FAST)
        self.assertEqual([rung.cost_total for rung in report.ladder], [0.0, 0.0])
        self.assertTrue(report.horizon_converged)

    def test_horizon_stability(self):
        cp = CostParams(c_h=0.01, c_nh=1.0, c_v=0.5, delta=0.05)
        report = horizon_continuation(X0, BASELINE, cp, [100.0, 200.0, 400.0], FAST)
        short, middle, long = report.ladder
        # 每一级记录的是判断时所用的上界，即上一级的 C·e^{-δT}/δ
        self.assertIsNone(short.tail_bound)
        self.assertAlmostEqual(middle.tail_bound, report.results[0].cost.tail_bound)
        self.assertAlmostEqual(middle.tail_bound, tail_bound(cp, 100.0, 0.05, 0.2, 0.1))
        self.assertAlmostEqual(long.tail_bound, tail_bound(cp, 200.0, 0.05, 0.2, 0.1))
        self.assertLessEqual(middle.cost_gap, middle.tail_bound + FAST.conv_tol)
        self.assertTrue(report.horizon_converged)
        self.assertLessEqual(long.cost_gap, middle.cost_gap)
        self.assertLessEqual(long.cost_gap, long.tail_bound + FAST.conv_tol)
        early = report.results[0].schedule.sup_distance(report.results[2].schedule, until=50.0)
        self.assertLessEqual(early, 5e-2)
