"""
受控 SEIR 动力学与解析结果的测试用例
"""

import math
from types import SimpleNamespace

import numpy as np
from django.test import SimpleTestCase
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.special import lambertw

from .analysis import (
    boundary_feedback_policy, boundary_maintenance_control, final_size_max_suppression,
    final_size_upper_bound, lambert_w0, r_eff, time_free_residual,
)
from .dynamics import (
    _enforce_invariants, integral_identity_residual, integrate, integrate_feedback,
    seir_rhs, verify_trajectory,
)
from .exceptions import (
    DegenerateChangeOfVariablesError, InvariantViolationError, LambertDomainError,
    ParameterError, ScheduleError, StateError,
)
from .models import ControlSchedule, EpidemicState, ModelParams, Trajectory, cells_for_horizon

BASELINE = ModelParams(beta=0.5, sigma=0.2, gamma=0.1, u_max=0.05, h_max=0.2, i_max=0.1)
X0 = EpidemicState(0.90, 0.05, 0.05, 0.0)


def constant_run(u, h, horizon, dt=0.01, params=BASELINE, x0=X0):
    schedule = ControlSchedule.constant(params, horizon, 1.0, u, h)
    return integrate(x0, schedule, params, horizon, dt)


class ModelTypesTest(SimpleTestCase):
    """测试领域类型的不变量"""

    def test_rejects_suppression_above_beta(self):
        with self.assertRaises(ParameterError):
            ModelParams(beta=0.5, sigma=0.2, gamma=0.1, u_max=0.05, h_max=0.6, i_max=0.1)

    def test_rejects_capacity_outside_unit_interval(self):
        with self.assertRaises(ParameterError):
            BASELINE.replace(i_max=1.0)

    def test_state_conservation(self):
        with self.assertRaises(StateError):
            EpidemicState(0.9, 0.05, 0.05, 0.01)
        with self.assertRaises(StateError):
            EpidemicState(1.1, -0.1, 0.0, 0.0)

    def test_initial_state_is_not_rescaled(self):
        """初始条件求和误差超过 1e-12 时直接拒绝"""
        slightly_off = EpidemicState(0.9, 0.05, 0.05, 1e-10)
        schedule = ControlSchedule.zeros(10, 1.0)
        with self.assertRaises(StateError):
            integrate(slightly_off, schedule, BASELINE, 10, 0.1)

    def test_constant_schedule_masks_delays(self):
        params = BASELINE.replace(t_delay_u=10.0, t_delay_h=2.5)
        schedule = ControlSchedule.constant(params, 20, 1.0, 0.05, 0.2)
        self.assertTrue(np.all(schedule.u_values[:10] == 0))
        self.assertTrue(np.all(schedule.u_values[10:] == 0.05))
        # 左端点 2.0 < 2.5 的单元也被冻结
        self.assertTrue(np.all(schedule.h_values[:3] == 0))
        self.assertTrue(np.all(schedule.h_values[3:] == 0.2))
        schedule.validate(params)

    def test_validate_rejects_control_inside_delay(self):
        params = BASELINE.replace(t_delay_u=5.0)
        schedule = ControlSchedule(0.0, 1.0, np.full(10, 0.05), np.zeros(10))
        with self.assertRaises(ScheduleError):
            schedule.validate(params)
        with self.assertRaises(ScheduleError):
            ControlSchedule(0.0, 1.0, np.full(10, 0.08), np.zeros(10)).validate(BASELINE)

    def test_step_schedule(self):
        schedule = ControlSchedule.from_steps(BASELINE, 10, 1.0, [(0, 0.05), (4, 0.0)], [(2, 0.2)])
        np.testing.assert_array_equal(schedule.u_values, [0.05] * 4 + [0.0] * 6)
        np.testing.assert_array_equal(schedule.h_values, [0.0] * 2 + [0.2] * 8)
        self.assertEqual(schedule.value_at(3.5), (0.05, 0.2))
        self.assertEqual(schedule.value_at(10.0), (0.0, 0.2))

    def test_horizon_must_be_grid_multiple(self):
        with self.assertRaises(ScheduleError):
            cells_for_horizon(10.0, 0.3)
        self.assertEqual(cells_for_horizon(200.0, 0.01), 20000)

    def test_schedule_arrays_are_read_only(self):
        schedule = ControlSchedule.zeros(5, 1.0)
        with self.assertRaises(ValueError):
            schedule.u_values[0] = 1.0


class SeirRhsTest(SimpleTestCase):
    """测试右端项"""

    def test_uncontrolled_substitution(self):
        derivative = seir_rhs(X0, 0.0, 0.0, BASELINE)
        np.testing.assert_allclose(derivative, [-0.0225, 0.0125, 0.005, 0.005], atol=1e-15)

    def test_controlled_substitution(self):
        derivative = seir_rhs(X0, 0.05, 0.2, BASELINE)
        np.testing.assert_allclose(derivative, [-0.0585, 0.0035, 0.005, 0.05], atol=1e-15)
        self.assertAlmostEqual(derivative.sum(), 0.0, places=15)

    def test_disease_free_equilibrium(self):
        derivative = seir_rhs(EpidemicState(0.7, 0.0, 0.0, 0.3), 0.0, 0.1, BASELINE)
        np.testing.assert_array_equal(derivative, np.zeros(4))

    def test_rejects_suppression_at_beta(self):
        with self.assertRaises(ParameterError):
            seir_rhs(X0, 0.0, 0.5, BASELINE)


class IntegrateTest(SimpleTestCase):
    """测试正向积分器"""

    def test_no_intervention_peak(self):
        trajectory = constant_run(0.0, 0.0, 200)
        self.assertAlmostEqual(trajectory.peak_i, 0.32, delta=0.01)
        self.assertEqual(trajectory.initial_state, X0)

    def test_constant_controls_row(self):
        trajectory = constant_run(0.05, 0.2, 400)
        self.assertAlmostEqual(trajectory.peak_i, 0.1104, delta=0.005)
        self.assertGreaterEqual(trajectory.final_size, 0.999)

    def test_no_infection_subspace(self):
        x0 = EpidemicState(1.0, 0.0, 0.0, 0.0)
        trajectory = constant_run(0.05, 0.2, 50, dt=0.05, x0=x0)
        np.testing.assert_array_equal(trajectory.i, np.zeros(len(trajectory.times)))
        np.testing.assert_array_equal(trajectory.e, np.zeros(len(trajectory.times)))
        np.testing.assert_allclose(trajectory.s, np.exp(-0.05 * trajectory.times), rtol=1e-9)

    def test_conservation_and_positivity_on_random_scenarios(self):
        """100 个随机容许场景的守恒与非负性"""
        rng = np.random.default_rng(2024)
        for _ in range(100):
            beta = rng.uniform(0.2, 1.0)
            params = ModelParams(
                beta=beta, sigma=rng.uniform(0.1, 0.5), gamma=rng.uniform(0.05, 0.3),
                u_max=rng.uniform(0.0, 0.1), h_max=rng.uniform(0.0, 0.9) * beta, i_max=0.1,
            )
            e0, i0, r0 = rng.uniform(0.0, 0.05), rng.uniform(0.001, 0.05), rng.uniform(0.0, 0.1)
            x0 = EpidemicState(1.0 - e0 - i0 - r0, e0, i0, r0)
            schedule = ControlSchedule(
                0.0, 1.0, rng.uniform(0, params.u_max, 200), rng.uniform(0, params.h_max, 200))
            trajectory = integrate(x0, schedule, params, 200, 0.01)
            report = verify_trajectory(trajectory)
            self.assertLessEqual(report.max_conservation_error, 1e-9)
            self.assertGreaterEqual(report.min_component, -1e-12)
            self.assertTrue(np.all(trajectory.s > 0))

    def test_s_strictly_decreasing(self):
        report = verify_trajectory(constant_run(0.0, 0.0, 200))
        self.assertTrue(report.s_strictly_decreasing)
        self.assertTrue(report.conserved)
        self.assertTrue(report.positive)

    def test_asymptotic_decay(self):
        trajectory = constant_run(0.0, 0.0, 2000, dt=0.05)
        report = verify_trajectory(trajectory)
        self.assertTrue(report.decayed)

    def test_grid_refinement(self):
        coarse = constant_run(0.05, 0.2, 200, dt=0.01)
        fine = constant_run(0.05, 0.2, 200, dt=0.005)
        self.assertLess(abs(coarse.peak_i - fine.peak_i), 1e-6)

    def test_integrator_step_must_divide_cells(self):
        schedule = ControlSchedule.zeros(10, 1.0)
        with self.assertRaises(ScheduleError):
            integrate(X0, schedule, BASELINE, 10, 0.3)

    def test_schedule_must_cover_horizon(self):
        schedule = ControlSchedule.zeros(10, 1.0)
        with self.assertRaises(ScheduleError):
            integrate(X0, schedule, BASELINE, 20, 0.1)

    def test_inadmissible_schedule_rejected(self):
        schedule = ControlSchedule(0.0, 1.0, np.full(10, 0.5), np.zeros(10))
        with self.assertRaises(ScheduleError):
            integrate(X0, schedule, BASELINE, 10, 0.1)

    def test_rounding_negatives_are_clamped(self):
        clamped = _enforce_invariants((0.5, -1e-13, 0.25, 0.25 + 1e-13), 1.0, 1e-9)
        self.assertEqual(clamped[1], 0.0)
        with self.assertRaises(InvariantViolationError):
            _enforce_invariants((0.5, -1e-6, 0.25, 0.25 + 1e-6), 1.0, 1e-9)
        with self.assertRaises(InvariantViolationError):
            _enforce_invariants((0.5, 0.0, 0.25, 0.26), 1.0, 1e-9)

    def test_integral_identity(self):
        trajectory = constant_run(0.05, 0.2, 200)
        self.assertLessEqual(integral_identity_residual(trajectory, BASELINE), 1e-6)

    def test_fourth_order_convergence(self):
        """步长减半时 t=20 处的误差缩小约 16 倍"""
        reference = constant_run(0.02, 0.1, 20, dt=0.001).states[-1]
        errors = [np.max(np.abs(constant_run(0.02, 0.1, 20, dt=dt).states[-1] - reference)) for dt in (0.1, 0.05)]
        self.assertGreater(errors[1], 0.0)
        self.assertTrue(12.0 <= errors[0] / errors[1] <= 20.0, errors)

    def test_integral_identity_without_recovery(self):
        """γ=0 且 u≡0 时 s+e+i 守恒，残差就是它的漂移"""
        beta, sigma = 0.5, 0.2
        times = np.linspace(0.0, 50.0, 501)

        def rhs(t, y):
            s, e, i = y
            return [-beta * s * i, beta * s * i - sigma * e, sigma * e]

        solution = solve_ivp(rhs, (0.0, 50.0), [0.9, 0.05, 0.05], t_eval=times, rtol=1e-10, atol=1e-12)
        states = np.column_stack([solution.y.T, np.zeros(len(times))])
        trajectory = Trajectory(times, states, np.zeros(len(times)), np.zeros(len(times)))
        # ModelParams 要求 γ > 0，这里只需要 gamma 字段
        no_recovery = SimpleNamespace(gamma=0.0)
        residual = integral_identity_residual(trajectory, no_recovery)
        non_recovered = states[:, :3].sum(axis=1)
        drift = np.max(np.abs(non_recovered - non_recovered[0]))
        self.assertEqual(residual, drift)
        self.assertLessEqual(residual, 1e-10)
        self.assertGreater(trajectory.i[-1], 0.05)

    def test_integral_identity_pure_vaccination_step(self):
        x0 = EpidemicState(1.0, 0.0, 0.0, 0.0)
        schedule = ControlSchedule.constant(BASELINE, 0.01, 0.01, 0.05, 0.0)
        trajectory = integrate(x0, schedule, BASELINE, 0.01, 0.01)
        self.assertEqual(trajectory.n_steps, 1)
        self.assertLessEqual(integral_identity_residual(trajectory, BASELINE), 1e-8)


class LambertTest(SimpleTestCase):
    """测试 Lambert W 主分支"""

    def test_special_values(self):
        self.assertEqual(lambert_w0(0.0), 0.0)
        self.assertAlmostEqual(lambert_w0(math.e), 1.0, places=14)
        self.assertEqual(lambert_w0(-1.0 / math.e), -1.0)

    def test_domain(self):
        with self.assertRaises(LambertDomainError):
            lambert_w0(-0.5)
        with self.assertRaises(LambertDomainError):
            lambert_w0(float('nan'))

    def test_inverse_property(self):
        rng = np.random.default_rng(7)
        for z in rng.uniform(-1.0 / math.e, 10.0, 1000):
            w = lambert_w0(z)
            self.assertGreaterEqual(w, -1.0)
            self.assertLessEqual(abs(w * math.exp(w) - z), 1e-12 * max(1.0, abs(z)))

    def test_matches_scipy(self):
        for z in (-0.36, -0.3, -0.05, 1e-8, 0.5, 2.0, 50.0, 1e6):
            self.assertAlmostEqual(lambert_w0(z), lambertw(z).real, places=9)


class FinalSizeTest(SimpleTestCase):
    """测试最终规模公式"""

    @staticmethod
    def implicit_root(x0, params):
        ratio = params.beta_tilde / params.gamma
        x_total = x0.non_recovered
        return brentq(lambda s: math.log(s / x0.s) + ratio * (x_total - s), 1e-300, x0.s, xtol=1e-15)

    def test_baseline_final_size(self):
        result = final_size_max_suppression(X0, BASELINE)
        self.assertAlmostEqual(result.s_inf, 0.0524, delta=1e-3)
        self.assertAlmostEqual(result.s_inf, self.implicit_root(X0, BASELINE), places=10)
        self.assertLessEqual(result.implicit_residual, 1e-10)
        self.assertAlmostEqual(result.final_size, 1.0 - result.s_inf)

    def test_agrees_with_long_simulation(self):
        """Lambert W 结果与 T=4000 的模拟在 1e-3 相对误差内一致"""
        rng = np.random.default_rng(11)
        for _ in range(20):
            gamma = rng.uniform(0.05, 0.3)
            h_max = rng.uniform(0.0, 0.3)
            beta = rng.uniform(1.5, 6.0) * gamma + h_max
            params = ModelParams(beta=beta, sigma=rng.uniform(0.1, 0.5), gamma=gamma,
                                 u_max=0.05, h_max=h_max, i_max=0.1)
            e0, i0 = rng.uniform(0.0, 0.05), rng.uniform(0.001, 0.05)
            x0 = EpidemicState(1.0 - e0 - i0, e0, i0, 0.0)
            result = final_size_max_suppression(x0, params)
            trajectory = integrate(x0, ControlSchedule.constant(params, 4000, 1.0, 0.0, h_max),
                                   params, 4000, 0.1)
            self.assertLess(abs(trajectory.s[-1] - result.s_inf) / result.s_inf, 1e-3)
            self.assertLessEqual(result.implicit_residual, 1e-10)

    def test_subcritical_limit(self):
        params = ModelParams(beta=0.25, sigma=0.2, gamma=0.1, u_max=0.05, h_max=0.2, i_max=0.1)
        x0 = EpidemicState(1.0 - 1e-6, 0.0, 1e-6, 0.0)
        result = final_size_max_suppression(x0, params)
        self.assertLess(result.final_size, 1e-4)
        self.assertLess(result.s_inf, x0.s)

    def test_requires_infection(self):
        with self.assertRaises(StateError):
            final_size_max_suppression(EpidemicState(0.9, 0.1, 0.0, 0.0), BASELINE)

    def test_upper_bound_tight_at_max_suppression(self):
        trajectory = constant_run(0.0, 0.2, 400, dt=0.05)
        bound = final_size_upper_bound(trajectory, BASELINE)
        self.assertLess(abs(bound - trajectory.s[-1]), 1e-4)

    def test_upper_bound_without_infection(self):
        x0 = EpidemicState(0.9, 0.0, 0.0, 0.1)
        trajectory = constant_run(0.0, 0.0, 50, dt=0.1, x0=x0)
        self.assertEqual(final_size_upper_bound(trajectory, BASELINE), 0.9)
        self.assertEqual(trajectory.s[-1], 0.9)

    def test_upper_bound_dominates_state(self):
        trajectory = constant_run(0.02, 0.1, 400, dt=0.05)
        self.assertLessEqual(trajectory.s[-1], final_size_upper_bound(trajectory, BASELINE))

    def test_upper_bound_warns_on_truncation(self):
        trajectory = constant_run(0.0, 0.0, 20, dt=0.1)
        with self.assertLogs('epidemic.analysis', level='WARNING'):
            final_size_upper_bound(trajectory, BASELINE)


class BoundaryMaintenanceTest(SimpleTestCase):
    """测试有效再生数与边界维持律"""

    def test_r_eff(self):
        self.assertAlmostEqual(r_eff(X0, 0.0, BASELINE), 4.5)
        threshold = EpidemicState(0.1 / 0.4, 0.25, 0.25, 0.25)
        self.assertAlmostEqual(r_eff(threshold, 0.1, BASELINE), 1.0, places=12)
        self.assertEqual(r_eff(EpidemicState(0.0, 0.5, 0.5, 0.0), 0.1, BASELINE), 0.0)
        with self.assertRaises(ParameterError):
            r_eff(X0, 0.5, BASELINE)

    def test_admissibility_window(self):
        h, admissible = boundary_maintenance_control(0.2, BASELINE)
        self.assertAlmostEqual(h, 0.0, places=12)
        self.assertTrue(admissible)
        h, admissible = boundary_maintenance_control(1.0 / 3.0, BASELINE)
        self.assertAlmostEqual(h, 0.2, places=12)
        self.assertTrue(admissible)
        h, admissible = boundary_maintenance_control(0.5, BASELINE)
        self.assertEqual(h, 0.2)
        self.assertFalse(admissible)
        with self.assertRaises(StateError):
            boundary_maintenance_control(0.0, BASELINE)

    def test_feedback_freezes_infection(self):
        """i = I_max 且 e = γI_max/σ 时 di/dt 与 de/dt 都为 0"""
        e = BASELINE.gamma * BASELINE.i_max / BASELINE.sigma
        state = EpidemicState(0.25, e, BASELINE.i_max, 1.0 - 0.25 - e - BASELINE.i_max)
        h, admissible = boundary_maintenance_control(state.s, BASELINE)
        self.assertTrue(admissible)
        derivative = seir_rhs(state, 0.0, h, BASELINE)
        self.assertAlmostEqual(derivative[1], 0.0, delta=1e-15)
        self.assertAlmostEqual(derivative[2], 0.0, delta=1e-15)
        self.assertAlmostEqual(r_eff(state, h, BASELINE), 1.0, delta=1e-12)

    def test_feedback_holds_capacity(self):
        e0 = BASELINE.gamma * BASELINE.i_max / BASELINE.sigma
        x0 = EpidemicState(0.3, e0, BASELINE.i_max, 1.0 - 0.3 - e0 - BASELINE.i_max)
        policy = boundary_feedback_policy(BASELINE)
        trajectory = integrate_feedback(x0, policy, BASELINE, 8, 0.01)
        self.assertTrue(policy.admissible)
        self.assertLessEqual(np.max(np.abs(trajectory.i - BASELINE.i_max)), 1e-6)
        self.assertTrue(np.all(trajectory.s >= BASELINE.gamma / BASELINE.beta))
        self.assertTrue(np.all(trajectory.s <= BASELINE.gamma / BASELINE.beta_tilde))
        for k in range(0, trajectory.n_steps + 1, 50):
            state = trajectory.state_at(k)
            self.assertAlmostEqual(r_eff(state, trajectory.h[k], BASELINE), 1.0, delta=1e-9)

    def test_feedback_respects_delay(self):
        params = BASELINE.replace(t_delay_h=1.0)
        e0 = params.gamma * params.i_max / params.sigma
        x0 = EpidemicState(0.3, e0, params.i_max, 1.0 - 0.3 - e0 - params.i_max)
        trajectory = integrate_feedback(x0, boundary_feedback_policy(params), params, 2, 0.1)
        self.assertTrue(np.all(trajectory.h[:10] == 0))
        self.assertTrue(np.all(trajectory.h[10:] > 0))


class TimeFreeRepresentationTest(SimpleTestCase):
    """测试以 s 为积分变量的表示"""

    def test_no_control_residual(self):
        self.assertLessEqual(time_free_residual(constant_run(0.0, 0.0, 200), BASELINE), 1e-4)

    def test_constant_control_residual(self):
        self.assertLessEqual(time_free_residual(constant_run(0.05, 0.2, 200), BASELINE), 1e-4)

    def test_pure_vaccination_cell(self):
        x0 = EpidemicState(0.95, 0.0, 0.0, 0.05)
        trajectory = constant_run(0.05, 0.0, 1, dt=0.1, x0=x0)
        self.assertLessEqual(time_free_residual(trajectory, BASELINE), 1e-8)

    def test_stationary_s_is_degenerate(self):
        x0 = EpidemicState(0.9, 0.0, 0.0, 0.1)
        trajectory = constant_run(0.0, 0.0, 5, dt=0.1, x0=x0)
        with self.assertRaises(DegenerateChangeOfVariablesError):
            time_free_residual(trajectory, BASELINE)
