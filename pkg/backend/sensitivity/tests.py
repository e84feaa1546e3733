"""
参数扫描、相关性与影子价值的测试用例
"""

from unittest import mock

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from epidemic.dynamics import integrate
from epidemic.exceptions import DegenerateSampleError, NotConvergedError, ParameterError
from epidemic.models import ControlSchedule, EpidemicState, ModelParams
from optimal_control.cost import evaluate_cost
from optimal_control.models import CostParams, SolverConfig
from optimal_control.pmp import forward_backward_sweep
from . import sweeps
from .models import BaseRun, SweepRow, SweepSpec
from .sweeps import (
    capacity_shadow_value, correlation_matrix, delay_cost_summary, latin_hypercube_design,
    pearson_correlation, run_random_design, run_sweep, shadow_value_finite_difference, sweep_frame,
)

BASELINE = ModelParams(beta=0.5, sigma=0.2, gamma=0.1, u_max=0.05, h_max=0.2, i_max=0.1)
X0 = EpidemicState(0.90, 0.05, 0.05, 0.0)
COSTS = CostParams(c_h=1.0, c_nh=1.0, c_v=0.5, delta=0.05, kappa=100.0)
FAST = SolverConfig(dt=0.1, conv_tol=1e-4)
FIXED = ControlSchedule.constant(BASELINE, 100, 1.0, 0.05, 0.2)


class SweepSpecTest(SimpleTestCase):
    """测试扫描规格"""

    def test_grid_values(self):
        spec = SweepSpec('kappa', grid=(0.0, 100.0, 5))
        self.assertEqual(spec.resolved_values(), [0.0, 25.0, 50.0, 75.0, 100.0])

    def test_rejects_invalid_spec(self):
        with self.assertRaises(ParameterError):
            SweepSpec('sigma', values=(0.1,))
        with self.assertRaises(ParameterError):
            SweepSpec('beta')
        with self.assertRaises(ParameterError):
            SweepSpec('beta', values=(0.5,), mode='plot')

    def test_values_must_keep_parameters_valid(self):
        base = BaseRun(X0, BASELINE, COSTS, 100, FAST, FIXED)
        with self.assertRaises(ParameterError):
            run_sweep(SweepSpec('h_max', values=(0.1, 0.6)), base)


class RunSweepTest(SimpleTestCase):
    """测试一维扫描"""

    def test_single_zero_delay_matches_base_run(self):
        base = BaseRun(X0, BASELINE, COSTS, 100, FAST, FIXED)
        rows = run_sweep(SweepSpec('t_delay_u', values=(0.0,)), base)
        trajectory = integrate(X0, FIXED, BASELINE, 100, FAST.dt)
        cost = evaluate_cost(trajectory, COSTS, BASELINE.i_max, BASELINE)
        self.assertEqual(len(rows), 1)
        self.assertEqual(rows[0].cost_total, cost.total)
        self.assertEqual(rows[0].peak_i, trajectory.peak_i)
        self.assertTrue(rows[0].converged)

    def test_beta_raises_peak(self):
        base = BaseRun(X0, BASELINE, COSTS, 100, FAST, FIXED)
        rows = run_sweep(SweepSpec('beta', values=(0.3, 0.5, 0.7)), base)
        peaks = [row.peak_i for row in rows]
        self.assertTrue(all(b > a for a, b in zip(peaks, peaks[1:])))

    def test_parallel_rows_keep_order(self):
        base = BaseRun(X0, BASELINE, COSTS, 100, FAST, FIXED)
        spec = SweepSpec('beta', values=(0.7, 0.3, 0.5), workers=3)
        rows = run_sweep(spec, base)
        self.assertEqual([row.index for row in rows], [0, 1, 2])
        self.assertEqual([row.value for row in rows], [0.7, 0.3, 0.5])
        serial = run_sweep(SweepSpec('beta', values=(0.7, 0.3, 0.5)), base)
        self.assertEqual([row.cost_total for row in rows], [row.cost_total for row in serial])

    def test_failed_row_is_recorded(self):
        base = BaseRun(X0, BASELINE, COSTS, 100, FAST, FIXED)
        execute_run = sweeps.execute_run

        def flaky(run, mode):
            if run.params.beta == 0.5:
                raise RuntimeError("积分失败")
            return execute_run(run, mode)

        with mock.patch.object(sweeps, 'execute_run', side_effect=flaky):
            rows = run_sweep(SweepSpec('beta', values=(0.3, 0.5, 0.7)), base)
        self.assertEqual([row.ok for row in rows], [True, False, True])
        self.assertIn("积分失败", rows[1].error)
        self.assertTrue(np.isnan(rows[1].cost_total))
        frame = sweep_frame(rows, 'beta')
        self.assertEqual(list(frame['beta']), [0.3, 0.5, 0.7])

    def test_delay_raises_optimal_cost(self):
        base = BaseRun(X0, BASELINE, COSTS, 100, FAST)
        rows = run_sweep(SweepSpec('t_delay_u', values=(0.0, 10.0, 20.0, 40.0), mode='optimize'), base)
        self.assertTrue(all(row.ok for row in rows))
        costs = [row.cost_total for row in rows]
        # 延迟只会缩小容许集合，允许的下降仅为求解噪声
        for previous, current in zip(costs, costs[1:]):
            self.assertGreaterEqual(current, previous - 1e-6 * max(1.0, previous))
        self.assertGreater(costs[-1], costs[0])


class CorrelationTest(SimpleTestCase):
    """测试相关系数"""

    def test_affine_relations(self):
        xs = [0.1, 0.4, 0.2, 0.9, 0.5]
        self.assertAlmostEqual(pearson_correlation(xs, [2 * x + 1 for x in xs]), 1.0)
        self.assertAlmostEqual(pearson_correlation(xs, [-x for x in xs]), -1.0)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(3)
        xs, ys = rng.normal(size=50), rng.normal(size=50)
        value = pearson_correlation(xs, ys)
        self.assertEqual(value, pearson_correlation(ys, xs))
        self.assertLessEqual(abs(value), 1.0)
        self.assertAlmostEqual(value, float(np.corrcoef(xs, ys)[0, 1]), places=12)

    def test_degenerate_samples(self):
        with self.assertRaises(DegenerateSampleError):
            pearson_correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with self.assertRaises(DegenerateSampleError):
            pearson_correlation([1.0, 2.0], [1.0, 2.0])
        with self.assertRaises(DegenerateSampleError):
            pearson_correlation([1.0, 2.0, 3.0], [1.0, 2.0])


class RandomDesignTest(SimpleTestCase):
    """测试随机化设计"""

    RANGES = {'beta': (0.3, 0.7), 'u_max': (0.01, 0.1), 'h_max': (0.05, 0.25)}

    def test_latin_hypercube_is_stratified(self):
        design = latin_hypercube_design(self.RANGES, 64, seed=0)
        self.assertEqual(list(design.columns), ['beta', 'u_max', 'h_max'])
        for name, (lo, hi) in self.RANGES.items():
            strata = np.floor((design[name].to_numpy() - lo) / (hi - lo) * 64).astype(int)
            self.assertEqual(sorted(strata), list(range(64)))
        pd.testing.assert_frame_equal(design, latin_hypercube_design(self.RANGES, 64, seed=0))

    def test_delay_levels_are_balanced(self):
        design = latin_hypercube_design(self.RANGES, 64, seed=1, delay_levels={'t_delay_u': [0, 10, 20, 40]})
        self.assertEqual(design['t_delay_u'].value_counts().to_dict(), {0.0: 16, 10.0: 16, 20.0: 16, 40.0: 16})

    def test_cost_tracks_peak(self):
        base = BaseRun(X0, BASELINE, COSTS, 200, FAST)
        design = latin_hypercube_design(self.RANGES, 64, seed=0)
        frame = run_random_design(base, design)
        self.assertEqual(len(frame), 64)
        self.assertTrue(frame['error'].isna().all())
        self.assertGreaterEqual(pearson_correlation(frame['cost_total'], frame['peak_i']), 0.8)
        matrix = correlation_matrix(frame)
        self.assertAlmostEqual(matrix.loc['cost_total', 'peak_i'], matrix.loc['peak_i', 'cost_total'])
        self.assertLess(matrix.loc['h_max', 'peak_i'], 0.0)

    def test_repeatable(self):
        base = BaseRun(X0, BASELINE, COSTS, 100, FAST)
        design = latin_hypercube_design(self.RANGES, 8, seed=4, delay_levels={'t_delay_u': [0, 20]})
        first = run_random_design(base, design, workers=2)
        pd.testing.assert_frame_equal(first, run_random_design(base, design))
        summary = delay_cost_summary(first)
        self.assertEqual(list(summary.index), [0.0, 20.0])
        self.assertEqual(list(summary['count']), [4, 4])
        self.assertTrue((summary['min'] <= summary['median']).all())


class ShadowValueTest(SimpleTestCase):
    """测试容量约束的影子价值"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.config = FAST.replace(conv_tol=1e-6)
        cls.result = forward_backward_sweep(X0, ControlSchedule.zeros(100, 1.0), BASELINE, COSTS, 100, cls.config)

    def test_binding_bound_has_positive_value(self):
        shadow = capacity_shadow_value(self.result, 'u_max')
        self.assertGreater(shadow.value, 0.0)
        self.assertGreater(shadow.binding_time, 0.0)
        self.assertTrue(np.all(shadow.multiplier >= 0))

    def test_envelope_cross_check(self):
        check = shadow_value_finite_difference(self.result, 'u_max', bump=1e-3)
        self.assertGreaterEqual(check.multiplier_estimate, 1e-6)
        self.assertGreaterEqual(check.finite_difference, 1e-6)
        self.assertLessEqual(check.relative_error, 0.1)

    def test_non_binding_bound(self):
        cp = CostParams(c_h=0.0, c_nh=0.0, c_v=1e6, delta=0.05)
        result = forward_backward_sweep(X0, ControlSchedule.zeros(30, 1.0), BASELINE, cp, 30, FAST)
        self.assertEqual(capacity_shadow_value(result, 'u_max').value, 0.0)

    def test_zero_cost(self):
        result = forward_backward_sweep(X0, ControlSchedule.zeros(30, 1.0), BASELINE,
                                        CostParams(0.0, 0.0, 0.0, 0.05), 30, FAST)
        self.assertEqual(capacity_shadow_value(result, 'u_max').value, 0.0)
        self.assertEqual(capacity_shadow_value(result, 'h_max').value, 0.0)

    def test_rejects_unconverged_result(self):
        result = forward_backward_sweep(X0, ControlSchedule.zeros(30, 1.0), BASELINE, COSTS, 30,
                                        FAST.replace(max_iters=0))
        with self.assertRaises(NotConvergedError):
            capacity_shadow_value(result, 'u_max')
        with self.assertRaises(ParameterError):
            capacity_shadow_value(self.result, 'i_max')


class SweepRowTest(SimpleTestCase):
    """测试结果行"""

    def test_failed_row(self):
        row = SweepRow.failed(2, 0.5, "boom")
        self.assertFalse(row.ok)
        self.assertFalse(row.converged)
        self.assertEqual(row.as_dict()['error'], "boom")
