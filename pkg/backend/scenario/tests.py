"""
场景解析、流水线与命令行的测试用例
"""

import json
import os
import tempfile
from io import StringIO
from unittest import mock

import numpy as np
import pandas as pd
from django.conf import settings
from django.core.management import call_command
from django.test import SimpleTestCase

from epidemic.exceptions import ScenarioParseError, ScenarioValidationError
from . import pipelines
from .loader import build_scenario, parse_json, parse_scenario, parse_text, read_scenario_data
from .outputs import TRAJECTORY_COLUMNS, jsonable
from .pipelines import EXIT_NOT_CONVERGED, EXIT_OK, EXIT_RUNTIME, run_scenario

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'fixtures')

MODEL = {'beta': '0.5', 'sigma': '0.2', 'gamma': '0.1', 'u_max': '0.05', 'h_max': '0.2', 'i_max': '0.1'}
INITIAL = {'s': '0.90', 'e': '0.05', 'i': '0.05', 'r': '0.00'}


def fixture(name):
    return os.path.join(FIXTURES, name)


def scenario_data(horizon='50', dt='0.1', **sections):
    data = {'model': dict(MODEL), 'initial': dict(INITIAL), 'run': {'horizon': horizon, 'dt': dt}}
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    return data


def read_summary(result):
    with open(result.outputs['summary'], encoding='utf-8') as f:
        return json.load(f)


class ParseScenarioTest(SimpleTestCase):
    """测试场景文件解析与校验"""

    def test_baseline_values(self):
        scenario = parse_scenario(fixture('baseline.txt'))
        model = scenario.model
        self.assertEqual((model.beta, model.sigma, model.gamma), (0.5, 0.2, 0.1))
        self.assertEqual((model.u_max, model.h_max, model.i_max), (0.05, 0.2, 0.1))
        initial = scenario.initial
        self.assertEqual((initial.s, initial.e, initial.i, initial.r), (0.9, 0.05, 0.05, 0.0))
        self.assertEqual(scenario.mode, 'simulate')
        self.assertEqual(scenario.horizon, 400.0)
        self.assertEqual(scenario.dt, 0.01)
        self.assertEqual(scenario.schedule.n_cells, 400)
        self.assertTrue(np.all(scenario.schedule.u_values == 0.05))
        self.assertTrue(np.all(scenario.schedule.h_values == 0.2))

    def test_rejects_h_max_not_below_beta(self):
        data = scenario_data(model={'h_max': '0.6'})
        with self.assertRaises(ScenarioValidationError) as cm:
            build_scenario(data)
        self.assertIn('model', cm.exception.errors)

    def test_unknown_key_names_the_key(self):
        with self.assertRaises(ScenarioParseError) as cm:
            parse_text("model.beta = 0.5\nmodel.betta = 0.5\n")
        self.assertEqual(cm.exception.key, 'model.betta')
        self.assertEqual(cm.exception.line, 2)
        self.assertIn('betta', str(cm.exception))

    def test_syntax_errors(self):
        with self.assertRaises(ScenarioParseError):
            parse_text("model.beta 0.5")
        with self.assertRaises(ScenarioParseError):
            parse_text("beta = 0.5")
        with self.assertRaises(ScenarioParseError):
            parse_text("plot.width = 3")
        with self.assertRaises(ScenarioParseError) as cm:
            parse_text("model.beta = 0.5\n# 注释\nmodel.beta = 0.6")
        self.assertEqual(cm.exception.line, 3)
        with self.assertRaises(ScenarioParseError):
            parse_json('{"model": {"betta": 0.5}}')
        with self.assertRaises(ScenarioParseError):
            read_scenario_data(fixture('missing.txt'))

    def test_json_encoding_is_equivalent(self):
        payload = {
            'run': {'name': 'baseline-constant-controls', 'mode': 'simulate', 'horizon': 400, 'dt': 0.01, 'cell_dt': 1},
            'model': {'beta': 0.5, 'sigma': 0.2, 'gamma': 0.1, 'u_max': 0.05, 'h_max': 0.2, 'i_max': 0.1,
                      't_delay_u': 0, 't_delay_h': 0},
            'initial': {'s': 0.9, 'e': 0.05, 'i': 0.05, 'r': 0.0},
            'cost': {'c_h': 1, 'c_nh': 1, 'c_v': 1, 'delta': 0.05, 'kappa': 0},
            'schedule': {'label': 'constant-controls', 'u': 0.05, 'h': 0.2},
        }
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'baseline.json')
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(payload, f)
            from_json = parse_scenario(path)
        self.assertEqual(from_json.echo(), parse_scenario(fixture('baseline.txt')).echo())

    def test_overrides_and_mode(self):
        scenario = build_scenario(scenario_data(), mode='optimize',
                                  overrides={'run.seed': 3, 'run.dt': 0.05, 'run.horizon': None})
        self.assertEqual(scenario.mode, 'optimize')
        self.assertEqual(scenario.seed, 3)
        self.assertEqual(scenario.dt, 0.05)
        self.assertEqual(scenario.solver.dt, 0.05)
        self.assertEqual(scenario.horizon, 50.0)

    def test_cross_field_checks(self):
        with self.assertRaises(ScenarioValidationError) as cm:
            build_scenario(scenario_data(horizon='50.5'))
        self.assertIn('run', cm.exception.errors)
        with self.assertRaises(ScenarioValidationError) as cm:
            build_scenario(scenario_data(schedule={'u': '0.1'}))
        self.assertIn('schedule', cm.exception.errors)
        with self.assertRaises(ScenarioValidationError) as cm:
            build_scenario(scenario_data(), mode='sweep')
        self.assertIn('run.mode', cm.exception.errors)

    def test_step_schedule_and_delay(self):
        data = scenario_data(model={'t_delay_u': '10'}, schedule={'u': '0:0.05', 'h': '0:0.2, 20:0.1'})
        schedule = build_scenario(data).schedule
        self.assertEqual(schedule.u_values[9], 0.0)
        self.assertEqual(schedule.u_values[10], 0.05)
        self.assertEqual(schedule.h_values[19], 0.2)
        self.assertEqual(schedule.h_values[20], 0.1)

    def test_random_sweep_gets_default_design(self):
        scenario = build_scenario(scenario_data(), mode='random-sweep')
        self.assertEqual(scenario.design.samples, 64)
        self.assertEqual(scenario.design.ranges['beta'], (0.3, 0.7))
        with self.assertRaises(ScenarioValidationError):
            build_scenario(scenario_data(design={'beta': '0.3:0.7', 'h_max': '0.1:0.35'}), mode='random-sweep')


class SimulatePipelineTest(SimpleTestCase):
    """测试模拟流水线与输出格式"""

    def test_no_intervention_peak(self):
        scenario = parse_scenario(fixture('no_intervention.txt'))
        with tempfile.TemporaryDirectory() as tmp:
            result = run_scenario(scenario, tmp)
            self.assertTrue(result.success)
            self.assertEqual(result.exit_code, EXIT_OK)
            summary = read_summary(result)
            frame = pd.read_csv(result.outputs['trajectory'])
            self.assertFalse(os.path.exists(os.path.join(tmp, 'error.json')))
        self.assertAlmostEqual(summary['peak_i'], 0.32, delta=0.01)
        self.assertTrue(summary['converged'])
        self.assertLessEqual(summary['verification']['max_conservation_error'], 1e-9)
        self.assertEqual(tuple(frame.columns), TRAJECTORY_COLUMNS)
        self.assertEqual(len(frame), 20001)
        self.assertTrue(frame['lambda_i'].isna().all())
        self.assertEqual(frame['i'].max(), summary['peak_i'])

    def test_constant_controls_row(self):
        scenario = parse_scenario(fixture('baseline.txt'))
        with tempfile.TemporaryDirectory() as tmp:
            summary = read_summary(run_scenario(scenario, tmp))
        self.assertAlmostEqual(summary['peak_i'], 0.1104, delta=0.005)
        self.assertGreaterEqual(summary['final_size'], 0.999)
        self.assertGreater(summary['cost']['total'], 0.0)

    def test_solver_tolerances_flow_into_feasibility(self):
        """strict_tol 从场景文件一路传到成本评估"""
        default = parse_scenario(fixture('baseline.txt'))
        self.assertEqual(default.solver.strict_tol, settings.EPICTRL_DEFAULTS['solver']['strict_tol'])
        self.assertEqual(default.solver.conservation_tol, settings.EPICTRL_DEFAULTS['solver']['conservation_tol'])
        loose = parse_scenario(fixture('baseline.txt'), overrides={'solver.strict_tol': 0.05})
        self.assertEqual(loose.solver.strict_tol, 0.05)
        with tempfile.TemporaryDirectory() as tmp:
            strict_summary = read_summary(run_scenario(default, tmp))
        with tempfile.TemporaryDirectory() as tmp:
            loose_summary = read_summary(run_scenario(loose, tmp))
        # 全力控制下峰值约 0.1104，越界约 0.0104
        self.assertFalse(strict_summary['cost']['feasible_strict'])
        self.assertTrue(loose_summary['cost']['feasible_strict'])

    def test_summary_echoes_parsed_values(self):
        scenario = parse_scenario(fixture('schedule_strong_early.txt'), overrides={'run.horizon': 100})
        with tempfile.TemporaryDirectory() as tmp:
            summary = read_summary(run_scenario(scenario, tmp))
        echo = summary['scenario']
        self.assertEqual(echo, jsonable(scenario.echo()))
        self.assertEqual(echo['model'], scenario.model.as_dict())
        self.assertEqual(echo['run']['horizon'], 100.0)
        self.assertEqual(echo['schedule']['h'], [[0.0, 0.2], [40.0, 0.1], [80.0, 0.0]])
        self.assertEqual(echo['schedule']['label'], 'Strong Early (reconstruction)')

    def test_outputs_are_deterministic(self):
        scenario = parse_scenario(fixture('schedule_ramp_up.txt'), mode='compare-strategies',
                                  overrides={'run.horizon': 60, 'run.dt': 0.1})
        contents = []
        with tempfile.TemporaryDirectory() as tmp:
            for name in ('first', 'second'):
                out_dir = os.path.join(tmp, name)
                result = run_scenario(scenario, out_dir)
                self.assertTrue(result.success)
                files = {}
                for filename in ('trajectory.csv', 'summary.json', 'strategies.csv'):
                    with open(os.path.join(out_dir, filename), 'rb') as f:
                        files[filename] = f.read()
                contents.append(files)
        self.assertEqual(contents[0], contents[1])

    def test_unexpected_failure_maps_to_runtime_exit(self):
        scenario = build_scenario(scenario_data())
        with tempfile.TemporaryDirectory() as tmp:
            with mock.patch.object(pipelines, 'integrate', side_effect=FloatingPointError("溢出")):
                result = run_scenario(scenario, tmp)
            with open(os.path.join(tmp, 'error.json'), encoding='utf-8') as f:
                error = json.load(f)
        self.assertFalse(result.success)
        self.assertEqual(result.exit_code, EXIT_RUNTIME)
        self.assertEqual(error['exit_code'], EXIT_RUNTIME)
        self.assertEqual(error['error_type'], 'FloatingPointError')


class AnalysisPipelineTest(SimpleTestCase):
    """测试最终规模和策略对比流水线"""

    def test_final_size_pair(self):
        scenario = parse_scenario(fixture('final_size.txt'))
        with tempfile.TemporaryDirectory() as tmp:
            result = run_scenario(scenario, tmp)
            summary = read_summary(result)
        self.assertTrue(result.success)
        final_size = summary['final_size']
        self.assertLessEqual(final_size['relative_gap'], 1e-3)
        self.assertLessEqual(final_size['implicit_residual'], 1e-10)
        self.assertFalse(final_size['truncated'])
        self.assertAlmostEqual(final_size['final_size_lambert'], 1.0 - final_size['s_inf_lambert'])

    def test_compare_strategies(self):
        scenario = build_scenario(scenario_data(horizon='100'), mode='compare-strategies')
        with tempfile.TemporaryDirectory() as tmp:
            result = run_scenario(scenario, tmp)
            summary = read_summary(result)
            frame = pd.read_csv(result.outputs['strategies'])
        strategies = summary['strategies']
        self.assertEqual(sorted(strategies), ['combined', 'no-intervention', 'suppression-only', 'vaccination-only'])
        self.assertLess(strategies['combined']['peak_i'], strategies['no-intervention']['peak_i'])
        self.assertLess(strategies['suppression-only']['peak_i'], strategies['no-intervention']['peak_i'])
        self.assertEqual(frame['strategy'].value_counts().to_dict(), {name: 1001 for name in strategies})


class OptimizePipelineTest(SimpleTestCase):
    """测试优化与延拓流水线"""

    def test_no_iterations_reports_non_convergence(self):
        data = read_scenario_data(fixture('optimize.json'))
        scenario = build_scenario(data, overrides={'solver.max_iters': 0, 'run.horizon': 30})
        with tempfile.TemporaryDirectory() as tmp:
            result = run_scenario(scenario, tmp)
            summary = read_summary(result)
            with open(os.path.join(tmp, 'error.json'), encoding='utf-8') as f:
                error = json.load(f)
            frame = pd.read_csv(result.outputs['trajectory'])
        self.assertEqual(result.exit_code, EXIT_NOT_CONVERGED)
        self.assertFalse(summary['converged'])
        self.assertEqual(summary['convergence']['iterations'], 0)
        self.assertEqual(summary['initial_cost']['total'], summary['cost']['total'])
        self.assertNotIn('shadow_values', summary)
        self.assertEqual(error['exit_code'], EXIT_NOT_CONVERGED)
        self.assertFalse(frame['lambda_i'].isna().any())

    def test_kappa_continuation_with_inactive_penalty(self):
        data = scenario_data(horizon='60', model={'i_max': '0.999'},
                             cost={'c_h': '1000', 'c_nh': '1', 'c_v': '1000'},
                             continuation={'kappa_ladder': '10, 100, 1000'})
        scenario = build_scenario(data, mode='kappa-continuation')
        with tempfile.TemporaryDirectory() as tmp:
            result = run_scenario(scenario, tmp)
            summary = read_summary(result)
            ladder = pd.read_csv(result.outputs['ladder'])
        self.assertEqual(result.exit_code, EXIT_OK)
        self.assertEqual(list(ladder['value']), [10.0, 100.0, 1000.0])
        self.assertEqual(list(ladder['max_violation']), [0.0, 0.0, 0.0])
        self.assertEqual(summary['continuation']['parameter'], 'kappa')
        self.assertEqual(summary['shadow_values']['u_max']['value'], 0.0)

    def test_horizon_continuation_zero_cost(self):
        data = scenario_data(horizon='20', cost={'c_h': '0', 'c_nh': '0', 'c_v': '0', 'kappa': '0'},
                             continuation={'horizon_ladder': '20, 40'})
        scenario = build_scenario(data, mode='horizon-continuation')
        with tempfile.TemporaryDirectory() as tmp:
            result = run_scenario(scenario, tmp)
            summary = read_summary(result)
        self.assertTrue(result.success)
        self.assertTrue(summary['continuation']['horizon_converged'])
        self.assertEqual(summary['early_control_distance'], {'until': 10.0, 'distance': 0.0})
        self.assertEqual(summary['scenario']['continuation']['horizon_ladder'], [20.0, 40.0])


class SweepPipelineTest(SimpleTestCase):
    """测试扫描流水线"""

    def test_beta_sweep_rows(self):
        data = scenario_data(schedule={'u': '0.05', 'h': '0.2'},
                             sweep={'parameter': 'beta', 'values': '0.3, 0.5, 0.7'})
        scenario = build_scenario(data, mode='sweep')
        with tempfile.TemporaryDirectory() as tmp:
            result = run_scenario(scenario, tmp)
            summary = read_summary(result)
            frame = pd.read_csv(result.outputs['sweep'])
        self.assertTrue(result.success)
        self.assertEqual(list(frame['beta']), [0.3, 0.5, 0.7])
        self.assertEqual(list(frame['index']), [0, 1, 2])
        self.assertTrue(frame['error'].isna().all())
        self.assertTrue(frame['peak_i'].is_monotonic_increasing)
        self.assertEqual(summary['sweep']['failed'], 0)

    def test_random_sweep_tables(self):
        data = scenario_data(design={'samples': '8', 't_delay_u': '0, 20'})
        scenario = build_scenario(data, mode='random-sweep', overrides={'run.seed': 5})
        with tempfile.TemporaryDirectory() as tmp:
            result = run_scenario(scenario, tmp)
            summary = read_summary(result)
            frame = pd.read_csv(result.outputs['sweep'])
            correlation = pd.read_csv(result.outputs['correlation'], index_col=0)
            delays = pd.read_csv(result.outputs['t_delay_u_summary'])
        self.assertTrue(result.success)
        self.assertEqual(len(frame), 8)
        self.assertEqual(sorted(frame['t_delay_u'].unique()), [0.0, 20.0])
        self.assertAlmostEqual(correlation.loc['cost_total', 'cost_total'], 1.0)
        self.assertEqual(list(delays['count']), [4, 4])
        self.assertEqual(summary['design']['samples'], 8)


class PipelineRegistryTest(SimpleTestCase):
    """测试流水线注册表"""

    def setUp(self):
        self.scenario = build_scenario(scenario_data(), mode='simulate')

    def test_registered_pipeline_runs(self):
        class EchoPipeline(pipelines.BasePipelineExecutor):
            mode = 'echo'

            def run(self):
                return {'note': 'ok'}

        with mock.patch.dict(pipelines.PIPELINE_REGISTRY):
            pipelines.register_pipeline('echo', EchoPipeline)
            executor = pipelines.get_pipeline_executor(self.scenario.with_mode('echo'), 'unused')
            self.assertIsInstance(executor, EchoPipeline)
            with tempfile.TemporaryDirectory() as tmp:
                summary = read_summary(run_scenario(self.scenario.with_mode('echo'), tmp))
        self.assertNotIn('echo', pipelines.PIPELINE_REGISTRY)
        self.assertEqual(summary['note'], 'ok')
        self.assertEqual(summary['mode'], 'echo')

    def test_unknown_mode(self):
        scenario = self.scenario.with_mode('unknown')
        self.assertIsNone(pipelines.get_pipeline_executor(scenario, 'unused'))
        with tempfile.TemporaryDirectory() as tmp:
            result = run_scenario(scenario, tmp)
            with open(result.outputs['error'], encoding='utf-8') as f:
                error = json.load(f)
        self.assertEqual(result.exit_code, 2)
        self.assertEqual(error['error_type'], 'ParameterError')

    def test_success_removes_stale_error_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            stale = os.path.join(tmp, 'error.json')
            with open(stale, 'w', encoding='utf-8') as f:
                f.write('{}')
            result = run_scenario(self.scenario, tmp)
            self.assertTrue(result.success)
            self.assertFalse(os.path.exists(stale))


class CommandTest(SimpleTestCase):
    """测试 epi_ctrl 管理命令"""

    def test_success(self):
        with tempfile.TemporaryDirectory() as tmp:
            call_command('epi_ctrl', 'simulate', '--scenario', fixture('no_intervention.txt'), '--out', tmp,
                         '--horizon', '50', '--dt', '0.1', stdout=StringIO(), stderr=StringIO())
            self.assertTrue(os.path.exists(os.path.join(tmp, 'trajectory.csv')))
            with open(os.path.join(tmp, 'summary.json'), encoding='utf-8') as f:
                summary = json.load(f)
        self.assertEqual(summary['scenario']['run']['horizon'], 50.0)
        self.assertEqual(summary['scenario']['run']['dt'], 0.1)

    def test_invalid_scenario_exits_with_validation_code(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'bad.txt')
            with open(path, 'w', encoding='utf-8') as f:
                f.write("model.betta = 0.5\n")
            out_dir = os.path.join(tmp, 'out')
            with self.assertRaises(SystemExit) as cm:
                call_command('epi_ctrl', 'simulate', '--scenario', path, '--out', out_dir,
                             stdout=StringIO(), stderr=StringIO())
            with open(os.path.join(out_dir, 'error.json'), encoding='utf-8') as f:
                error = json.load(f)
        self.assertEqual(cm.exception.code, 2)
        self.assertEqual(error['error_type'], 'ScenarioParseError')
        self.assertEqual(error['details'], {'line': 1, 'key': 'model.betta'})

    def test_non_convergence_exit_code(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'optimize.txt')
            with open(path, 'w', encoding='utf-8') as f:
                for section, values in scenario_data(horizon='20', solver={'max_iters': '0'}).items():
                    for key, value in values.items():
                        f.write(f"{section}.{key} = {value}\n")
            with self.assertRaises(SystemExit) as cm:
                call_command('epi_ctrl', 'optimize', '--scenario', path, '--out', os.path.join(tmp, 'out'),
                             stdout=StringIO(), stderr=StringIO())
        self.assertEqual(cm.exception.code, EXIT_NOT_CONVERGED)
