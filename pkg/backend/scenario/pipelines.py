"""
场景流水线执行器

每种运行模式对应一个执行器。执行器负责调用求解器、写出产物并返回 ExecutionResult，
任何异常都在 execute 中捕获并转换为退出码，不会向调用方抛出。
"""

import logging
import os
import traceback
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Type

import pandas as pd

from epidemic.analysis import final_size_max_suppression, final_size_upper_bound
from epidemic.dynamics import integral_identity_residual, integrate, verify_trajectory
from epidemic.exceptions import (
    BoundViolationError, DegenerateSampleError, NotConvergedError, ParameterError,
    ScenarioParseError, ScenarioValidationError, ScheduleError, StateError,
)
from epidemic.models import ControlSchedule, Trajectory
from optimal_control.continuation import horizon_continuation, kappa_continuation
from optimal_control.cost import evaluate_cost
from optimal_control.models import ContinuationReport, CostBreakdown, OptimizationResult
from optimal_control.pmp import detect_arcs, detect_singular_arcs, forward_backward_sweep
from sensitivity.sweeps import (
    capacity_shadow_value, correlation_matrix, delay_cost_summary, execute_run,
    latin_hypercube_design, pearson_correlation, run_random_design, run_sweep, sweep_frame,
)
from .models import Scenario
from .outputs import (
    ERROR_FILE, SWEEP_FILE, write_csv, write_error_json, write_summary_json, write_trajectory_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NOT_CONVERGED = 3
EXIT_RUNTIME = 4

VALIDATION_ERRORS = (
    ScenarioParseError, ScenarioValidationError, ParameterError, StateError, ScheduleError, BoundViolationError,
)

# 最终规模的模拟在 i(T) 仍高于此值时视为被截断
FINAL_SIZE_TAIL_TOL = 1e-6


@dataclass
class ExecutionResult:
    """流水线执行结果

    Attributes:
        success: 是否成功（退出码为 0）
        outputs: 产物名称到文件路径的映射
        error_message: 失败原因
        logs: 执行过程中的关键日志
        exit_code: 进程退出码
        error_type: 异常类型名，写入 error.json
        details: 附加的错误细节（出错的字段、行号等）
    """
    success: bool = False
    outputs: Dict[str, Any] = field(default_factory=dict)
    error_message: str = ""
    logs: List[str] = field(default_factory=list)
    exit_code: int = EXIT_OK
    error_type: str = ""
    details: Dict[str, Any] = field(default_factory=dict)


def exit_code_for(error: Exception) -> int:
    """异常到退出码的映射"""
    if isinstance(error, VALIDATION_ERRORS):
        return EXIT_VALIDATION
    if isinstance(error, NotConvergedError):
        return EXIT_NOT_CONVERGED
    return EXIT_RUNTIME


def error_details(error: Exception) -> Dict[str, Any]:
    if isinstance(error, ScenarioValidationError):
        return {'fields': error.errors}
    if isinstance(error, ScenarioParseError):
        return {'line': error.line, 'key': error.key}
    return {}


def trajectory_summary(trajectory: Trajectory, cost: CostBreakdown) -> Dict[str, Any]:
    final = trajectory.final_state
    return {
        'peak_i': trajectory.peak_i,
        'peak_time': trajectory.peak_time,
        'final_size': trajectory.final_size,
        'final_state': {'s': final.s, 'e': final.e, 'i': final.i, 'r': final.r},
        'cost': cost.as_dict(),
    }


def verification_summary(trajectory: Trajectory, scenario: Scenario) -> Dict[str, Any]:
    report = verify_trajectory(trajectory)
    return {
        'max_conservation_error': report.max_conservation_error,
        'min_component': report.min_component,
        's_strictly_decreasing': report.s_strictly_decreasing,
        'integral_identity_residual': integral_identity_residual(trajectory, scenario.model),
        's_inf_upper_bound': final_size_upper_bound(trajectory, scenario.model),
    }


def optimization_summary(result: OptimizationResult, scenario: Scenario) -> Dict[str, Any]:
    """优化结果的摘要：轨迹指标、收敛诊断、奇异弧和影子价值"""
    summary = trajectory_summary(result.trajectory, result.cost)
    summary['convergence'] = result.summary()
    summary['initial_cost'] = result.initial_cost.as_dict() if result.initial_cost else None
    summary['arcs'] = [arc.as_dict() for arc in detect_singular_arcs(result, min_length=scenario.cell_dt)]
    if scenario.shadow_values and result.converged:
        summary['shadow_values'] = {
            which: capacity_shadow_value(result, which).as_dict() for which in ('u_max', 'h_max')
        }
    return summary


class BasePipelineExecutor(ABC):
    """流水线执行器基类

    子类实现 run：调用求解器、通过 write_* 写出产物，并返回该模式特有的摘要字段。
    未收敛时把 self.converged 置为 False，有样本失败时把原因追加到 self.failures。
    """

    mode = ''

    def __init__(self, scenario: Scenario, out_dir: str):
        self.scenario = scenario
        self.out_dir = out_dir
        self.outputs: Dict[str, str] = {}
        self.logs: List[str] = []
        self.converged = True
        self.failures: List[str] = []

    def log(self, message: str) -> None:
        self.logs.append(message)
        logger.info(message)

    def write_trajectory(self, trajectory: Trajectory, result: Optional[OptimizationResult] = None) -> None:
        adjoints = result.adjoints if result is not None else None
        switching = result.switching if result is not None else None
        self.outputs['trajectory'] = write_trajectory_csv(self.out_dir, trajectory, adjoints, switching)

    def write_table(self, name: str, filename: str, frame: pd.DataFrame, index: bool = False) -> None:
        self.outputs[name] = write_csv(frame, os.path.join(self.out_dir, filename), index=index)

    def initial_guess(self, horizon: Optional[float] = None) -> ControlSchedule:
        horizon = self.scenario.horizon if horizon is None else horizon
        if self.scenario.schedule is not None and horizon == self.scenario.horizon:
            return self.scenario.schedule.masked(self.scenario.model)
        return ControlSchedule.zeros(horizon, self.scenario.cell_dt)

    @abstractmethod
    def run(self) -> Dict[str, Any]:
        """
        执行流水线

        Returns:
            Dict[str, Any]: 写入 summary.json 的模式特有字段
        """
        pass

    def execute(self) -> ExecutionResult:
        """
        执行流水线并写出 summary.json

        Returns:
            ExecutionResult: 执行结果；异常被转换为对应的退出码
        """
        self.log(f"开始执行 {self.mode} 流水线，输出目录 {self.out_dir}")
        try:
            os.makedirs(self.out_dir, exist_ok=True)
            body = self.run()
            summary = {'mode': self.mode, 'scenario': self.scenario.echo(), 'converged': self.converged}
            summary.update(body)
            if self.failures:
                summary['failures'] = list(self.failures)
            self.outputs['summary'] = write_summary_json(self.out_dir, summary)
        except Exception as e:
            exit_code = exit_code_for(e)
            if exit_code == EXIT_RUNTIME:
                logger.error(f"{self.mode} 流水线运行失败: {str(e)}\n{traceback.format_exc()}")
            else:
                logger.warning(f"{self.mode} 流水线失败: {str(e)}")
            return ExecutionResult(
                success=False, outputs=self.outputs, error_message=str(e), logs=self.logs,
                exit_code=exit_code, error_type=type(e).__name__, details=error_details(e),
            )

        if self.failures:
            return ExecutionResult(
                success=False, outputs=self.outputs, error_message=f"{len(self.failures)} 个样本运行失败",
                logs=self.logs, exit_code=EXIT_RUNTIME, error_type='SampleFailure',
                details={'failures': list(self.failures)},
            )
        if not self.converged:
            return ExecutionResult(
                success=False, outputs=self.outputs, error_message="求解未收敛", logs=self.logs,
                exit_code=EXIT_NOT_CONVERGED, error_type=NotConvergedError.__name__,
            )
        self.log(f"{self.mode} 流水线完成")
        return ExecutionResult(success=True, outputs=self.outputs, logs=self.logs)


class SimulatePipeline(BasePipelineExecutor):
    """固定日程的正向模拟，未给出日程时不施加任何控制"""

    mode = 'simulate'

    def run(self) -> Dict[str, Any]:
        sc = self.scenario
        schedule = self.initial_guess()
        trajectory = integrate(sc.initial, schedule, sc.model, sc.horizon, sc.dt, sc.solver.conservation_tol)
        cost = evaluate_cost(trajectory, sc.cost, sc.model.i_max, sc.model, sc.solver.strict_tol)
        self.write_trajectory(trajectory)
        self.log(f"模拟完成: 峰值 i={trajectory.peak_i:.6f} (t={trajectory.peak_time:g})，最终规模 {trajectory.final_size:.6f}")

        summary = trajectory_summary(trajectory, cost)
        summary['verification'] = verification_summary(trajectory, sc)
        summary['arcs'] = [arc.as_dict() for arc in detect_arcs(trajectory, sc.model, min_length=sc.cell_dt)]
        return summary


class OptimizePipeline(BasePipelineExecutor):
    """前向-后向扫描求解罚问题"""

    mode = 'optimize'

    def run(self) -> Dict[str, Any]:
        sc = self.scenario
        result = forward_backward_sweep(sc.initial, self.initial_guess(), sc.model, sc.cost, sc.horizon, sc.solver)
        self.converged = result.converged
        self.write_trajectory(result.trajectory, result)
        self.log(f"优化结束: 状态 {result.status}，成本 {result.cost.total:.8f}")
        if not result.converged:
            logger.warning(f"优化未收敛（{result.status}），初始猜测的成本为 {result.initial_cost.total:.8f}")
        return optimization_summary(result, sc)


class ContinuationPipeline(BasePipelineExecutor):
    """延拓流水线的公共部分：写出阶梯表和最后一级的轨迹"""

    report: Optional[ContinuationReport] = None

    @abstractmethod
    def solve(self) -> ContinuationReport:
        pass

    def run(self) -> Dict[str, Any]:
        self.report = self.solve()
        final = self.report.final_result
        self.converged = all(rung.converged for rung in self.report.ladder)
        self.write_table('ladder', 'ladder.csv', pd.DataFrame([rung.as_dict() for rung in self.report.ladder]))
        self.write_trajectory(final.trajectory, final)
        summary = optimization_summary(final, self.scenario)
        summary['continuation'] = self.report.as_dict()
        return summary


class KappaContinuationPipeline(ContinuationPipeline):
    """沿 kappa 阶梯从软约束过渡到硬约束"""

    mode = 'kappa-continuation'

    def solve(self) -> ContinuationReport:
        sc = self.scenario
        report = kappa_continuation(sc.initial, sc.model, sc.cost, sc.horizon, sc.kappa_ladder, sc.solver,
                                    init=self.initial_guess(), cell_dt=sc.cell_dt)
        self.log(f"kappa 延拓完成: 各级最大超出量 {report.violations}")
        return report


class HorizonContinuationPipeline(ContinuationPipeline):
    """沿时间长度阶梯检查有限时间解的稳定性"""

    mode = 'horizon-continuation'

    def solve(self) -> ContinuationReport:
        sc = self.scenario
        ladder = sc.horizon_ladder
        report = horizon_continuation(sc.initial, sc.model, sc.cost, ladder, sc.solver,
                                      init=self.initial_guess(ladder[0]), cell_dt=sc.cell_dt)
        self.log(f"时间长度延拓完成: 收敛 {report.horizon_converged}")
        return report

    def run(self) -> Dict[str, Any]:
        summary = super().run()
        results = self.report.results
        # 只比较最短时间长度前一半上的控制
        until = self.scenario.horizon_ladder[0] / 2
        summary['early_control_distance'] = {
            'until': until,
            'distance': results[0].schedule.sup_distance(results[-1].schedule, until=until),
        }
        return summary


class SweepPipeline(BasePipelineExecutor):
    """一维参数扫描，每个取值一行写入 sweep.csv"""

    mode = 'sweep'

    def run(self) -> Dict[str, Any]:
        sc = self.scenario
        spec = sc.sweep
        base = sc.base_run()
        rows = run_sweep(spec, base)
        self.write_table('sweep', SWEEP_FILE, sweep_frame(rows, spec.parameter))

        trajectory, cost, converged = execute_run(base, spec.mode)
        self.write_trajectory(trajectory)

        self.failures = [f"{spec.parameter}={row.value:g}: {row.error}" for row in rows if not row.ok]
        self.converged = all(row.converged for row in rows if row.ok) and converged
        ok_rows = [row for row in rows if row.ok]
        try:
            cost_correlation = pearson_correlation([row.value for row in ok_rows], [row.cost_total for row in ok_rows])
        except DegenerateSampleError:
            cost_correlation = None
        self.log(f"扫描 {spec.parameter} 完成: {len(ok_rows)}/{len(rows)} 个取值成功")
        return {
            'base': trajectory_summary(trajectory, cost),
            'sweep': {
                'parameter': spec.parameter,
                'mode': spec.mode,
                'rows': len(rows),
                'failed': len(rows) - len(ok_rows),
                'value_cost_correlation': cost_correlation,
            },
        }


class FinalSizePipeline(BasePipelineExecutor):
    """最大抑制、无接种情况下最终规模的解析值与模拟值对照"""

    mode = 'final-size'

    def run(self) -> Dict[str, Any]:
        sc = self.scenario
        params = sc.model
        if params.t_delay_h > 0:
            logger.warning(f"最终规模的解析式假设从 t=0 开始抑制，忽略 t_delay_h={params.t_delay_h}")
            params = params.replace(t_delay_h=0.0)
        analytic = final_size_max_suppression(sc.initial, params)
        schedule = ControlSchedule.constant(params, sc.horizon, sc.cell_dt, u=0.0, h=params.h_max)
        trajectory = integrate(sc.initial, schedule, params, sc.horizon, sc.dt, sc.solver.conservation_tol)
        self.write_trajectory(trajectory)

        s_simulated = float(trajectory.s[-1])
        relative_gap = abs(s_simulated - analytic.s_inf) / analytic.s_inf
        truncated = bool(trajectory.i[-1] >= FINAL_SIZE_TAIL_TOL)
        if truncated:
            logger.warning(f"T={sc.horizon} 时 i(T)={trajectory.i[-1]:.3e} 仍未衰减，模拟的 s_inf 偏大")
        self.log(f"最终规模: Lambert W s_inf={analytic.s_inf:.10f}，模拟 s(T)={s_simulated:.10f}，相对差 {relative_gap:.3e}")
        return {
            'final_size': {
                's_inf_lambert': analytic.s_inf,
                's_inf_simulated': s_simulated,
                'relative_gap': relative_gap,
                'implicit_residual': analytic.implicit_residual,
                'final_size_lambert': analytic.final_size,
                'final_size_simulated': trajectory.final_size,
                'truncated': truncated,
            },
            'peak_i': trajectory.peak_i,
            'peak_time': trajectory.peak_time,
        }


class CompareStrategiesPipeline(BasePipelineExecutor):
    """对比不干预、只接种、只抑制和组合四种常数策略

    场景给出日程时，作为第五种策略一并比较。所有轨迹以长表格式写入 strategies.csv。
    """

    mode = 'compare-strategies'

    def strategies(self) -> Dict[str, ControlSchedule]:
        sc = self.scenario
        model = sc.model

        def constant(u, h):
            return ControlSchedule.constant(model, sc.horizon, sc.cell_dt, u, h)

        plans = {
            'no-intervention': constant(0.0, 0.0),
            'vaccination-only': constant(model.u_max, 0.0),
            'suppression-only': constant(0.0, model.h_max),
            'combined': constant(model.u_max, model.h_max),
        }
        if sc.schedule is not None:
            plans[sc.schedule_label or 'schedule'] = sc.schedule.masked(model)
        return plans

    def run(self) -> Dict[str, Any]:
        sc = self.scenario
        frames, rows = [], {}
        for name, schedule in self.strategies().items():
            trajectory = integrate(sc.initial, schedule, sc.model, sc.horizon, sc.dt, sc.solver.conservation_tol)
            cost = evaluate_cost(trajectory, sc.cost, sc.model.i_max, sc.model, sc.solver.strict_tol)
            rows[name] = {
                'peak_i': trajectory.peak_i,
                'peak_time': trajectory.peak_time,
                'final_size': trajectory.final_size,
                'cost_total': cost.total,
                'max_violation': cost.max_violation,
                'feasible_strict': cost.feasible_strict,
            }
            frame = pd.DataFrame({'t': trajectory.times, 's': trajectory.s, 'e': trajectory.e, 'i': trajectory.i,
                                  'r': trajectory.r, 'u': trajectory.u, 'h': trajectory.h})
            frame.insert(0, 'strategy', name)
            frames.append(frame)
            self.log(f"策略 {name}: 峰值 {trajectory.peak_i:.4f}，最终规模 {trajectory.final_size:.4f}，成本 {cost.total:.6f}")
            if name == 'combined':
                self.write_trajectory(trajectory)
        self.write_table('strategies', 'strategies.csv', pd.concat(frames, ignore_index=True))
        return {'strategies': rows}


class RandomSweepPipeline(BasePipelineExecutor):
    """Latin 超立方随机化设计：结果表、相关矩阵和按延迟分组的成本概括"""

    mode = 'random-sweep'

    def run(self) -> Dict[str, Any]:
        sc = self.scenario
        design_spec = sc.design
        base = sc.base_run()
        design = latin_hypercube_design(design_spec.ranges, design_spec.samples, seed=sc.seed,
                                        delay_levels=design_spec.delay_levels)
        frame = run_random_design(base, design, mode=design_spec.mode, workers=sc.workers)
        self.write_table('sweep', SWEEP_FILE, frame)

        trajectory, cost, _ = execute_run(base, design_spec.mode)
        self.write_trajectory(trajectory)

        failed = frame['error'].notna()
        self.failures = [f"样本 {index}: {frame.at[index, 'error']}" for index in frame.index[failed]]
        self.converged = bool(frame.loc[~failed, 'converged'].all())

        matrix = correlation_matrix(frame)
        self.write_table('correlation', 'correlation.csv', matrix, index=True)
        delays = {}
        for column in design_spec.delay_levels:
            grouped = delay_cost_summary(frame, delay_column=column)
            self.write_table(f'{column}_summary', f'{column}_summary.csv', grouped, index=True)
            delays[column] = grouped.reset_index().to_dict(orient='records')

        cost_peak = float(matrix.loc['cost_total', 'peak_i'])
        self.log(f"随机化设计完成: {len(frame)} 个样本，corr(成本, 峰值)={cost_peak:.4f}")
        return {
            'base': trajectory_summary(trajectory, cost),
            'design': {
                'samples': len(frame),
                'failed': int(failed.sum()),
                'cost_peak_correlation': cost_peak,
                'delay_summaries': delays,
            },
        }


# 运行模式到执行器类的映射
PIPELINE_REGISTRY: Dict[str, Type[BasePipelineExecutor]] = {
    'simulate': SimulatePipeline,
    'optimize': OptimizePipeline,
    'kappa-continuation': KappaContinuationPipeline,
    'horizon-continuation': HorizonContinuationPipeline,
    'sweep': SweepPipeline,
    'final-size': FinalSizePipeline,
    'compare-strategies': CompareStrategiesPipeline,
    'random-sweep': RandomSweepPipeline,
}


def register_pipeline(mode: str, executor_class: Type[BasePipelineExecutor]) -> None:
    """
    注册新的流水线执行器

    Args:
        mode: 运行模式
        executor_class: 执行器类
    """
    PIPELINE_REGISTRY[mode] = executor_class


def get_pipeline_executor(scenario: Scenario, out_dir: str) -> Optional[BasePipelineExecutor]:
    """
    获取场景模式对应的执行器实例

    Returns:
        BasePipelineExecutor: 执行器实例，找不到时返回 None
    """
    executor_class = PIPELINE_REGISTRY.get(scenario.mode)
    if executor_class is None:
        logger.warning(f"找不到模式 {scenario.mode} 的流水线执行器")
        return None
    return executor_class(scenario, out_dir)


def run_scenario(scenario: Scenario, out_dir: str) -> ExecutionResult:
    """
    执行场景并写出全部产物

    成功时删除输出目录中残留的 error.json；失败时写出新的 error.json。

    Args:
        scenario: 校验后的场景
        out_dir: 输出目录

    Returns:
        ExecutionResult: 执行结果
    """
    executor = get_pipeline_executor(scenario, out_dir)
    if executor is None:
        result = ExecutionResult(success=False, error_message=f"未知的运行模式: {scenario.mode}",
                                 exit_code=EXIT_VALIDATION, error_type=ParameterError.__name__)
    else:
        result = executor.execute()

    error_path = os.path.join(out_dir, ERROR_FILE)
    if result.success:
        if os.path.exists(error_path):
            os.remove(error_path)
    else:
        path = write_error_json(out_dir, result.exit_code, result.error_type, result.error_message, result.details)
        if path is not None:
            result.outputs['error'] = path
    return result
