"""
参数扫描、相关性与影子价值

一维扫描和随机化设计都逐个样本运行完整的 simulate 或 optimize 流程；
样本之间相互独立，可以用线程池并行，输出按样本下标排序。
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.stats import qmc

from epidemic.dynamics import integrate
from epidemic.exceptions import DegenerateSampleError, NotConvergedError, ParameterError
from epidemic.models import ControlSchedule, Trajectory
from optimal_control.cost import evaluate_cost
from optimal_control.models import CostBreakdown, OptimizationResult
from optimal_control.pmp import forward_backward_sweep
from .models import BaseRun, ShadowValue, ShadowValueCheck, SweepRow, SweepSpec, outcome_columns

logger = logging.getLogger(__name__)

# 控制值不低于上界的这个比例时视为取到上界
AT_BOUND_FRACTION = 1.0 - 1e-2


def _initial_schedule(run: BaseRun, fallback_max: bool) -> ControlSchedule:
    if run.schedule is not None:
        return run.schedule.masked(run.params)
    if fallback_max:
        return ControlSchedule.upper_bounds(run.params, run.horizon, run.cell_dt)
    return ControlSchedule.zeros(run.horizon, run.cell_dt)


def execute_run(run: BaseRun, mode: str) -> Tuple[Trajectory, CostBreakdown, bool]:
    """运行一次 simulate 或 optimize

    Returns:
        Tuple[Trajectory, CostBreakdown, bool]: 轨迹、成本分解和是否收敛（simulate 恒为 True）
    """
    if mode == 'simulate':
        schedule = _initial_schedule(run, fallback_max=True)
        solver = run.solver
        trajectory = integrate(run.x0, schedule, run.params, run.horizon, solver.dt, solver.conservation_tol)
        return trajectory, evaluate_cost(trajectory, run.cost, run.params.i_max, run.params, solver.strict_tol), True
    init = _initial_schedule(run, fallback_max=False)
    result = forward_backward_sweep(run.x0, init, run.params, run.cost, run.horizon, run.solver)
    return result.trajectory, result.cost, result.converged


def _evaluate(index: int, value: float, run: BaseRun, mode: str) -> SweepRow:
    try:
        trajectory, cost, converged = execute_run(run, mode)
    except Exception as e:
        logger.warning(f"第 {index} 个样本（取值 {value:g}）运行失败: {str(e)}")
        return SweepRow.failed(index, value, f"{type(e).__name__}: {e}")
    return SweepRow(
        index=index, value=value, cost_total=cost.total, peak_i=trajectory.peak_i,
        final_size=trajectory.final_size, max_violation=cost.max_violation, converged=converged,
    )


def _map_ordered(func, jobs: Sequence, workers: int) -> List:
    if workers <= 1 or len(jobs) <= 1:
        return [func(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: func(*job), jobs))


def run_sweep(spec: SweepSpec, base: BaseRun) -> List[SweepRow]:
    """对一个参数的每个取值运行一次完整流程

    Args:
        spec: 扫描规格
        base: 基准运行

    Returns:
        List[SweepRow]: 按扫描顺序排列的结果行；单个取值失败时记录在行内，扫描继续

    Raises:
        ParameterError: 某个取值使模型参数不合法（例如 h_max ≥ beta）
    """
    values = spec.resolved_values()
    runs = [base.with_overrides({spec.parameter: value}) for value in values]
    logger.info(f"开始扫描 {spec.parameter}，共 {len(values)} 个取值，模式 {spec.mode}")
    jobs = [(index, value, run, spec.mode) for index, (value, run) in enumerate(zip(values, runs))]
    rows = _map_ordered(_evaluate, jobs, spec.workers)
    failed = sum(1 for row in rows if not row.ok)
    if failed:
        logger.warning(f"扫描 {spec.parameter} 中有 {failed} 个取值运行失败")
    return rows


def sweep_frame(rows: Sequence[SweepRow], parameter: str) -> pd.DataFrame:
    """把扫描结果行转换为表格，扫描列以参数名命名"""
    frame = pd.DataFrame([row.as_dict() for row in rows])
    return frame.rename(columns={'value': parameter})


def pearson_correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    """样本 Pearson 相关系数

    Raises:
        DegenerateSampleError: 长度不一致、少于 3 个样本或某一列方差为零
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateSampleError(f"两组样本长度不一致: {x.shape} != {y.shape}")
    if len(x) < 3:
        raise DegenerateSampleError(f"至少需要 3 个样本，当前 {len(x)} 个")
    dx = x - x.mean()
    dy = y - y.mean()
    norm = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if norm == 0.0:
        raise DegenerateSampleError("样本方差为零，相关系数无定义")
    return float(np.clip(np.dot(dx, dy) / norm, -1.0, 1.0))


def _bound_values(result: OptimizationResult, bound: str) -> Tuple[np.ndarray, np.ndarray, float]:
    if bound == 'u_max':
        return result.trajectory.u, result.switching.phi_u, result.params.u_max
    if bound == 'h_max':
        return result.trajectory.h, result.switching.phi_h, result.params.h_max
    raise ParameterError(f"bound 必须是 'u_max' 或 'h_max': {bound!r}")


def capacity_shadow_value(result: OptimizationResult, which: str) -> ShadowValue:
    """由切换函数恢复控制上界的乘子并积分

    在控制取到上界的采样点上 ν = (-Φ)+，其余为 0；返回 ∫ν dt = -∂V/∂bound。

    Args:
        result: 收敛的优化结果
        which: 'u_max' 或 'h_max'

    Returns:
        ShadowValue: 非负的影子价值

    Raises:
        NotConvergedError: 结果未收敛
    """
    if not result.converged:
        raise NotConvergedError(f"影子价值要求收敛的结果，当前状态: {result.status}")
    controls, phi, upper = _bound_values(result, which)
    at_bound = (controls >= AT_BOUND_FRACTION * upper) if upper > 0 else np.zeros(len(controls), dtype=bool)
    multiplier = np.where(at_bound, np.maximum(0.0, -phi), 0.0)
    times = result.trajectory.times
    value = float(trapezoid(multiplier, x=times)) if len(times) > 1 else 0.0
    return ShadowValue(bound=which, value=max(0.0, value), times=times, multiplier=multiplier)


def shadow_value_finite_difference(result: OptimizationResult, which: str, bump: float = 1e-3) -> ShadowValueCheck:
    """用价值函数的差分斜率交叉检验影子价值

    把上界放宽 bump 后从原解热启动重新求解，斜率为 (V - V_bumped) / bump。

    Raises:
        NotConvergedError: 原结果或重新求解未收敛
        ParameterError: 放宽后的上界违反 h_max < beta
    """
    estimate = capacity_shadow_value(result, which)
    params = result.params
    bumped = params.replace(**{which: getattr(params, which) + bump})
    horizon = result.trajectory.horizon
    x0 = result.trajectory.initial_state
    resolved = forward_backward_sweep(x0, result.schedule, bumped, result.cost_params, horizon, result.config)
    if not resolved.converged:
        raise NotConvergedError(f"放宽 {which} 后重新求解未收敛: {resolved.status}")
    slope = (result.cost.total - resolved.cost.total) / bump
    check = ShadowValueCheck(which, estimate.value, slope, bump)
    logger.info(f"{which} 影子价值: 乘子积分 {estimate.value:.6g}，差分斜率 {slope:.6g}，相对误差 {check.relative_error:.3g}")
    return check


def latin_hypercube_design(ranges: Dict[str, Tuple[float, float]], n_samples: int, seed: int = 0,
                           delay_levels: Optional[Dict[str, Sequence[float]]] = None) -> pd.DataFrame:
    """分层的 Latin 超立方样本

    Args:
        ranges: 连续参数名到 (lo, hi) 的映射
        n_samples: 样本数
        seed: 随机种子
        delay_levels: 离散参数（通常是延迟）到取值水平的映射，各水平均匀轮换后随机打乱

    Returns:
        pd.DataFrame: 每行一个样本
    """
    if n_samples < 1:
        raise ParameterError(f"样本数至少为 1: {n_samples}")
    names = list(ranges)
    frame = pd.DataFrame(index=range(n_samples))
    if names:
        lows = [ranges[name][0] for name in names]
        highs = [ranges[name][1] for name in names]
        if any(hi <= lo for lo, hi in zip(lows, highs)):
            raise ParameterError(f"采样区间必须满足 lo < hi: {ranges}")
        sampler = qmc.LatinHypercube(d=len(names), seed=seed)
        unit = sampler.random(n=n_samples)
        frame = pd.DataFrame(qmc.scale(unit, lows, highs), columns=names)
    rng = np.random.default_rng(seed)
    for name, levels in (delay_levels or {}).items():
        if len(levels) == 0:
            raise ParameterError(f"{name} 的取值水平不能为空")
        assigned = np.resize(np.asarray(levels, dtype=float), n_samples)
        frame[name] = rng.permutation(assigned)
    return frame


def run_random_design(base: BaseRun, design: pd.DataFrame, mode: str = 'simulate', workers: int = 1) -> pd.DataFrame:
    """对设计中的每个样本运行一次流程

    Returns:
        pd.DataFrame: 设计列加上成本、峰值、最终规模、最大超出量和收敛标志；失败样本另有 error 列说明
    """
    records = design.to_dict(orient='records')
    runs = []
    for index, record in enumerate(records):
        try:
            runs.append(base.with_overrides(record))
        except ParameterError as e:
            logger.warning(f"第 {index} 个样本参数不合法: {str(e)}")
            runs.append(None)

    def evaluate(index: int, run: Optional[BaseRun]) -> SweepRow:
        if run is None:
            return SweepRow.failed(index, math.nan, "ParameterError")
        return _evaluate(index, float(index), run, mode)

    rows = _map_ordered(evaluate, list(enumerate(runs)), workers)
    outcomes = pd.DataFrame([row.as_dict() for row in rows])[list(outcome_columns()) + ['error']]
    logger.info(f"随机化设计完成: {len(rows)} 个样本，失败 {int(outcomes['error'].notna().sum())} 个")
    return pd.concat([design.reset_index(drop=True), outcomes], axis=1)


def correlation_matrix(frame: pd.DataFrame, columns: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """参数与结果之间的 Pearson 相关矩阵（失败样本不参与）"""
    columns = list(columns) if columns is not None else [c for c in frame.columns if c not in ('converged', 'error')]
    data = frame[columns].dropna()
    if len(data) < 3:
        raise DegenerateSampleError(f"有效样本不足 3 个: {len(data)}")
    return data.astype(float).corr(method='pearson')


def delay_cost_summary(frame: pd.DataFrame, delay_column: str = 't_delay_u', value: str = 'cost_total') -> pd.DataFrame:
    """按延迟水平分组的成本五数概括（箱线图数据）"""
    if delay_column not in frame.columns:
        raise ParameterError(f"设计中没有 {delay_column} 列")
    grouped = frame.dropna(subset=[value]).groupby(delay_column)[value]
    summary = grouped.quantile([0.0, 0.25, 0.5, 0.75, 1.0]).unstack()
    summary.columns = ['min', 'q1', 'median', 'q3', 'max']
    summary['count'] = grouped.count()
    return summary
