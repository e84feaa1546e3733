"""
kappa 与时间长度延拓

沿递增的罚项权重或时间长度阶梯重复求解，每一级从上一级收敛的控制热启动。
"""

import logging
from typing import List, Optional, Sequence, Tuple

from epidemic.exceptions import ParameterError
from epidemic.models import ControlSchedule, EpidemicState, ModelParams
from .models import ContinuationReport, ContinuationRung, CostParams, OptimizationResult, SolverConfig
from .pmp import forward_backward_sweep

logger = logging.getLogger(__name__)

# 相邻两级最大超出量允许的上升幅度（求解噪声）
VIOLATION_TOL = 1e-9
# 最后一级的最大超出量不应超过第一级的 1/BRIDGE_RATIO
BRIDGE_RATIO = 10.0
# 最后一级允许的容量超出量
FEASIBILITY_TOL = 0.01


def _check_ladder(ladder: Sequence[float], name: str) -> None:
    if len(ladder) == 0:
        raise ParameterError(f"{name} 阶梯不能为空")
    for previous, current in zip(ladder, ladder[1:]):
        if not current > previous:
            raise ParameterError(f"{name} 阶梯必须严格递增: {list(ladder)}")


def _solve_rung(x0: EpidemicState, init: ControlSchedule, params: ModelParams, cp: CostParams,
                horizon_T: float, cfg: SolverConfig) -> OptimizationResult:
    """求解一级；不收敛时以减半的松弛系数重试一次"""
    result = forward_backward_sweep(x0, init, params, cp, horizon_T, cfg)
    if result.converged or cfg.max_iters == 0:
        return result
    retry_cfg = cfg.replace(damping=0.5 * cfg.damping, min_damping=min(cfg.min_damping, 0.5 * cfg.damping))
    logger.warning(f"本级求解未收敛（{result.status}），以松弛系数 {retry_cfg.damping:.3g} 重试")
    retry = forward_backward_sweep(x0, init, params, cp, horizon_T, retry_cfg)
    return retry if retry.converged or retry.cost.total < result.cost.total else result


def _check_violations(kappa_ladder: Sequence[float], violations: List[float]) -> Tuple[bool, bool]:
    """检查最大超出量沿 kappa 阶梯不上升，以及最后一级是否接近可行

    Returns:
        Tuple[bool, bool]: (violation_monotone, bridge_met)
    """
    monotone = True
    for k in range(1, len(violations)):
        if violations[k] > violations[k - 1] + VIOLATION_TOL:
            monotone = False
            logger.warning(f"kappa 从 {kappa_ladder[k - 1]:g} 增加到 {kappa_ladder[k]:g} 时最大超出量"
                           f"由 {violations[k - 1]:.3e} 上升到 {violations[k]:.3e}")

    first, last = violations[0], violations[-1]
    bridge_met = last <= FEASIBILITY_TOL and (len(violations) == 1 or first == 0 or last <= first / BRIDGE_RATIO)
    if not bridge_met:
        logger.warning(f"最后一级 kappa={kappa_ladder[-1]:g} 的最大超出量 {last:.3e} 未达到目标"
                       f"（第一级 {first:.3e}，要求不超过其 1/{BRIDGE_RATIO:g} 且不超过 {FEASIBILITY_TOL}）")
    return monotone, bridge_met


def kappa_continuation(x0: EpidemicState, params: ModelParams, cp_base: CostParams, horizon_T: float,
                       kappa_ladder: Sequence[float], cfg: SolverConfig,
                       init: Optional[ControlSchedule] = None, cell_dt: float = 1.0) -> ContinuationReport:
    """沿递增的 kappa 阶梯求解罚问题

    Args:
        x0: 初始状态
        params: 模型参数
        cp_base: 成本参数（kappa 会被阶梯取值覆盖）
        horizon_T: 时间长度
        kappa_ladder: 严格递增的 kappa 序列
        cfg: 求解器配置
        init: 第一级的初始猜测，默认为零控制
        cell_dt: 默认初始猜测的控制网格步长

    Returns:
        ContinuationReport: 每一级的成本、容量超出量和与上一级的控制距离，
            以及超出量是否单调、最后一级是否达到可行目标
    """
    _check_ladder(kappa_ladder, 'kappa')
    if kappa_ladder[0] < 0:
        raise ParameterError("kappa 不能为负")
    warm = init or ControlSchedule.zeros(horizon_T, cell_dt)
    ladder, results = [], []
    previous: Optional[OptimizationResult] = None
    for kappa in kappa_ladder:
        result = _solve_rung(x0, warm, params, cp_base.replace(kappa=float(kappa)), horizon_T, cfg)
        distance = previous.schedule.sup_distance(result.schedule) if previous is not None else None
        ladder.append(ContinuationRung(
            value=float(kappa), cost_total=result.cost.total, max_violation=result.cost.max_violation,
            control_distance=distance, converged=result.converged, iterations=result.iterations,
        ))
        results.append(result)
        logger.info(f"kappa={kappa:g}: 成本 {result.cost.total:.6f}, 最大超出量 {result.cost.max_violation:.3e}, 收敛 {result.converged}")
        if result.converged:
            warm = result.schedule
        else:
            logger.warning(f"kappa={kappa:g} 未收敛，下一级从上一个收敛的控制热启动")
        previous = result

    monotone, bridge_met = _check_violations(kappa_ladder, [rung.max_violation for rung in ladder])
    return ContinuationReport(parameter='kappa', ladder=ladder, warm_started=True, results=results,
                              violation_monotone=monotone, bridge_met=bridge_met)


def horizon_continuation(x0: EpidemicState, params: ModelParams, cp: CostParams, t_ladder: Sequence[float],
                         cfg: SolverConfig, init: Optional[ControlSchedule] = None,
                         cell_dt: float = 1.0) -> ContinuationReport:
    """沿递增的时间长度阶梯求解

    每一级报告与上一级的成本差 |J(T_n) - J(T_{n-1})| 和所用的尾项上界 C·e^{-δT_{n-1}}/δ
    （记录在该级的 tail_bound 中，第一级为 None）；
    最后一级的成本差不超过尾项上界加 conv_tol 时认为时间长度已收敛。

    Args:
        t_ladder: 严格递增的时间长度序列
        init: 第一级的初始猜测，默认为零控制
        cell_dt: 默认初始猜测的控制网格步长（给定 init 时取 init.dt）

    Returns:
        ContinuationReport: 延拓报告
    """
    _check_ladder(t_ladder, 'horizon')
    if t_ladder[0] <= 0:
        raise ParameterError("时间长度必须为正")
    warm = init or ControlSchedule.zeros(t_ladder[0], cell_dt)
    ladder, results = [], []
    previous: Optional[OptimizationResult] = None
    horizon_converged = None
    for horizon in t_ladder:
        start = warm.extended(horizon)
        result = _solve_rung(x0, start, params, cp, horizon, cfg)
        distance, gap, bound = None, None, None
        if previous is not None:
            distance = previous.schedule.sup_distance(result.schedule)
            gap = abs(result.cost.total - previous.cost.total)
            bound = previous.cost.tail_bound
            horizon_converged = gap <= bound + cfg.conv_tol
        ladder.append(ContinuationRung(
            value=float(horizon), cost_total=result.cost.total, max_violation=result.cost.max_violation,
            control_distance=distance, converged=result.converged, iterations=result.iterations,
            tail_bound=bound, cost_gap=gap,
        ))
        results.append(result)
        logger.info(f"T={horizon:g}: 成本 {result.cost.total:.8f}, 成本差 {gap}, 尾项上界 {bound}")
        if result.converged:
            warm = result.schedule
        previous = result
    if horizon_converged is False:
        logger.warning("最后一级的成本差超过尾项上界加 conv_tol，时间长度未收敛")
    return ContinuationReport(parameter='horizon', ladder=ladder, warm_started=True, results=results,
                              horizon_converged=horizon_converged)
