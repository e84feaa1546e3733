"""
Pontryagin 必要条件与前向-后向扫描

伴随方程从 λ(T) = 0 开始反向积分，切换函数
Φ_u = s(c_V e^{-δt} - λ_s)、Φ_h = i(c_H e^{-δt} + s(λ_s - λ_e)) 决定 bang-bang 控制，
奇异带内按配置的策略取值。
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from epidemic.analysis import boundary_maintenance_control
from epidemic.dynamics import integrate, seir_rhs
from epidemic.exceptions import AdjointDivergenceError, BoundViolationError, ParameterError, ScheduleError
from epidemic.models import ControlSchedule, EpidemicState, ModelParams, Trajectory, cells_for_horizon
from .cost import evaluate_cost, penalty_psi
from .models import (
    AdjointPath, AdjointState, ArcKind, CostParams, OptimizationResult, SingularArc,
    SingularPolicy, SolverConfig, SwitchingPath,
)

logger = logging.getLogger(__name__)

# 收敛后成本允许高于初始猜测的幅度
DETERIORATION_TOL = 1e-9


def adjoint_rhs(t: float, adj: AdjointState, state: EpidemicState, u: float, h: float,
                params: ModelParams, cp: CostParams) -> np.ndarray:
    """伴随方程 λ' = -∇_x H_κ

    Returns:
        np.ndarray: (λ_s', λ_e', λ_i')
    """
    return np.array(_adjoint_rhs(
        adj.lambda_s, adj.lambda_e, adj.lambda_i, state.s, state.i, u, h,
        math.exp(-cp.delta * t), params, cp,
    ))


def _adjoint_rhs(ls, le, li, s, i, u, h, discount, params, cp):
    transmission = params.beta - h
    d_s = -cp.c_v * u * discount + ls * (transmission * i + u) - le * transmission * i
    d_e = params.sigma * (le - li)
    marginal = cp.c_h * h + cp.c_nh + 2.0 * cp.kappa * max(0.0, i - params.i_max)
    d_i = -marginal * discount + (ls - le) * transmission * s + params.gamma * li
    return d_s, d_e, d_i


def integrate_adjoint(traj: Trajectory, schedule: ControlSchedule, params: ModelParams,
                      cp: CostParams) -> AdjointPath:
    """从 λ(T) = 0 反向积分伴随方程

    RK4 中间阶段需要的状态由正向采样的三次样条插值得到。

    Args:
        traj: 正向轨迹
        schedule: 生成该轨迹的控制日程
        params: 模型参数
        cp: 成本参数

    Returns:
        AdjointPath: 每个采样时刻的伴随变量

    Raises:
        ScheduleError: 日程与轨迹网格不一致
        AdjointDivergenceError: 出现非有限值
    """
    n = traj.n_steps
    values = np.zeros((n + 1, 3))
    if n == 0:
        return AdjointPath(traj.times, values)
    dt = traj.dt
    cells_for_horizon(schedule.dt, dt)

    times = traj.times
    spline = CubicSpline(times, traj.states[:, :3], axis=0)
    midpoints = spline(times[:-1] + 0.5 * dt)
    node_discount = np.exp(-cp.delta * times).tolist()
    mid_discount = np.exp(-cp.delta * (times[:-1] + 0.5 * dt)).tolist()
    s_nodes = traj.s.tolist()
    i_nodes = traj.i.tolist()
    s_mid = midpoints[:, 0].tolist()
    i_mid = midpoints[:, 2].tolist()
    u_step, h_step = (c.tolist() for c in traj.step_controls())

    ls, le, li = 0.0, 0.0, 0.0
    half = 0.5 * dt
    for k in range(n - 1, -1, -1):
        u, h = u_step[k], h_step[k]
        k1 = _adjoint_rhs(ls, le, li, s_nodes[k + 1], i_nodes[k + 1], u, h, node_discount[k + 1], params, cp)
        k2 = _adjoint_rhs(ls - half * k1[0], le - half * k1[1], li - half * k1[2],
                          s_mid[k], i_mid[k], u, h, mid_discount[k], params, cp)
        k3 = _adjoint_rhs(ls - half * k2[0], le - half * k2[1], li - half * k2[2],
                          s_mid[k], i_mid[k], u, h, mid_discount[k], params, cp)
        k4 = _adjoint_rhs(ls - dt * k3[0], le - dt * k3[1], li - dt * k3[2],
                          s_nodes[k], i_nodes[k], u, h, node_discount[k], params, cp)
        w = dt / 6.0
        ls -= w * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        le -= w * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        li -= w * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if not (math.isfinite(ls) and math.isfinite(le) and math.isfinite(li)):
            raise AdjointDivergenceError(f"伴随变量在 t={times[k]:.6g} 处发散，积分步长可能过大")
        values[k] = (ls, le, li)
    return AdjointPath(times, values)


def switching_functions(state: EpidemicState, adj: AdjointState, t: float, cp: CostParams) -> Tuple[float, float]:
    """切换函数 (Φ_u, Φ_h)"""
    discount = math.exp(-cp.delta * t)
    phi_u = state.s * (cp.c_v * discount - adj.lambda_s)
    phi_h = state.i * (cp.c_h * discount + state.s * (adj.lambda_s - adj.lambda_e))
    return phi_u, phi_h


def switching_path(traj: Trajectory, adjoints: AdjointPath, cp: CostParams, sing_tol: float) -> SwitchingPath:
    """在所有采样时刻上计算切换函数"""
    discount = np.exp(-cp.delta * traj.times)
    s, i = traj.s, traj.i
    phi_u = s * (cp.c_v * discount - adjoints.lambda_s)
    phi_h = i * (cp.c_h * discount + s * (adjoints.lambda_s - adjoints.lambda_e))
    band_u = sing_tol * (1.0 + float(np.max(np.abs(phi_u))))
    band_h = sing_tol * (1.0 + float(np.max(np.abs(phi_h))))
    return SwitchingPath(traj.times, phi_u, phi_h, band_u, band_h)


def hamiltonian(t: float, state: EpidemicState, adj: AdjointState, u: float, h: float,
                params: ModelParams, cp: CostParams) -> float:
    """当前值 Hamiltonian H_κ = e^{-δt}(L0 + κψ) + λ·f"""
    discount = math.exp(-cp.delta * t)
    running = cp.c_h * state.i * h + cp.c_nh * state.i + cp.c_v * u * state.s
    running += cp.kappa * penalty_psi(state.i, params.i_max)
    derivative = seir_rhs(state, u, h, params)
    return discount * running + adj.lambda_s * derivative[0] + adj.lambda_e * derivative[1] + adj.lambda_i * derivative[2]


def control_from_switching(phi_u: float, phi_h: float, t: float, params: ModelParams, cfg: SolverConfig,
                           state: Optional[EpidemicState] = None,
                           scale: Tuple[float, float] = (0.0, 0.0)) -> Tuple[float, float]:
    """由切换函数合成控制

    |Φ| 超出奇异带时按 bang-bang 律取上界或 0，带内按 singular_policy 取值；
    延迟窗口内强制为 0。

    Args:
        phi_u: 接种的切换函数值
        phi_h: 抑制的切换函数值
        t: 时间
        params: 模型参数
        cfg: 求解器配置
        state: 当前状态，boundary-feedback 策略需要其中的 s
        scale: Φ_u、Φ_h 的量级，奇异带宽度为 sing_tol·(1 + scale)

    Returns:
        Tuple[float, float]: (u, h)
    """
    band_u = cfg.sing_tol * (1.0 + scale[0])
    band_h = cfg.sing_tol * (1.0 + scale[1])

    if t < params.t_delay_u - 1e-12:
        u = 0.0
    elif phi_u < -band_u:
        u = params.u_max
    elif phi_u > band_u:
        u = 0.0
    else:
        u = 0.5 * params.u_max

    if t < params.t_delay_h - 1e-12:
        h = 0.0
    elif phi_h < -band_h:
        h = params.h_max
    elif phi_h > band_h:
        h = 0.0
    elif cfg.singular_policy is SingularPolicy.BOUNDARY_FEEDBACK:
        if state is None:
            raise ParameterError("boundary-feedback 策略需要当前状态")
        h, _ = boundary_maintenance_control(state.s, params)
    else:
        h = 0.5 * params.h_max
    return u, h


def _cell_average(values: np.ndarray, steps_per_cell: int) -> np.ndarray:
    """按网格单元对采样值做梯形平均"""
    steps = 0.5 * (values[:-1] + values[1:])
    return _per_cell(steps, steps_per_cell)


def _per_cell(step_values: np.ndarray, steps_per_cell: int) -> np.ndarray:
    n_cells = len(step_values) // steps_per_cell
    return step_values.reshape((n_cells, steps_per_cell) + step_values.shape[1:]).mean(axis=1)


def _negative_fraction(phi: np.ndarray, band: float) -> Tuple[np.ndarray, np.ndarray]:
    """每个积分步内 Φ 的线性插值取负值的时间比例

    Returns:
        Tuple[np.ndarray, np.ndarray]: (比例, 整步落在奇异带内的掩码)
    """
    a, b = phi[:-1], phi[1:]
    fraction = ((a < 0) & (b < 0)).astype(float)
    cross = (a < 0) != (b < 0)
    theta = a[cross] / (a[cross] - b[cross])
    fraction[cross] = np.where(a[cross] < 0, theta, 1.0 - theta)
    singular = (np.abs(a) <= band) & (np.abs(b) <= band)
    return fraction, singular


def _synthesize(schedule: ControlSchedule, traj: Trajectory, switching: SwitchingPath,
                params: ModelParams, cfg: SolverConfig) -> Tuple[np.ndarray, np.ndarray]:
    """逐点控制律在每个网格单元上的时间平均

    带外按 bang-bang 律（Φ 在积分步之间线性插值，单元内变号时取对应比例），
    带内按 singular_policy 取值，延迟冻结的单元置零。结果是 Φ 的连续函数。
    """
    steps_per_cell = cells_for_horizon(schedule.dt, traj.dt)
    u_fraction, u_singular = _negative_fraction(switching.phi_u, switching.band_u)
    h_fraction, h_singular = _negative_fraction(switching.phi_h, switching.band_h)

    if cfg.singular_policy is SingularPolicy.BOUNDARY_FEEDBACK:
        # s 趋于 0 时反馈律截断为 0
        s_mid = np.maximum(0.5 * (traj.s[:-1] + traj.s[1:]), 1e-300)
        h_band = np.clip(params.beta - params.gamma / s_mid, 0.0, params.h_max)
    else:
        h_band = 0.5 * params.h_max
    u_steps = np.where(u_singular, 0.5 * params.u_max, params.u_max * u_fraction)
    h_steps = np.where(h_singular, h_band, params.h_max * h_fraction)

    u_new = _per_cell(u_steps, steps_per_cell)
    h_new = _per_cell(h_steps, steps_per_cell)
    u_mask, h_mask = schedule.frozen_mask(params)
    u_new[u_mask] = 0.0
    h_new[h_mask] = 0.0
    return u_new, h_new


def _prepare_schedule(init: ControlSchedule, params: ModelParams, horizon_T: float) -> ControlSchedule:
    n_cells = cells_for_horizon(horizon_T, init.dt)
    if init.n_cells < n_cells:
        raise ScheduleError(f"初始猜测只覆盖到 t={init.t_end}，不足 T={horizon_T}")
    schedule = init.truncated(horizon_T) if init.n_cells > n_cells else init
    schedule.validate(params)
    return schedule


def forward_backward_sweep(x0: EpidemicState, init: ControlSchedule, params: ModelParams, cp: CostParams,
                           horizon_T: float, cfg: SolverConfig) -> OptimizationResult:
    """前向-后向扫描求解有限时间罚问题

    每次迭代依次做正向积分、伴随反向积分、逐单元的控制合成和带松弛的更新
    v ← (1 - damping)·v_old + damping·v_new。收敛判据是未松弛的差距 max|v_new - v_old| ≤ conv_tol，
    此时返回的控制、轨迹和切换函数相互一致，且与逐点最小化条件的偏差不超过 conv_tol。
    差距连续 patience 次不再下降时松弛系数减半；松弛系数已到 min_damping 仍停滞时
    以 status='stalled' 结束，converged=False。

    Args:
        x0: 初始状态
        init: 初始猜测（必须容许）
        params: 模型参数
        cp: 成本参数
        horizon_T: 时间长度，必须是控制网格步长的整数倍
        cfg: 求解器配置

    Returns:
        OptimizationResult: 结果；不收敛时 converged=False，不抛异常

    Raises:
        AdjointDivergenceError: 伴随变量发散
    """
    schedule = _prepare_schedule(init, params, horizon_T)
    initial_schedule = schedule
    trajectory = integrate(x0, schedule, params, horizon_T, cfg.dt, cfg.conservation_tol)
    initial_cost = evaluate_cost(trajectory, cp, params.i_max, params, cfg.strict_tol)

    if cp.is_zero:
        # 目标恒为 0，约定返回零控制
        zero = ControlSchedule.zeros(horizon_T, schedule.dt, schedule.t0)
        trajectory = integrate(x0, zero, params, horizon_T, cfg.dt, cfg.conservation_tol)
        adjoints = AdjointPath(trajectory.times, np.zeros((len(trajectory.times), 3)))
        logger.info("目标函数恒为 0，返回零控制")
        return OptimizationResult(
            schedule=zero, trajectory=trajectory, adjoints=adjoints,
            switching=switching_path(trajectory, adjoints, cp, cfg.sing_tol),
            cost=evaluate_cost(trajectory, cp, params.i_max, params, cfg.strict_tol),
            iterations=1, converged=True, control_residual_history=[0.0], cost_history=[0.0],
            initial_schedule=initial_schedule, initial_cost=initial_cost, status='degenerate',
            final_damping=cfg.damping, params=params, cost_params=cp, config=cfg,
        )

    damping = cfg.damping
    best_gap = math.inf
    stalled = 0
    history: List[float] = []
    cost_history: List[float] = []
    converged = False
    status = 'max-iters'
    iterations = 0
    adjoints: Optional[AdjointPath] = None
    switching: Optional[SwitchingPath] = None

    while iterations < cfg.max_iters:
        iterations += 1
        adjoints = integrate_adjoint(trajectory, schedule, params, cp)
        switching = switching_path(trajectory, adjoints, cp, cfg.sing_tol)
        u_new, h_new = _synthesize(schedule, trajectory, switching, params, cfg)
        # 未松弛的差距：当前控制与其自身切换函数给出的控制之间的上确界距离
        gap = float(max(np.max(np.abs(u_new - schedule.u_values)), np.max(np.abs(h_new - schedule.h_values))))
        history.append(gap)
        if gap <= cfg.conv_tol:
            converged = True
            status = 'converged'
            break

        schedule = schedule.with_values((1.0 - damping) * schedule.u_values + damping * u_new,
                                        (1.0 - damping) * schedule.h_values + damping * h_new)
        adjoints = switching = None
        trajectory = integrate(x0, schedule, params, horizon_T, cfg.dt, cfg.conservation_tol)
        cost_history.append(evaluate_cost(trajectory, cp, params.i_max, params, cfg.strict_tol).total)
        logger.debug(f"第 {iterations} 次迭代: 控制差距 {gap:.3e}, 成本 {cost_history[-1]:.8f}, 松弛系数 {damping:.3g}")

        if not cfg.adaptive_damping:
            continue
        if gap < best_gap:
            best_gap = gap
            stalled = 0
            continue
        stalled += 1
        if stalled < cfg.patience:
            continue
        if damping <= cfg.min_damping:
            status = 'stalled'
            logger.warning(f"松弛系数已降到下限 {cfg.min_damping:.3g}，控制差距仍为 {gap:.3e}，停止迭代")
            break
        damping = max(0.5 * damping, cfg.min_damping)
        best_gap = gap
        stalled = 0
        logger.debug(f"控制差距停止下降，松弛系数减半为 {damping:.3g}")

    if adjoints is None or switching is None:
        adjoints = integrate_adjoint(trajectory, schedule, params, cp)
        switching = switching_path(trajectory, adjoints, cp, cfg.sing_tol)
    cost = evaluate_cost(trajectory, cp, params.i_max, params, cfg.strict_tol)
    if converged and cost.total > initial_cost.total + DETERIORATION_TOL:
        logger.warning(f"扫描收敛但成本 {cost.total:.8f} 高于初始猜测 {initial_cost.total:.8f}")
        converged = False
        status = 'deteriorated'

    logger.info(f"前向-后向扫描结束: 状态 {status}, 迭代 {iterations} 次, 成本 {cost.total:.8f}")
    return OptimizationResult(
        schedule=schedule, trajectory=trajectory, adjoints=adjoints, switching=switching, cost=cost,
        iterations=iterations, converged=converged, control_residual_history=history,
        cost_history=cost_history, initial_schedule=initial_schedule, initial_cost=initial_cost,
        status=status, final_damping=damping, params=params, cost_params=cp, config=cfg,
    )


@dataclass(frozen=True)
class GradientCheck:
    """单元梯度的两种估计（都按单位时间归一化）"""

    adjoint_gradient: float
    fd_gradient: float
    frozen_by_delay: bool = False

    @property
    def relative_error(self) -> float:
        return abs(self.adjoint_gradient - self.fd_gradient) / max(1.0, abs(self.fd_gradient))


def gradient_check(x0: EpidemicState, schedule: ControlSchedule, params: ModelParams, cp: CostParams,
                   horizon_T: float, cell_index: int, control_kind: str, epsilon: float,
                   dt: float = 0.01) -> GradientCheck:
    """比较伴随梯度与中心差分梯度

    伴随梯度为 ∫_cell Φ dt / 单元宽度，差分梯度为 [J(v+ε) - J(v-ε)] / (2ε) / 单元宽度。

    Args:
        control_kind: 'u' 或 'h'
        epsilon: 扰动幅度，扰动后的控制必须仍在上下界内

    Returns:
        GradientCheck: 两种梯度；延迟窗口内的单元返回 0 并标记 frozen_by_delay

    Raises:
        BoundViolationError: 扰动后的控制离开 [0, 上界]
    """
    if control_kind not in ('u', 'h'):
        raise ParameterError(f"control_kind 必须是 'u' 或 'h'，当前为 {control_kind!r}")
    schedule = _prepare_schedule(schedule, params, horizon_T)
    if not 0 <= cell_index < schedule.n_cells:
        raise ParameterError(f"单元下标 {cell_index} 越界")
    u_mask, h_mask = schedule.frozen_mask(params)
    frozen = u_mask if control_kind == 'u' else h_mask
    if frozen[cell_index]:
        return GradientCheck(0.0, 0.0, frozen_by_delay=True)

    values = schedule.u_values if control_kind == 'u' else schedule.h_values
    upper = params.u_max if control_kind == 'u' else params.h_max
    current = float(values[cell_index])
    if current - epsilon < 0 or current + epsilon > upper:
        raise BoundViolationError(f"扰动 ±{epsilon} 使单元 {cell_index} 的 {control_kind}={current} 离开 [0, {upper}]")

    def perturbed_cost(sign: float) -> float:
        bumped = np.array(values)
        bumped[cell_index] += sign * epsilon
        if control_kind == 'u':
            candidate = schedule.with_values(bumped, schedule.h_values)
        else:
            candidate = schedule.with_values(schedule.u_values, bumped)
        return evaluate_cost(integrate(x0, candidate, params, horizon_T, dt), cp, params.i_max, params).total

    fd_gradient = (perturbed_cost(1.0) - perturbed_cost(-1.0)) / (2.0 * epsilon) / schedule.dt

    trajectory = integrate(x0, schedule, params, horizon_T, dt)
    adjoints = integrate_adjoint(trajectory, schedule, params, cp)
    switching = switching_path(trajectory, adjoints, cp, 0.0)
    phi = switching.phi_u if control_kind == 'u' else switching.phi_h
    steps_per_cell = cells_for_horizon(schedule.dt, dt)
    adjoint_gradient = float(_cell_average(phi, steps_per_cell)[cell_index])
    return GradientCheck(adjoint_gradient, fd_gradient)


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """布尔序列中所有极大的连续 True 区段 [start, end]"""
    runs = []
    start = None
    for k, flag in enumerate(mask):
        if flag and start is None:
            start = k
        elif not flag and start is not None:
            runs.append((start, k - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs


def detect_arcs(trajectory: Trajectory, params: ModelParams, switching: Optional[SwitchingPath] = None,
                min_length: float = 0.0, state_tol: float = 1e-6) -> List[SingularArc]:
    """检测奇异弧和边界维持弧

    奇异弧是 |Φ| 不超过奇异带的极大区间；边界维持弧是 |i - I_max| ≤ state_tol 的极大区间，
    并检查其上的边界恒等式 σe = γI_max。

    Args:
        trajectory: 轨迹
        params: 模型参数
        switching: 切换函数；为 None 时只检测边界维持弧
        min_length: 最短弧长 (天)
        state_tol: 状态容差

    Returns:
        List[SingularArc]: 按起始时间排序的弧
    """
    times = trajectory.times
    candidates = [(ArcKind.BOUNDARY, np.abs(trajectory.i - params.i_max) <= state_tol)]
    if switching is not None:
        candidates.append((ArcKind.SINGULAR_U, np.abs(switching.phi_u) <= switching.band_u))
        candidates.append((ArcKind.SINGULAR_H, np.abs(switching.phi_h) <= switching.band_h))

    arcs = []
    for kind, mask in candidates:
        for start, end in _runs(mask):
            length = times[end] - times[start]
            if length <= 0 or length < min_length:
                continue
            if kind is ArcKind.BOUNDARY:
                identity = params.sigma * trajectory.e[start:end + 1] - params.gamma * params.i_max
                residual = float(np.max(np.abs(identity)))
                verified = residual <= 10 * state_tol
                if not verified:
                    logger.warning(f"边界弧 [{times[start]:.2f}, {times[end]:.2f}] 上 σe - γI_max 的残差 {residual:.3e} 过大")
                arcs.append(SingularArc(float(times[start]), float(times[end]), kind, residual, verified))
            else:
                arcs.append(SingularArc(float(times[start]), float(times[end]), kind))
    return sorted(arcs, key=lambda arc: (arc.start, arc.kind.value))


def detect_singular_arcs(result: OptimizationResult, min_length: float, state_tol: float = 1e-6) -> List[SingularArc]:
    """在优化结果上检测奇异弧和边界维持弧"""
    if not result.converged:
        logger.warning("在未收敛的结果上检测奇异弧")
    return detect_arcs(result.trajectory, result.params, result.switching, min_length, state_tol)


def pointwise_minimality_violations(result: OptimizationResult, tol: float) -> List[Tuple[int, str]]:
    """列出控制与切换函数给出的 bang-bang 值不一致的网格单元

    只检查奇异带之外、延迟窗口之外的单元。Φ 在单元内不变号时期望值就是 bang-bang 值，
    变号时是 bang-bang 律在单元内的时间平均。

    Returns:
        List[Tuple[int, str]]: (单元下标, 'u' 或 'h')
    """
    schedule, params = result.schedule, result.params
    steps_per_cell = cells_for_horizon(schedule.dt, result.trajectory.dt)
    u_mask, h_mask = schedule.frozen_mask(params)
    violations = []
    checks: Sequence = (
        ('u', result.switching.phi_u, result.switching.band_u, schedule.u_values, params.u_max, u_mask),
        ('h', result.switching.phi_h, result.switching.band_h, schedule.h_values, params.h_max, h_mask),
    )
    for kind, phi, band, values, upper, frozen in checks:
        fraction, singular = _negative_fraction(phi, band)
        expected = upper * _per_cell(fraction, steps_per_cell)
        in_band = _per_cell(singular.astype(float), steps_per_cell) > 0
        mismatch = ~frozen & ~in_band & (np.abs(values - expected) > tol)
        violations.extend((int(k), kind) for k in np.flatnonzero(mismatch))
    return violations
