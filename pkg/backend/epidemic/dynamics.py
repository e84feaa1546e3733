"""
受控 SEIR 动力学与正向积分器

采用固定步长的显式四阶 Runge-Kutta 方法。控制在每个网格单元内保持常数，
积分步长必须整除控制网格步长，这样成本求积和伴随积分可以复用同一套网格。
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple, Union

import numpy as np

from .exceptions import InvariantViolationError, ParameterError, ScheduleError
from .models import (
    CONSERVATION_TOL, ControlSchedule, EpidemicState, ModelParams, Trajectory,
    cells_for_horizon, validate_initial_state,
)

logger = logging.getLogger(__name__)

# 小于该量级的负值视为舍入误差并截断为 0
CLAMP_TOL = 1e-12

StateLike = Union[EpidemicState, Sequence[float]]
FeedbackPolicy = Callable[[float, float, float, float, float], Tuple[float, float]]


def _components(state: StateLike) -> Tuple[float, float, float, float]:
    if isinstance(state, EpidemicState):
        return state.s, state.e, state.i, state.r
    s, e, i, r = (float(v) for v in state)
    return s, e, i, r


def seir_rhs(state: StateLike, u: float, h: float, params: ModelParams) -> np.ndarray:
    """受控 SEIR 系统的右端项

    Args:
        state: 状态 (s, e, i, r)
        u: 接种率
        h: 抑制强度
        params: 模型参数

    Returns:
        np.ndarray: (ds, de, di, dr)，四个分量之和为 0（舍入误差内）

    Raises:
        ParameterError: h ≥ beta
    """
    if h >= params.beta:
        raise ParameterError(f"抑制强度 h={h} 不能达到或超过 beta={params.beta}")
    s, e, i, _ = _components(state)
    return np.array(_rhs(s, e, i, u, h, params.beta, params.sigma, params.gamma))


def _rhs(s, e, i, u, h, beta, sigma, gamma):
    infection = (beta - h) * s * i
    vaccination = u * s
    progression = sigma * e
    recovery = gamma * i
    return (-infection - vaccination,
            infection - progression,
            progression - recovery,
            recovery + vaccination)


def _rk4_step(s, e, i, r, u, h, dt, beta, sigma, gamma):
    k1 = _rhs(s, e, i, u, h, beta, sigma, gamma)
    half = 0.5 * dt
    k2 = _rhs(s + half * k1[0], e + half * k1[1], i + half * k1[2], u, h, beta, sigma, gamma)
    k3 = _rhs(s + half * k2[0], e + half * k2[1], i + half * k2[2], u, h, beta, sigma, gamma)
    k4 = _rhs(s + dt * k3[0], e + dt * k3[1], i + dt * k3[2], u, h, beta, sigma, gamma)
    w = dt / 6.0
    return (s + w * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            e + w * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
            i + w * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
            r + w * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]))


def _enforce_invariants(values, t, tol):
    clamped = []
    for name, value in zip('seir', values):
        if value < 0:
            if value < -CLAMP_TOL or not math.isfinite(value):
                raise InvariantViolationError(
                    f"t={t:.6g} 时分量 {name}={value:.3e} 为负，步长可能过大")
            value = 0.0
        clamped.append(value)
    drift = abs(clamped[0] + clamped[1] + clamped[2] + clamped[3] - 1.0)
    if not drift <= tol:
        raise InvariantViolationError(
            f"t={t:.6g} 时守恒误差 {drift:.3e} 超过容差 {tol:.1e}，步长可能过大")
    return clamped


def _check_grid(horizon_T: float, dt: float) -> int:
    if not horizon_T > 0:
        raise ScheduleError(f"时间长度必须为正: {horizon_T}")
    if not dt > 0:
        raise ScheduleError(f"积分步长必须为正: {dt}")
    return cells_for_horizon(horizon_T, dt)


def integrate(x0: EpidemicState, schedule: ControlSchedule, params: ModelParams,
              horizon_T: float, dt: float, conservation_tol: float = CONSERVATION_TOL) -> Trajectory:
    """在 [t0, t0+T] 上积分受控 SEIR 系统

    Args:
        x0: 初始状态，求和必须在 1e-12 内等于 1
        schedule: 控制日程，必须覆盖整个时间区间
        params: 模型参数
        horizon_T: 时间长度 (天)
        dt: 积分步长，必须整除控制网格步长
        conservation_tol: 每个采样点允许的守恒误差

    Returns:
        Trajectory: 轨迹

    Raises:
        StateError: 初始条件不合法
        ScheduleError: 网格不匹配或控制不容许
        InvariantViolationError: 积分过程中守恒或非负性被破坏
    """
    validate_initial_state(x0)
    n_steps = _check_grid(horizon_T, dt)
    steps_per_cell = cells_for_horizon(schedule.dt, dt)
    if schedule.n_cells * steps_per_cell < n_steps:
        raise ScheduleError(f"控制日程只覆盖到 t={schedule.t_end}，不足 T={horizon_T}")
    schedule.validate(params)

    beta, sigma, gamma = params.beta, params.sigma, params.gamma
    u_cells = schedule.u_values.tolist()
    h_cells = schedule.h_values.tolist()
    t0 = schedule.t0

    state = (x0.s, x0.e, x0.i, x0.r)
    states = [state]
    u_path = []
    h_path = []
    for n in range(n_steps):
        k = n // steps_per_cell
        u, h = u_cells[k], h_cells[k]
        u_path.append(u)
        h_path.append(h)
        state = _enforce_invariants(_rk4_step(*state, u, h, dt, beta, sigma, gamma),
                                    t0 + (n + 1) * dt, conservation_tol)
        states.append(state)
    u_path.append(u_path[-1])
    h_path.append(h_path[-1])

    times = t0 + dt * np.arange(n_steps + 1)
    trajectory = Trajectory(times, np.array(states), np.array(u_path), np.array(h_path),
                            metadata={'dt': dt, 'horizon': horizon_T})
    logger.debug(f"正向积分完成: T={horizon_T}, dt={dt}, 峰值 i={trajectory.peak_i:.6f} (t={trajectory.peak_time:.2f})")
    return trajectory


def integrate_feedback(x0: EpidemicState, policy: FeedbackPolicy, params: ModelParams,
                       horizon_T: float, dt: float, t0: float = 0.0,
                       conservation_tol: float = CONSERVATION_TOL) -> Trajectory:
    """以状态反馈律积分受控 SEIR 系统

    反馈律在 RK4 的每个阶段都重新计算，因此像边界维持律这样依赖当前状态的控制
    能保持 i ≡ I_max 到积分精度。

    Args:
        x0: 初始状态
        policy: 反馈律 policy(t, s, e, i, r) -> (u, h)
        params: 模型参数
        horizon_T: 时间长度
        dt: 积分步长
        t0: 起始时间

    Returns:
        Trajectory: 轨迹，u/h 记录每个采样点上反馈律的取值
    """
    validate_initial_state(x0)
    n_steps = _check_grid(horizon_T, dt)
    beta, sigma, gamma = params.beta, params.sigma, params.gamma

    def control(t, s, e, i, r):
        u, h = policy(t, s, e, i, r)
        if u < -CLAMP_TOL or u > params.u_max + CLAMP_TOL or h < -CLAMP_TOL or h > params.h_max + CLAMP_TOL:
            raise ScheduleError(f"反馈律在 t={t:.6g} 给出了不容许的控制 (u={u}, h={h})")
        if (t < params.t_delay_u and u != 0) or (t < params.t_delay_h and h != 0):
            raise ScheduleError(f"反馈律在延迟窗口内 t={t:.6g} 给出了非零控制")
        return u, h

    def rhs(t, s, e, i, r):
        u, h = control(t, s, e, i, r)
        return _rhs(s, e, i, u, h, beta, sigma, gamma)

    state = (x0.s, x0.e, x0.i, x0.r)
    states = [state]
    u_path = []
    h_path = []
    half = 0.5 * dt
    for n in range(n_steps):
        t = t0 + n * dt
        s, e, i, r = state
        u, h = control(t, s, e, i, r)
        u_path.append(u)
        h_path.append(h)
        k1 = _rhs(s, e, i, u, h, beta, sigma, gamma)
        k2 = rhs(t + half, s + half * k1[0], e + half * k1[1], i + half * k1[2], r + half * k1[3])
        k3 = rhs(t + half, s + half * k2[0], e + half * k2[1], i + half * k2[2], r + half * k2[3])
        k4 = rhs(t + dt, s + dt * k3[0], e + dt * k3[1], i + dt * k3[2], r + dt * k3[3])
        w = dt / 6.0
        stepped = tuple(state[c] + w * (k1[c] + 2 * k2[c] + 2 * k3[c] + k4[c]) for c in range(4))
        state = _enforce_invariants(stepped, t + dt, conservation_tol)
        states.append(state)
    u_last, h_last = control(t0 + n_steps * dt, *state)
    u_path.append(u_last)
    h_path.append(h_last)

    times = t0 + dt * np.arange(n_steps + 1)
    return Trajectory(times, np.array(states), np.array(u_path), np.array(h_path),
                      metadata={'dt': dt, 'horizon': horizon_T, 'feedback': 1.0})


def integral_identity_residual(traj: Trajectory, params: ModelParams) -> float:
    """非康复人口积分恒等式的残差

    计算 max_t |X(t) - X(0) + ∫[u s + γ i]dτ|，其中 X = s+e+i。每个积分步上控制取
    该步的值，s 和 i 用梯形公式求积。

    Returns:
        float: 最大残差
    """
    if traj.n_steps == 0:
        return 0.0
    dt = np.diff(traj.times)
    u_step, _ = traj.step_controls()
    s, i = traj.s, traj.i
    integrand = 0.5 * dt * (u_step * (s[:-1] + s[1:]) + params.gamma * (i[:-1] + i[1:]))
    drained = np.concatenate([[0.0], np.cumsum(integrand)])
    non_recovered = s + traj.e + i
    return float(np.max(np.abs(non_recovered - non_recovered[0] + drained)))


@dataclass(frozen=True)
class TrajectoryReport:
    """轨迹不变量检查结果"""

    max_conservation_error: float
    min_component: float
    monotonicity_violations: int
    final_i: float
    final_e: float

    @property
    def conserved(self) -> bool:
        return self.max_conservation_error <= CONSERVATION_TOL

    @property
    def positive(self) -> bool:
        return self.min_component >= -CLAMP_TOL

    @property
    def s_strictly_decreasing(self) -> bool:
        return self.monotonicity_violations == 0

    @property
    def decayed(self) -> bool:
        """i(T) 和 e(T) 都小于 1e-6"""
        return self.final_i < 1e-6 and self.final_e < 1e-6


def verify_trajectory(traj: Trajectory) -> TrajectoryReport:
    """检查轨迹的守恒性、非负性和 s 的严格单调性

    当 i(t_k) > 1e-12 或 u > 0 时要求 s(t_{k+1}) < s(t_k)。

    Returns:
        TrajectoryReport: 检查结果
    """
    states = traj.states
    conservation = float(np.max(np.abs(states.sum(axis=1) - 1.0)))
    u_step, _ = traj.step_controls()
    active = (traj.i[:-1] > 1e-12) | (u_step > 0)
    stalled = np.diff(traj.s) >= 0
    violations = int(np.count_nonzero(active & stalled))
    if violations:
        logger.warning(f"轨迹中有 {violations} 个步长上 s 没有严格下降")
    return TrajectoryReport(
        max_conservation_error=conservation,
        min_component=float(states.min()),
        monotonicity_violations=violations,
        final_i=float(traj.i[-1]),
        final_e=float(traj.e[-1]),
    )
