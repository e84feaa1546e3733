"""
解析与半解析结果

包括 Lambert W 主分支、最大抑制下的最终规模、最终规模上界、有效再生数、
边界维持反馈律以及以 s 为积分变量的时间无关表示的残差检查。
"""

import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .exceptions import (
    DegenerateChangeOfVariablesError, InvariantViolationError, LambertDomainError,
    ParameterError, StateError,
)
from .models import EpidemicState, ModelParams, Trajectory, validate_initial_state

logger = logging.getLogger(__name__)

BRANCH_POINT = -1.0 / math.e
LAMBERT_MAX_ITERS = 50
IMPLICIT_RESIDUAL_TOL = 1e-10
DEGENERATE_DENOMINATOR = 1e-14


def lambert_w0(z: float) -> float:
    """Lambert W 函数的主分支 W0

    使用 Halley 迭代，初值按区间选择：靠近分支点用级数展开，z > e 用对数近似，
    其余情况用 z/(1+z)。

    Args:
        z: 自变量，要求 z ≥ -1/e

    Returns:
        float: 满足 w·e^w = z 且 w ≥ -1 的 w

    Raises:
        LambertDomainError: z < -1/e - 1e-15 或 z 不是有限数
    """
    z = float(z)
    if not math.isfinite(z):
        raise LambertDomainError(f"Lambert W 的自变量必须是有限数: {z}")
    if z < BRANCH_POINT - 1e-15:
        raise LambertDomainError(f"Lambert W 主分支要求 z ≥ -1/e，当前 z={z!r}")
    if z <= BRANCH_POINT:
        return -1.0
    if z == 0.0:
        return 0.0

    if z < -0.25 / math.e:
        p = math.sqrt(max(0.0, 2.0 * (math.e * z + 1.0)))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif z > math.e:
        log_z = math.log(z)
        w = log_z - math.log(log_z)
    else:
        w = z / (1.0 + z)

    for _ in range(LAMBERT_MAX_ITERS):
        exp_w = math.exp(w)
        f = w * exp_w - z
        w_plus_1 = w + 1.0
        if f == 0.0 or w_plus_1 == 0.0:
            break
        denominator = exp_w * w_plus_1 - (w + 2.0) * f / (2.0 * w_plus_1)
        if denominator == 0.0:
            break
        w_next = max(w - f / denominator, -1.0)
        if abs(w_next - w) <= 1e-15 * (1.0 + abs(w_next)):
            w = w_next
            break
        w = w_next
    return w


@dataclass(frozen=True)
class FinalSizeResult:
    """最大抑制、无接种情况下的最终规模

    Attributes:
        s_inf: 极限易感比例
        final_size: 1 - s_inf
        implicit_residual: |ln(s_inf/s0) + (β̃/γ)(X0 - s_inf)|
    """

    s_inf: float
    final_size: float
    implicit_residual: float


def final_size_max_suppression(x0: EpidemicState, params: ModelParams) -> FinalSizeResult:
    """用 Lambert W 计算 h ≡ h_max、u ≡ 0 时的最终规模

    s_inf = -(γ/β̃)·W0(-(β̃/γ)·s0·exp(-(β̃/γ)·X0))，其中 β̃ = β - h_max，X0 = s0+e0+i0。

    Args:
        x0: 初始状态，要求 i0 > 0
        params: 模型参数

    Returns:
        FinalSizeResult: 最终规模及隐式方程残差

    Raises:
        StateError: 初始条件不合法
        InvariantViolationError: 隐式方程残差超过 1e-10
    """
    validate_initial_state(x0, require_infection=True)
    ratio = params.beta_tilde / params.gamma
    x_total = x0.non_recovered
    argument = -ratio * x0.s * math.exp(-ratio * x_total)
    s_inf = -lambert_w0(argument) / ratio
    residual = abs(math.log(s_inf / x0.s) + ratio * (x_total - s_inf))
    if not 0 < s_inf < x0.s or residual > IMPLICIT_RESIDUAL_TOL:
        raise InvariantViolationError(
            f"最终规模结果不满足隐式方程: s_inf={s_inf}, 残差={residual:.3e}")
    logger.debug(f"最大抑制下的最终规模: s_inf={s_inf:.8f}, 残差={residual:.2e}")
    return FinalSizeResult(s_inf=s_inf, final_size=1.0 - s_inf, implicit_residual=residual)


def final_size_upper_bound(traj: Trajectory, params: ModelParams) -> float:
    """s_inf 的上界 s0·exp(-∫[(β - h_max) i + u]dτ)

    i 用梯形公式求积，u 按每个积分步的取值累加。对任意容许控制该上界都不小于 s(T)。

    Returns:
        float: 上界
    """
    if traj.i[-1] >= 1e-6:
        logger.warning(f"轨迹末端 i(T)={traj.i[-1]:.3e} ≥ 1e-6，截断后的上界可能偏松")
    dt = np.diff(traj.times)
    u_step, _ = traj.step_controls()
    exposure = np.sum(0.5 * dt * params.beta_tilde * (traj.i[:-1] + traj.i[1:]) + dt * u_step)
    bound = float(traj.s[0] * math.exp(-exposure))
    if traj.s[-1] > bound + 1e-6:
        raise InvariantViolationError(f"s(T)={traj.s[-1]:.8f} 超过了上界 {bound:.8f}")
    return bound


def r_eff(state: EpidemicState, h: float, params: ModelParams) -> float:
    """有效再生数 (β - h)·s/γ"""
    if not 0 <= h < params.beta:
        raise ParameterError(f"要求 0 ≤ h < beta，当前 h={h}")
    return (params.beta - h) * state.s / params.gamma


def boundary_maintenance_control(s: float, params: ModelParams) -> Tuple[float, bool]:
    """保持 i ≡ I_max 的反馈抑制律 h_bm = β - γ/s

    Args:
        s: 当前易感比例
        params: 模型参数

    Returns:
        Tuple[float, bool]: 截断到 [0, h_max] 的 h，以及未截断值是否本身容许
            （等价于 γ/β ≤ s ≤ γ/(β - h_max)）

    Raises:
        StateError: s ≤ 0
    """
    if not s > 0:
        raise StateError(f"边界维持律要求 s > 0，当前 s={s}")
    raw = params.beta - params.gamma / s
    admissible = -1e-12 <= raw <= params.h_max + 1e-12
    return min(max(raw, 0.0), params.h_max), admissible


class BoundaryFeedbackPolicy:
    """边界维持反馈律，用于 integrate_feedback

    h 取 boundary_maintenance_control(s)，u 在接种开始后保持给定常数。
    延迟窗口内两个控制都为 0。

    Attributes:
        inadmissible_evaluations: 反馈律需要截断的次数
    """

    def __init__(self, params: ModelParams, u: float = 0.0):
        if not 0 <= u <= params.u_max:
            raise ParameterError(f"接种率 u={u} 超出 [0, {params.u_max}]")
        self.params = params
        self.u = u
        self.inadmissible_evaluations = 0

    def __call__(self, t: float, s: float, e: float, i: float, r: float) -> Tuple[float, float]:
        u = self.u if t >= self.params.t_delay_u else 0.0
        if t < self.params.t_delay_h:
            return u, 0.0
        h, admissible = boundary_maintenance_control(s, self.params)
        if not admissible:
            self.inadmissible_evaluations += 1
        return u, h

    @property
    def admissible(self) -> bool:
        return self.inadmissible_evaluations == 0


def boundary_feedback_policy(params: ModelParams, u: float = 0.0) -> BoundaryFeedbackPolicy:
    """构造边界维持反馈律"""
    return BoundaryFeedbackPolicy(params, u)


def time_free_residual(traj: Trajectory, params: ModelParams) -> float:
    """时间无关表示的残差

    以 Ξ = s(τ) 作为积分变量，在轨迹诱导的 s 网格上对
    [uΞ + γi] / (Ξ[(β-h)i + u]) 做梯形求积，并与 ΔX(t) = X(0) - X(t) 比较。

    Returns:
        float: 所有采样点上的最大绝对误差

    Raises:
        DegenerateChangeOfVariablesError: 某个步长上 (β-h)i + u < 1e-14
    """
    if traj.n_steps == 0:
        return 0.0
    s, i = traj.s, traj.i
    u_step, h_step = traj.step_controls()
    rate_left = (params.beta - h_step) * i[:-1] + u_step
    rate_right = (params.beta - h_step) * i[1:] + u_step
    degenerate = np.flatnonzero((rate_left < DEGENERATE_DENOMINATOR) | (rate_right < DEGENERATE_DENOMINATOR))
    if degenerate.size:
        t = traj.times[degenerate[0]]
        raise DegenerateChangeOfVariablesError(f"t={t:.6g} 附近 s 停滞，无法以 s 作为积分变量")
    g_left = (u_step * s[:-1] + params.gamma * i[:-1]) / (s[:-1] * rate_left)
    g_right = (u_step * s[1:] + params.gamma * i[1:]) / (s[1:] * rate_right)
    increments = 0.5 * (g_left + g_right) * (s[:-1] - s[1:])
    predicted = np.concatenate([[0.0], np.cumsum(increments)])
    non_recovered = s + traj.e + i
    actual = non_recovered[0] - non_recovered
    return float(np.max(np.abs(actual - predicted)))
