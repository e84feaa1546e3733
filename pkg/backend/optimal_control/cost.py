"""
成本泛函

运行成本 L0 = c_H·i·h + c_NH·i + c_V·u·s，容量罚项 ψ(i) = (i - I_max)+²，
以及在有限时间网格上的贴现罚函数 J_{κ,T}。
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np

from epidemic.models import EpidemicState, ModelParams, Trajectory
from .models import STRICT_TOL, CostBreakdown, CostParams

logger = logging.getLogger(__name__)


def running_cost_l0(state: EpidemicState, u: float, h: float, cp: CostParams) -> float:
    """未贴现的运行成本密度"""
    return cp.c_h * state.i * h + cp.c_nh * state.i + cp.c_v * u * state.s


def penalty_psi(i: float, i_max: float) -> float:
    """容量罚项 (max{0, i - I_max})²"""
    excess = max(0.0, i - i_max)
    return excess * excess


def penalty_psi_derivative(i: float, i_max: float) -> float:
    """ψ 的导数 2(i - I_max)+，在 i = I_max 处连续"""
    return 2.0 * max(0.0, i - i_max)


def moreau_envelope(i, i_max: float, epsilon: float):
    """可行集 {y ≤ I_max} 指示函数的 Moreau 包络

    min_{y ≤ I_max} (i - y)² / (2ε)，最小点是 i 到可行集的投影 min(i, I_max)。
    当 ε = 1/(2κ) 时等于 κψ(i)。

    Args:
        i: 感染比例（标量或数组）
        i_max: 容量阈值
        epsilon: 包络参数，必须为正
    """
    if not epsilon > 0:
        raise ValueError(f"包络参数必须为正: {epsilon}")
    i = np.asarray(i, dtype=float)
    projection = np.minimum(i, i_max)
    envelope = np.square(i - projection) / (2.0 * epsilon)
    return float(envelope) if envelope.ndim == 0 else envelope


def tail_bound(cp: CostParams, horizon: float, u_max: float, h_max: float, i_max: float) -> float:
    """[T, ∞) 上贴现运行成本的上界 C·e^{-δT}/δ"""
    constant = cp.c_h * h_max + cp.c_nh + cp.c_v * u_max + cp.kappa * (1.0 - i_max) ** 2
    return constant * math.exp(-cp.delta * horizon) / cp.delta


def check_strict_feasibility(traj: Trajectory, i_max: float, tol: float = STRICT_TOL) -> Tuple[bool, float]:
    """检查硬约束 i(t) ≤ I_max

    Returns:
        Tuple[bool, float]: (max_t i ≤ I_max + tol, max_t (i - I_max)+)
    """
    max_violation = float(max(0.0, np.max(traj.i) - i_max))
    return max_violation <= tol, max_violation


def evaluate_cost(traj: Trajectory, cp: CostParams, i_max: float,
                  params: Optional[ModelParams] = None, tol: float = STRICT_TOL) -> CostBreakdown:
    """在采样网格上计算 J_{κ,T} 的各个贴现分量

    每个积分步上的控制取该步的值（两个端点相同），状态和贴现因子取端点上的采样值，
    然后用梯形公式求积。

    Args:
        traj: 轨迹
        cp: 成本参数
        i_max: 容量阈值
        params: 用于尾项上界的控制上界；为 None 时用轨迹上控制的最大值
        tol: 硬约束的数值容差

    Returns:
        CostBreakdown: 成本分解
    """
    feasible, max_violation = check_strict_feasibility(traj, i_max, tol)
    if params is not None:
        u_bound, h_bound = params.u_max, params.h_max
    else:
        u_bound, h_bound = float(np.max(traj.u)), float(np.max(traj.h))
    bound = tail_bound(cp, traj.horizon, u_bound, h_bound, i_max)

    if traj.n_steps == 0:
        return CostBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, max_violation, feasible, bound)

    dt = np.diff(traj.times)
    discount = np.exp(-cp.delta * traj.times)
    s, i = traj.s, traj.i
    u_step, h_step = traj.step_controls()

    def trapezoid(left, right):
        return float(np.sum(0.5 * dt * (left + right)))

    suppression = cp.c_h * trapezoid(i[:-1] * h_step * discount[:-1], i[1:] * h_step * discount[1:])
    infection = cp.c_nh * trapezoid(i[:-1] * discount[:-1], i[1:] * discount[1:])
    vaccination = cp.c_v * trapezoid(u_step * s[:-1] * discount[:-1], u_step * s[1:] * discount[1:])
    psi = np.square(np.maximum(0.0, i - i_max)) * discount
    penalty = cp.kappa * trapezoid(psi[:-1], psi[1:])

    total = suppression + infection + vaccination + penalty
    return CostBreakdown(
        total=total,
        suppression_part=suppression,
        infection_part=infection,
        vaccination_part=vaccination,
        penalty_part=penalty,
        max_violation=max_violation,
        feasible_strict=feasible,
        tail_bound=bound,
    )


def strict_cost(traj: Trajectory, cp: CostParams, i_max: float, tol: float = STRICT_TOL) -> float:
    """硬约束问题的目标：可行时为不含罚项的 J_{0,T}，否则为 +∞"""
    feasible, max_violation = check_strict_feasibility(traj, i_max, tol)
    if not feasible:
        logger.debug(f"轨迹不满足容量约束，超出量 {max_violation:.3e}")
        return math.inf
    return evaluate_cost(traj, cp.replace(kappa=0.0), i_max, tol=tol).total
