"""
最优控制数据类型

成本参数、成本分解、伴随路径、切换函数、求解器配置、优化结果和延拓报告。
"""

import math
from dataclasses import dataclass, field, replace, asdict
from enum import Enum
from typing import Dict, Iterator, List, Optional

import numpy as np

from epidemic.exceptions import ParameterError
from epidemic.models import CONSERVATION_TOL, ControlSchedule, ModelParams, Trajectory

# 严格可行性判断允许的容量超出量
STRICT_TOL = 1e-6


@dataclass(frozen=True)
class CostParams:
    """成本权重

    Attributes:
        c_h: 抑制成本权重
        c_nh: 感染的社会成本权重
        c_v: 接种成本权重
        delta: 贴现率 (1/天)
        kappa: 容量罚项权重
    """

    c_h: float
    c_nh: float
    c_v: float
    delta: float
    kappa: float = 0.0

    def __post_init__(self):
        for name in ('c_h', 'c_nh', 'c_v', 'delta', 'kappa'):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParameterError(f"成本参数 {name} 必须是有限实数，当前值: {value!r}")
        if min(self.c_h, self.c_nh, self.c_v, self.kappa) < 0:
            raise ParameterError("成本权重和 kappa 不能为负")
        if self.delta <= 0:
            raise ParameterError(f"贴现率必须为正: {self.delta}")

    @property
    def is_zero(self) -> bool:
        """所有权重和罚项都为 0 的退化目标"""
        return self.c_h == 0 and self.c_nh == 0 and self.c_v == 0 and self.kappa == 0

    def replace(self, **changes) -> 'CostParams':
        return replace(self, **changes)

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class CostBreakdown:
    """贴现成本分解

    Attributes:
        total: 贴现总成本
        suppression_part: 抑制成本
        infection_part: 感染成本
        vaccination_part: 接种成本
        penalty_part: 容量罚项
        max_violation: max_t (i - I_max)+
        feasible_strict: 是否满足硬约束
        tail_bound: [T, ∞) 上剩余成本的上界 C·e^{-δT}/δ
    """

    total: float
    suppression_part: float
    infection_part: float
    vaccination_part: float
    penalty_part: float
    max_violation: float
    feasible_strict: bool
    tail_bound: float

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class AdjointState:
    """伴随变量 (λ_s, λ_e, λ_i)"""

    lambda_s: float
    lambda_e: float
    lambda_i: float


@dataclass(frozen=True)
class AdjointPath:
    """伴随变量在采样时刻上的取值，形状 (n+1, 3)"""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)

    @property
    def lambda_s(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def lambda_e(self) -> np.ndarray:
        return self.values[:, 1]

    @property
    def lambda_i(self) -> np.ndarray:
        return self.values[:, 2]

    def at(self, k: int) -> AdjointState:
        return AdjointState(*(float(v) for v in self.values[k]))


class Regime(str, Enum):
    AT_MAX = 'at-max'
    AT_MIN = 'at-min'
    SINGULAR = 'singular'


@dataclass(frozen=True)
class SwitchingSample:
    t: float
    phi_u: float
    phi_h: float
    regime_u: Regime
    regime_h: Regime


@dataclass(frozen=True)
class SwitchingPath:
    """切换函数在采样时刻上的取值及对应的区间类型"""

    times: np.ndarray
    phi_u: np.ndarray
    phi_h: np.ndarray
    band_u: float
    band_h: float

    def regime_u(self, k: int) -> Regime:
        return classify(self.phi_u[k], self.band_u)

    def regime_h(self, k: int) -> Regime:
        return classify(self.phi_h[k], self.band_h)

    def samples(self) -> Iterator[SwitchingSample]:
        for k, t in enumerate(self.times):
            yield SwitchingSample(float(t), float(self.phi_u[k]), float(self.phi_h[k]),
                                  self.regime_u(k), self.regime_h(k))


def classify(phi: float, band: float) -> Regime:
    """按 bang-bang 律对切换函数的符号分类"""
    if phi < -band:
        return Regime.AT_MAX
    if phi > band:
        return Regime.AT_MIN
    return Regime.SINGULAR


class SingularPolicy(str, Enum):
    MIDPOINT = 'midpoint'
    BOUNDARY_FEEDBACK = 'boundary-feedback'


@dataclass(frozen=True)
class SolverConfig:
    """前向-后向扫描的配置

    Attributes:
        max_iters: 最大迭代次数
        damping: 控制更新的松弛系数，取值 (0, 1]
        conv_tol: 未松弛控制差距的收敛容差
        sing_tol: 奇异带宽度（按 1 + |Φ| 的尺度放大）
        singular_policy: 奇异带内的控制取法
        dt: 积分步长
        adaptive_damping: 控制差距停止下降时是否自动减半松弛系数
        patience: 允许控制差距不下降的连续迭代次数
        min_damping: 松弛系数下限
        conservation_tol: 正向积分每个采样点允许的守恒误差
        strict_tol: 严格可行性判断允许的容量超出量
    """

    max_iters: int = 300
    damping: float = 0.5
    conv_tol: float = 1e-5
    sing_tol: float = 1e-8
    singular_policy: SingularPolicy = SingularPolicy.MIDPOINT
    dt: float = 0.01
    adaptive_damping: bool = True
    patience: int = 3
    min_damping: float = 1e-6
    conservation_tol: float = CONSERVATION_TOL
    strict_tol: float = STRICT_TOL

    def __post_init__(self):
        object.__setattr__(self, 'singular_policy', SingularPolicy(self.singular_policy))
        if self.max_iters < 0:
            raise ParameterError(f"max_iters 不能为负: {self.max_iters}")
        if not 0 < self.damping <= 1:
            raise ParameterError(f"松弛系数必须位于 (0, 1]: {self.damping}")
        if not self.conv_tol > 0:
            raise ParameterError(f"收敛容差必须为正: {self.conv_tol}")
        if self.sing_tol < 0:
            raise ParameterError(f"奇异带宽度不能为负: {self.sing_tol}")
        if not self.dt > 0:
            raise ParameterError(f"积分步长必须为正: {self.dt}")
        if self.patience < 1 or not 0 < self.min_damping <= self.damping:
            raise ParameterError("patience 至少为 1，min_damping 必须位于 (0, damping]")
        if not (self.conservation_tol > 0 and self.strict_tol >= 0):
            raise ParameterError("conservation_tol 必须为正，strict_tol 不能为负")

    def replace(self, **changes) -> 'SolverConfig':
        return replace(self, **changes)

    def as_dict(self) -> Dict[str, object]:
        data = asdict(self)
        data['singular_policy'] = self.singular_policy.value
        return data


class ArcKind(str, Enum):
    SINGULAR_U = 'singular-u'
    SINGULAR_H = 'singular-h'
    BOUNDARY = 'boundary-maintenance'


@dataclass(frozen=True)
class SingularArc:
    """检测到的奇异弧或边界维持弧

    Attributes:
        start: 起始时间
        end: 结束时间
        kind: 弧的类型
        residual: 边界弧上 |σe - γI_max| 的最大值，其他类型为 0
        verified: 边界恒等式是否在容差内成立
    """

    start: float
    end: float
    kind: ArcKind
    residual: float = 0.0
    verified: bool = True

    @property
    def length(self) -> float:
        return self.end - self.start

    def as_dict(self) -> Dict[str, object]:
        return {'start': self.start, 'end': self.end, 'kind': self.kind.value,
                'residual': self.residual, 'verified': self.verified}


@dataclass
class OptimizationResult:
    """前向-后向扫描的结果

    Attributes:
        schedule: 最终控制日程
        trajectory: 最终控制下的轨迹
        adjoints: 伴随路径
        switching: 切换函数
        cost: 成本分解
        iterations: 迭代次数
        converged: 是否收敛
        control_residual_history: 每次迭代未松弛的控制差距 max|v_new - v_old|
        cost_history: 每次迭代后的总成本
        initial_schedule: 初始猜测
        initial_cost: 初始猜测的成本
        status: converged / max-iters / stalled / deteriorated / degenerate
        final_damping: 结束时的松弛系数
    """

    schedule: ControlSchedule
    trajectory: Trajectory
    adjoints: AdjointPath
    switching: SwitchingPath
    cost: CostBreakdown
    iterations: int
    converged: bool
    control_residual_history: List[float] = field(default_factory=list)
    cost_history: List[float] = field(default_factory=list)
    initial_schedule: Optional[ControlSchedule] = None
    initial_cost: Optional[CostBreakdown] = None
    status: str = ''
    final_damping: float = 0.0
    params: Optional[ModelParams] = None
    cost_params: Optional[CostParams] = None
    config: Optional[SolverConfig] = None

    def summary(self) -> Dict[str, object]:
        return {
            'iterations': self.iterations,
            'converged': self.converged,
            'status': self.status,
            'final_damping': self.final_damping,
            'last_control_residual': self.control_residual_history[-1] if self.control_residual_history else None,
            'initial_cost': self.initial_cost.total if self.initial_cost else None,
        }


@dataclass(frozen=True)
class ContinuationRung:
    """延拓阶梯上的一级

    Attributes:
        value: 该级的 kappa 或时间长度
        cost_total: 总成本
        max_violation: 最大容量超出量
        control_distance: 与上一级控制的上确界距离（第一级为 None）
        converged: 该级求解是否收敛
        iterations: 迭代次数
        tail_bound: 与上一级比较时所用的尾项上界，即上一级的 C·e^{-δT}/δ（仅时间延拓，第一级为 None）
        cost_gap: 与上一级成本之差的绝对值（仅时间延拓）
    """

    value: float
    cost_total: float
    max_violation: float
    control_distance: Optional[float]
    converged: bool
    iterations: int
    tail_bound: Optional[float] = None
    cost_gap: Optional[float] = None

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)


@dataclass
class ContinuationReport:
    """kappa 或时间长度延拓的报告"""

    parameter: str
    ladder: List[ContinuationRung]
    warm_started: bool
    results: List[OptimizationResult] = field(default_factory=list)
    horizon_converged: Optional[bool] = None
    violation_monotone: Optional[bool] = None
    bridge_met: Optional[bool] = None

    @property
    def final_result(self) -> OptimizationResult:
        return self.results[-1]

    @property
    def violations(self) -> List[float]:
        return [rung.max_violation for rung in self.ladder]

    def as_dict(self) -> Dict[str, object]:
        return {
            'parameter': self.parameter,
            'warm_started': self.warm_started,
            'horizon_converged': self.horizon_converged,
            'violation_monotone': self.violation_monotone,
            'bridge_met': self.bridge_met,
            'ladder': [rung.as_dict() for rung in self.ladder],
        }
