"""
敏感性分析数据类型

扫描规格、基准运行、扫描结果行以及容量约束的影子价值。
"""

import math
from dataclasses import dataclass, asdict, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from epidemic.exceptions import ParameterError
from epidemic.models import ControlSchedule, EpidemicState, ModelParams
from optimal_control.models import CostParams, SolverConfig

MODEL_PARAMETERS = ('beta', 'u_max', 'h_max', 't_delay_u', 't_delay_h', 'i_max')
SWEEP_PARAMETERS = MODEL_PARAMETERS + ('kappa',)
SWEEP_MODES = ('simulate', 'optimize')


@dataclass(frozen=True)
class BaseRun:
    """扫描所围绕的基准运行

    Attributes:
        x0: 初始状态
        params: 模型参数
        cost: 成本参数
        horizon: 时间长度
        solver: 求解器配置（其中的 dt 也用于 simulate 模式）
        schedule: 固定控制日程；为 None 时 simulate 模式取全力控制，optimize 模式从零控制开始
        cell_dt: 控制网格步长
    """

    x0: EpidemicState
    params: ModelParams
    cost: CostParams
    horizon: float
    solver: SolverConfig = field(default_factory=SolverConfig)
    schedule: Optional[ControlSchedule] = None
    cell_dt: float = 1.0

    def with_overrides(self, overrides: Dict[str, float]) -> 'BaseRun':
        """用扫描取值覆盖模型参数或 kappa"""
        model_changes = {k: float(v) for k, v in overrides.items() if k in MODEL_PARAMETERS}
        params = self.params.replace(**model_changes) if model_changes else self.params
        cost = self.cost.replace(kappa=float(overrides['kappa'])) if 'kappa' in overrides else self.cost
        return BaseRun(self.x0, params, cost, self.horizon, self.solver, self.schedule, self.cell_dt)


@dataclass(frozen=True)
class SweepSpec:
    """一维参数扫描

    Attributes:
        parameter: 扫描的参数名
        values: 显式取值列表
        grid: (lo, hi, count) 等距网格，与 values 二选一
        mode: simulate（固定日程）或 optimize（每个取值求解一次）
        workers: 并行线程数
    """

    parameter: str
    values: Tuple[float, ...] = ()
    grid: Optional[Tuple[float, float, int]] = None
    mode: str = 'simulate'
    workers: int = 1

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ParameterError(f"不支持扫描参数 {self.parameter!r}，可选: {', '.join(SWEEP_PARAMETERS)}")
        if self.mode not in SWEEP_MODES:
            raise ParameterError(f"扫描模式必须是 {SWEEP_MODES} 之一: {self.mode!r}")
        if self.workers < 1:
            raise ParameterError(f"workers 至少为 1: {self.workers}")
        if self.grid is not None:
            if self.values:
                raise ParameterError("values 与 grid 只能指定一个")
            lo, hi, count = self.grid
            if int(count) < 1 or hi < lo:
                raise ParameterError(f"扫描网格不合法: {self.grid}")
        elif len(self.values) == 0:
            raise ParameterError("扫描取值不能为空")
        object.__setattr__(self, 'values', tuple(float(v) for v in self.values))

    def resolved_values(self) -> List[float]:
        if self.grid is None:
            return list(self.values)
        lo, hi, count = self.grid
        return [float(v) for v in np.linspace(lo, hi, int(count))]


@dataclass(frozen=True)
class SweepRow:
    """扫描中一次运行的结果；失败时数值为 NaN，error 记录原因"""

    index: int
    value: float
    cost_total: float
    peak_i: float
    final_size: float
    max_violation: float
    converged: bool
    error: Optional[str] = None

    @classmethod
    def failed(cls, index: int, value: float, error: str) -> 'SweepRow':
        nan = math.nan
        return cls(index, value, nan, nan, nan, nan, False, error)

    @property
    def ok(self) -> bool:
        return self.error is None

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)


@dataclass(frozen=True)
class ShadowValue:
    """控制上界的影子价值 -∂V/∂bound

    Attributes:
        bound: 'u_max' 或 'h_max'
        value: ∫ν dt，非负
        times: 采样时刻
        multiplier: 每个采样时刻的乘子 ν
    """

    bound: str
    value: float
    times: np.ndarray
    multiplier: np.ndarray

    @property
    def binding_time(self) -> float:
        """乘子为正的采样时间总长"""
        dt = np.diff(self.times)
        return float(np.sum(dt[self.multiplier[:-1] > 0]))

    def as_dict(self) -> Dict[str, object]:
        return {'bound': self.bound, 'value': self.value, 'binding_time': self.binding_time}


@dataclass(frozen=True)
class ShadowValueCheck:
    """乘子积分与价值函数差分斜率的比较"""

    bound: str
    multiplier_estimate: float
    finite_difference: float
    bump: float

    @property
    def relative_error(self) -> float:
        scale = max(abs(self.multiplier_estimate), abs(self.finite_difference))
        if scale < 1e-6:
            return 0.0
        return abs(self.multiplier_estimate - self.finite_difference) / scale

    def as_dict(self) -> Dict[str, float]:
        data = asdict(self)
        data['relative_error'] = self.relative_error
        return data


def outcome_columns() -> Sequence[str]:
    return ('cost_total', 'peak_i', 'final_size', 'max_violation', 'converged')
