"""
流行病领域模型

定义受控 SEIR 系统的参数、状态、控制日程和轨迹。这些对象在构造后不可变，
可以安全地在线程之间传递。
"""

import logging
import math
from dataclasses import dataclass, field, replace, asdict
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ParameterError, ScheduleError, StateError

logger = logging.getLogger(__name__)

# 守恒误差的默认容差
CONSERVATION_TOL = 1e-9
# 初始条件求和的容差（不做重新缩放）
INITIAL_SUM_TOL = 1e-12


def _frozen_array(values) -> np.ndarray:
    """转换为只读的 float64 数组"""
    array = np.array(values, dtype=float)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class ModelParams:
    """模型参数

    Attributes:
        beta: 传播率 (1/天)
        sigma: 潜伏期离开率 (1/天)
        gamma: 恢复率 (1/天)
        u_max: 最大接种率 (1/天)
        h_max: 抑制措施对 beta 的最大削减量 (1/天)
        i_max: 医疗容量阈值（感染比例）
        t_delay_u: 接种开始时间 (天)
        t_delay_h: 抑制措施开始时间 (天)
    """

    beta: float
    sigma: float
    gamma: float
    u_max: float
    h_max: float
    i_max: float
    t_delay_u: float = 0.0
    t_delay_h: float = 0.0

    def __post_init__(self):
        for name in ('beta', 'sigma', 'gamma', 'u_max', 'h_max', 'i_max', 't_delay_u', 't_delay_h'):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParameterError(f"参数 {name} 必须是有限实数，当前值: {value!r}")
        if self.beta <= 0 or self.sigma <= 0 or self.gamma <= 0:
            raise ParameterError("beta、sigma、gamma 必须为正")
        if not 0 <= self.h_max < self.beta:
            raise ParameterError(f"要求 0 ≤ h_max < beta，当前 h_max={self.h_max}, beta={self.beta}")
        if self.u_max < 0:
            raise ParameterError(f"u_max 不能为负: {self.u_max}")
        if self.t_delay_u < 0 or self.t_delay_h < 0:
            raise ParameterError("延迟时间不能为负")
        if not 0 < self.i_max < 1:
            raise ParameterError(f"i_max 必须位于 (0, 1) 内: {self.i_max}")

    @property
    def beta_tilde(self) -> float:
        """最大抑制下的有效传播率 beta - h_max"""
        return self.beta - self.h_max

    def replace(self, **changes) -> 'ModelParams':
        """返回修改部分字段后的新参数（会重新校验）"""
        return replace(self, **changes)

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class EpidemicState:
    """单纯形上的状态点 (s, e, i, r)"""

    s: float
    e: float
    i: float
    r: float

    def __post_init__(self):
        self.check(CONSERVATION_TOL)

    def check(self, tol: float) -> None:
        """校验分量范围和守恒恒等式

        Args:
            tol: 守恒容差

        Raises:
            StateError: 分量越界或求和偏离 1
        """
        for name in ('s', 'e', 'i', 'r'):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0 or value > 1:
                raise StateError(f"状态分量 {name}={value!r} 不在 [0, 1] 内")
        drift = abs(self.s + self.e + self.i + self.r - 1.0)
        if drift > tol:
            raise StateError(f"s+e+i+r 偏离 1 的程度为 {drift:.3e}，超过容差 {tol:.1e}")

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'EpidemicState':
        s, e, i, r = (float(v) for v in values)
        return cls(s, e, i, r)

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.e, self.i, self.r], dtype=float)

    @property
    def x(self) -> Tuple[float, float, float]:
        """约化状态 (s, e, i)"""
        return (self.s, self.e, self.i)

    @property
    def non_recovered(self) -> float:
        return self.s + self.e + self.i


def validate_initial_state(x0: EpidemicState, require_infection: bool = False) -> None:
    """校验初始条件

    初始条件必须严格满足 s0 > 0 且求和在 1e-12 内等于 1，不做重新缩放。

    Args:
        x0: 初始状态
        require_infection: 是否要求 i0 > 0

    Raises:
        StateError: 初始条件不合法
    """
    x0.check(INITIAL_SUM_TOL)
    if x0.s <= 0:
        raise StateError(f"初始易感比例必须为正: s0={x0.s}")
    if require_infection and x0.i <= 0:
        raise StateError(f"该操作要求初始感染比例为正: i0={x0.i}")


@dataclass(frozen=True)
class ControlSchedule:
    """均匀网格上的分段常数控制 (u, h)

    第 k 个网格单元覆盖 [t0 + k*dt, t0 + (k+1)*dt)。
    """

    t0: float
    dt: float
    u_values: np.ndarray
    h_values: np.ndarray

    def __post_init__(self):
        u_values = _frozen_array(self.u_values)
        h_values = _frozen_array(self.h_values)
        if u_values.ndim != 1 or h_values.ndim != 1:
            raise ScheduleError("控制序列必须是一维的")
        if len(u_values) != len(h_values):
            raise ScheduleError(f"u 与 h 的长度不一致: {len(u_values)} != {len(h_values)}")
        if len(u_values) == 0:
            raise ScheduleError("控制日程不能为空")
        if not self.dt > 0:
            raise ScheduleError(f"网格步长必须为正: {self.dt}")
        if not (np.all(np.isfinite(u_values)) and np.all(np.isfinite(h_values))):
            raise ScheduleError("控制值必须是有限数")
        object.__setattr__(self, 'u_values', u_values)
        object.__setattr__(self, 'h_values', h_values)

    @property
    def n_cells(self) -> int:
        return len(self.u_values)

    @property
    def t_end(self) -> float:
        return self.t0 + self.n_cells * self.dt

    @property
    def cell_starts(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_cells)

    def index_at(self, t: float) -> int:
        """时间 t 所在网格单元的下标（末端时刻归入最后一个单元）"""
        k = int(math.floor((t - self.t0) / self.dt + 1e-9))
        return min(max(k, 0), self.n_cells - 1)

    def value_at(self, t: float) -> Tuple[float, float]:
        k = self.index_at(t)
        return float(self.u_values[k]), float(self.h_values[k])

    def validate(self, params: ModelParams, tol: float = 1e-12) -> None:
        """校验控制是否属于容许集

        Raises:
            ScheduleError: 超出上下界，或在延迟窗口内取非零值
        """
        if np.any(self.u_values < -tol) or np.any(self.u_values > params.u_max + tol):
            raise ScheduleError(f"接种率超出 [0, {params.u_max}]")
        if np.any(self.h_values < -tol) or np.any(self.h_values > params.h_max + tol):
            raise ScheduleError(f"抑制强度超出 [0, {params.h_max}]")
        starts = self.cell_starts
        early_u = starts < params.t_delay_u - 1e-12
        early_h = starts < params.t_delay_h - 1e-12
        if np.any(self.u_values[early_u] != 0):
            raise ScheduleError(f"t < t_delay_u={params.t_delay_u} 时接种率必须为 0")
        if np.any(self.h_values[early_h] != 0):
            raise ScheduleError(f"t < t_delay_h={params.t_delay_h} 时抑制强度必须为 0")

    def frozen_mask(self, params: ModelParams) -> Tuple[np.ndarray, np.ndarray]:
        """返回被延迟冻结（必须为 0）的网格单元掩码 (u_mask, h_mask)"""
        starts = self.cell_starts
        return starts < params.t_delay_u - 1e-12, starts < params.t_delay_h - 1e-12

    def masked(self, params: ModelParams) -> 'ControlSchedule':
        """裁剪到上下界并把延迟窗口内的控制置零，得到容许的日程"""
        u_mask, h_mask = self.frozen_mask(params)
        u_values = np.clip(self.u_values, 0.0, params.u_max)
        h_values = np.clip(self.h_values, 0.0, params.h_max)
        u_values[u_mask] = 0.0
        h_values[h_mask] = 0.0
        return self.with_values(u_values, h_values)

    def with_values(self, u_values: Iterable[float], h_values: Iterable[float]) -> 'ControlSchedule':
        return ControlSchedule(self.t0, self.dt, np.asarray(u_values, dtype=float), np.asarray(h_values, dtype=float))

    def extended(self, horizon: float) -> 'ControlSchedule':
        """用零控制把日程延长到覆盖 horizon"""
        n_cells = cells_for_horizon(horizon - self.t0, self.dt)
        if n_cells <= self.n_cells:
            return self
        pad = n_cells - self.n_cells
        return self.with_values(np.concatenate([self.u_values, np.zeros(pad)]),
                                np.concatenate([self.h_values, np.zeros(pad)]))

    def truncated(self, horizon: float) -> 'ControlSchedule':
        n_cells = cells_for_horizon(horizon - self.t0, self.dt)
        return self.with_values(self.u_values[:n_cells], self.h_values[:n_cells])

    def sup_distance(self, other: 'ControlSchedule', until: Optional[float] = None) -> float:
        """两个同网格日程在 [t0, until) 上的控制上确界距离"""
        if abs(self.dt - other.dt) > 1e-12 or abs(self.t0 - other.t0) > 1e-12:
            raise ScheduleError("只能比较网格相同的日程")
        n_cells = min(self.n_cells, other.n_cells)
        if until is not None:
            n_cells = min(n_cells, cells_for_horizon(until - self.t0, self.dt))
        if n_cells == 0:
            return 0.0
        du = np.abs(self.u_values[:n_cells] - other.u_values[:n_cells])
        dh = np.abs(self.h_values[:n_cells] - other.h_values[:n_cells])
        return float(max(du.max(), dh.max()))

    @classmethod
    def constant(cls, params: ModelParams, horizon: float, cell_dt: float,
                 u: float = 0.0, h: float = 0.0, t0: float = 0.0) -> 'ControlSchedule':
        """常数控制（延迟窗口内自动置零）"""
        n_cells = cells_for_horizon(horizon, cell_dt)
        schedule = cls(t0, cell_dt, np.full(n_cells, float(u)), np.full(n_cells, float(h)))
        return schedule.masked(params) if _needs_mask(schedule, params) else schedule

    @classmethod
    def zeros(cls, horizon: float, cell_dt: float, t0: float = 0.0) -> 'ControlSchedule':
        n_cells = cells_for_horizon(horizon, cell_dt)
        return cls(t0, cell_dt, np.zeros(n_cells), np.zeros(n_cells))

    @classmethod
    def upper_bounds(cls, params: ModelParams, horizon: float, cell_dt: float) -> 'ControlSchedule':
        """所有单元都取最大值的容许日程"""
        return cls.constant(params, horizon, cell_dt, params.u_max, params.h_max)

    @classmethod
    def from_steps(cls, params: ModelParams, horizon: float, cell_dt: float,
                   u_steps: Sequence[Tuple[float, float]],
                   h_steps: Sequence[Tuple[float, float]]) -> 'ControlSchedule':
        """由阶梯函数构造日程

        Args:
            u_steps: [(起始时间, 取值), ...]，每个取值一直保持到下一个起始时间
            h_steps: 同上

        Returns:
            ControlSchedule: 延迟窗口内置零后的日程
        """
        n_cells = cells_for_horizon(horizon, cell_dt)
        starts = cell_dt * np.arange(n_cells)
        schedule = cls(0.0, cell_dt, _step_values(starts, u_steps), _step_values(starts, h_steps))
        return schedule.masked(params) if _needs_mask(schedule, params) else schedule


def _needs_mask(schedule: ControlSchedule, params: ModelParams) -> bool:
    u_mask, h_mask = schedule.frozen_mask(params)
    return bool(np.any(schedule.u_values[u_mask] != 0) or np.any(schedule.h_values[h_mask] != 0))


def _step_values(starts: np.ndarray, steps: Sequence[Tuple[float, float]]) -> np.ndarray:
    values = np.zeros(len(starts))
    for t_start, value in sorted(steps):
        values[starts >= t_start - 1e-12] = float(value)
    return values


def cells_for_horizon(horizon: float, cell_dt: float) -> int:
    """覆盖 horizon 所需的网格单元数；horizon 必须是 cell_dt 的整数倍"""
    ratio = horizon / cell_dt
    n_cells = int(round(ratio))
    if abs(ratio - n_cells) > 1e-9 * max(1.0, ratio):
        raise ScheduleError(f"时间长度 {horizon} 不是网格步长 {cell_dt} 的整数倍")
    return n_cells


@dataclass(frozen=True)
class Trajectory:
    """一次正向积分得到的轨迹

    Attributes:
        times: 采样时刻 (n+1)
        states: 每个时刻的 (s, e, i, r)，形状 (n+1, 4)
        u: 每个时刻生效的接种率；第 k 个值也是第 k 个积分步使用的值
        h: 每个时刻生效的抑制强度
    """

    times: np.ndarray
    states: np.ndarray
    u: np.ndarray
    h: np.ndarray
    metadata: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ('times', 'states', 'u', 'h'):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        n = len(self.times)
        if self.states.shape != (n, 4) or self.u.shape != (n,) or self.h.shape != (n,):
            raise StateError("轨迹数组形状不一致")

    @property
    def s(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def e(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def i(self) -> np.ndarray:
        return self.states[:, 2]

    @property
    def r(self) -> np.ndarray:
        return self.states[:, 3]

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n_steps else 0.0

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def peak_index(self) -> int:
        return int(np.argmax(self.i))

    @property
    def peak_i(self) -> float:
        return float(self.i[self.peak_index])

    @property
    def peak_time(self) -> float:
        return float(self.times[self.peak_index])

    @property
    def initial_state(self) -> EpidemicState:
        return self.state_at(0)

    @property
    def final_state(self) -> EpidemicState:
        return self.state_at(self.n_steps)

    @property
    def final_size(self) -> float:
        """1 - s(T)"""
        return float(1.0 - self.s[-1])

    def state_at(self, k: int) -> EpidemicState:
        # 末端累计舍入误差按 1e-9 的守恒容差检查
        return EpidemicState.from_array(self.states[k])

    def step_controls(self) -> Tuple[np.ndarray, np.ndarray]:
        """每个积分步 [t_n, t_{n+1}) 上保持不变的控制"""
        return self.u[:-1], self.h[:-1]
