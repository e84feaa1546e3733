"""
场景数据类型

场景是一次命令行运行的完整配置：模型、成本、初始状态、运行参数、控制日程、
求解器配置，以及扫描、延拓和随机化设计的可选部分。
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

from epidemic.models import ControlSchedule, EpidemicState, ModelParams
from optimal_control.models import CostParams, SolverConfig
from sensitivity.models import BaseRun, SweepSpec

MODES = (
    'simulate', 'optimize', 'kappa-continuation', 'horizon-continuation',
    'sweep', 'final-size', 'compare-strategies', 'random-sweep',
)


@dataclass(frozen=True)
class DesignSpec:
    """随机化设计

    Attributes:
        samples: 样本数
        ranges: 连续参数的 (lo, hi)
        delay_levels: 延迟参数的离散水平
        mode: 每个样本运行 simulate 还是 optimize
    """

    samples: int
    ranges: Dict[str, Tuple[float, float]]
    delay_levels: Dict[str, Tuple[float, ...]] = field(default_factory=dict)
    mode: str = 'simulate'


@dataclass(frozen=True)
class Scenario:
    """一次运行的完整配置"""

    mode: str
    model: ModelParams
    cost: CostParams
    initial: EpidemicState
    horizon: float
    dt: float
    cell_dt: float
    solver: SolverConfig
    seed: int = 0
    workers: int = 1
    name: str = ''
    schedule: Optional[ControlSchedule] = None
    schedule_label: str = ''
    u_steps: Tuple[Tuple[float, float], ...] = ()
    h_steps: Tuple[Tuple[float, float], ...] = ()
    sweep: Optional[SweepSpec] = None
    kappa_ladder: Tuple[float, ...] = ()
    horizon_ladder: Tuple[float, ...] = ()
    design: Optional[DesignSpec] = None
    shadow_values: bool = True

    def base_run(self) -> BaseRun:
        return BaseRun(self.initial, self.model, self.cost, self.horizon, self.solver, self.schedule, self.cell_dt)

    def with_mode(self, mode: str) -> 'Scenario':
        return replace(self, mode=mode)

    def echo(self) -> Dict[str, object]:
        """写入 summary.json 的场景回显，数值与解析结果一致"""
        data: Dict[str, object] = {
            'name': self.name,
            'mode': self.mode,
            'model': self.model.as_dict(),
            'cost': self.cost.as_dict(),
            'initial': {'s': self.initial.s, 'e': self.initial.e, 'i': self.initial.i, 'r': self.initial.r},
            'run': {'horizon': self.horizon, 'dt': self.dt, 'cell_dt': self.cell_dt,
                    'seed': self.seed, 'workers': self.workers},
            'solver': self.solver.as_dict(),
        }
        if self.schedule is not None:
            data['schedule'] = {
                'label': self.schedule_label,
                'u': [list(step) for step in self.u_steps],
                'h': [list(step) for step in self.h_steps],
            }
        if self.sweep is not None:
            data['sweep'] = {'parameter': self.sweep.parameter, 'values': self.sweep.resolved_values(),
                             'mode': self.sweep.mode}
        if self.kappa_ladder or self.horizon_ladder:
            data['continuation'] = {'kappa_ladder': list(self.kappa_ladder),
                                    'horizon_ladder': list(self.horizon_ladder)}
        if self.design is not None:
            data['design'] = {
                'samples': self.design.samples,
                'ranges': {k: list(v) for k, v in self.design.ranges.items()},
                'delay_levels': {k: list(v) for k, v in self.design.delay_levels.items()},
                'mode': self.design.mode,
            }
        return data
