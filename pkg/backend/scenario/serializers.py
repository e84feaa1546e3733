"""
场景文件的序列化器

每个场景小节对应一个 DRF 序列化器，负责类型转换、取值范围检查以及构造领域对象；
未知字段一律报错，避免拼写错误被静默忽略。
"""

from collections.abc import Mapping

from django.conf import settings
from rest_framework import serializers

from epidemic.exceptions import EpiControlError
from epidemic.models import ControlSchedule, EpidemicState, ModelParams, cells_for_horizon, validate_initial_state
from optimal_control.models import CostParams, SingularPolicy, SolverConfig
from sensitivity.models import SWEEP_MODES, SWEEP_PARAMETERS, SweepSpec
from .models import MODES, DesignSpec, Scenario

DELAY_PARAMETERS = ('t_delay_u', 't_delay_h')
DESIGN_PARAMETERS = ('beta', 'u_max', 'h_max')


def _split(text):
    return [part.strip() for part in str(text).split(',') if part.strip()]


class StrictFieldsMixin:
    """拒绝序列化器未声明的字段"""

    def to_internal_value(self, data):
        if isinstance(data, Mapping):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ["未知字段"] for key in unknown})
        return super().to_internal_value(data)


class FloatListField(serializers.Field):
    """逗号分隔的数值列表，JSON 中也可以直接写数组"""

    def to_internal_value(self, data):
        items = data if isinstance(data, (list, tuple)) else _split(data)
        try:
            values = tuple(float(item) for item in items)
        except (TypeError, ValueError):
            raise serializers.ValidationError(f"无法解析为数值列表: {data!r}")
        if not values:
            raise serializers.ValidationError("列表不能为空")
        return values

    def to_representation(self, value):
        return list(value)


class RangeField(serializers.Field):
    """采样区间，写作 lo:hi 或 [lo, hi]"""

    def to_internal_value(self, data):
        parts = data if isinstance(data, (list, tuple)) else str(data).split(':')
        try:
            lo, hi = (float(part) for part in parts)
        except (TypeError, ValueError):
            raise serializers.ValidationError(f"区间必须写作 lo:hi，当前为 {data!r}")
        if not lo < hi:
            raise serializers.ValidationError(f"区间要求 lo < hi: {data!r}")
        return lo, hi

    def to_representation(self, value):
        return list(value)


class StepScheduleField(serializers.Field):
    """阶梯控制，写作 "0:0.05, 30:0.0"；单个数值表示常数控制"""

    def to_internal_value(self, data):
        if isinstance(data, (int, float)) and not isinstance(data, bool):
            return ((0.0, float(data)),)
        if isinstance(data, (list, tuple)):
            pairs = data
        else:
            items = _split(data)
            if len(items) == 1 and ':' not in items[0]:
                items = [f"0:{items[0]}"]
            pairs = [item.split(':') for item in items]
        try:
            steps = tuple((float(t), float(v)) for t, v in pairs)
        except (TypeError, ValueError):
            raise serializers.ValidationError(f"阶梯控制必须写作 t:value 列表，当前为 {data!r}")
        if not steps:
            raise serializers.ValidationError("阶梯控制不能为空")
        if any(t < 0 or v < 0 for t, v in steps):
            raise serializers.ValidationError("阶梯控制的时间和取值不能为负")
        return tuple(sorted(steps))

    def to_representation(self, value):
        return [list(step) for step in value]


def _build(section, factory, **kwargs):
    try:
        return factory(**kwargs)
    except EpiControlError as e:
        raise serializers.ValidationError(f"{section}: {e}")


class ModelSectionSerializer(StrictFieldsMixin, serializers.Serializer):
    """模型参数小节"""

    beta = serializers.FloatField()
    sigma = serializers.FloatField()
    gamma = serializers.FloatField()
    u_max = serializers.FloatField(min_value=0.0)
    h_max = serializers.FloatField(min_value=0.0)
    i_max = serializers.FloatField()
    t_delay_u = serializers.FloatField(required=False, default=0.0)
    t_delay_h = serializers.FloatField(required=False, default=0.0)

    def validate(self, attrs):
        return _build('model', ModelParams, **attrs)


class CostSectionSerializer(StrictFieldsMixin, serializers.Serializer):
    """成本小节，缺省项取自 EPICTRL_DEFAULTS"""

    c_h = serializers.FloatField(required=False)
    c_nh = serializers.FloatField(required=False)
    c_v = serializers.FloatField(required=False)
    delta = serializers.FloatField(required=False)
    kappa = serializers.FloatField(required=False)

    def validate(self, attrs):
        values = dict(settings.EPICTRL_DEFAULTS['cost'])
        values.update(attrs)
        return _build('cost', CostParams, **values)


class InitialSectionSerializer(StrictFieldsMixin, serializers.Serializer):
    """初始状态小节"""

    s = serializers.FloatField()
    e = serializers.FloatField()
    i = serializers.FloatField()
    r = serializers.FloatField()

    def validate(self, attrs):
        x0 = _build('initial', EpidemicState, **attrs)
        _build('initial', validate_initial_state, x0=x0)
        return x0


class RunSectionSerializer(StrictFieldsMixin, serializers.Serializer):
    """运行参数小节"""

    name = serializers.CharField(required=False, default='', allow_blank=True)
    mode = serializers.ChoiceField(choices=MODES, required=False, default='simulate')
    horizon = serializers.FloatField(min_value=0.0)
    dt = serializers.FloatField(required=False)
    cell_dt = serializers.FloatField(required=False)
    seed = serializers.IntegerField(required=False, min_value=0)
    workers = serializers.IntegerField(required=False, min_value=1)
    shadow_values = serializers.BooleanField(required=False, default=True)

    def validate(self, attrs):
        defaults = settings.EPICTRL_DEFAULTS
        attrs.setdefault('dt', defaults['dt'])
        attrs.setdefault('cell_dt', defaults['cell_dt'])
        attrs.setdefault('seed', defaults['seed'])
        attrs.setdefault('workers', defaults['workers'])
        if attrs['horizon'] <= 0 or attrs['dt'] <= 0 or attrs['cell_dt'] <= 0:
            raise serializers.ValidationError("horizon、dt、cell_dt 必须为正")
        return attrs


class ScheduleSectionSerializer(StrictFieldsMixin, serializers.Serializer):
    """固定控制日程小节"""

    label = serializers.CharField(required=False, default='', allow_blank=True)
    u = StepScheduleField(required=False, default=((0.0, 0.0),))
    h = StepScheduleField(required=False, default=((0.0, 0.0),))


class SolverSectionSerializer(StrictFieldsMixin, serializers.Serializer):
    """前向-后向扫描的配置小节"""

    max_iters = serializers.IntegerField(required=False, min_value=0)
    damping = serializers.FloatField(required=False)
    conv_tol = serializers.FloatField(required=False)
    sing_tol = serializers.FloatField(required=False)
    singular_policy = serializers.ChoiceField(choices=[p.value for p in SingularPolicy], required=False)
    adaptive_damping = serializers.BooleanField(required=False)
    patience = serializers.IntegerField(required=False, min_value=1)
    min_damping = serializers.FloatField(required=False)
    conservation_tol = serializers.FloatField(required=False)
    strict_tol = serializers.FloatField(required=False)


class SweepSectionSerializer(StrictFieldsMixin, serializers.Serializer):
    """一维扫描小节：values 或 lo/hi/count 二选一"""

    parameter = serializers.ChoiceField(choices=SWEEP_PARAMETERS)
    values = FloatListField(required=False)
    lo = serializers.FloatField(required=False)
    hi = serializers.FloatField(required=False)
    count = serializers.IntegerField(required=False, min_value=1)
    mode = serializers.ChoiceField(choices=SWEEP_MODES, required=False, default='simulate')

    def validate(self, attrs):
        grid_keys = [key for key in ('lo', 'hi', 'count') if key in attrs]
        if 'values' in attrs and grid_keys:
            raise serializers.ValidationError("values 与 lo/hi/count 只能指定一种")
        if 'values' not in attrs and len(grid_keys) != 3:
            raise serializers.ValidationError("需要 values，或者同时给出 lo、hi、count")
        return attrs


class ContinuationSectionSerializer(StrictFieldsMixin, serializers.Serializer):
    """延拓阶梯小节"""

    kappa_ladder = FloatListField(required=False)
    horizon_ladder = FloatListField(required=False)


class DesignSectionSerializer(StrictFieldsMixin, serializers.Serializer):
    """随机化设计小节：连续参数写区间，延迟写离散水平"""

    samples = serializers.IntegerField(required=False, min_value=3)
    beta = RangeField(required=False)
    u_max = RangeField(required=False)
    h_max = RangeField(required=False)
    t_delay_u = FloatListField(required=False)
    t_delay_h = FloatListField(required=False)
    mode = serializers.ChoiceField(choices=SWEEP_MODES, required=False, default='simulate')

    def validate(self, attrs):
        defaults = settings.EPICTRL_DEFAULTS['design']
        ranges = {name: attrs[name] for name in DESIGN_PARAMETERS if name in attrs}
        if not ranges:
            ranges = {name: tuple(defaults[name]) for name in DESIGN_PARAMETERS}
        if 'beta' in ranges and 'h_max' in ranges and ranges['h_max'][1] >= ranges['beta'][0]:
            raise serializers.ValidationError("h_max 的区间必须整体低于 beta 的区间")
        return DesignSpec(
            samples=attrs.get('samples', defaults['samples']),
            ranges=ranges,
            delay_levels={name: attrs[name] for name in DELAY_PARAMETERS if name in attrs},
            mode=attrs['mode'],
        )


class ScenarioSerializer(StrictFieldsMixin, serializers.Serializer):
    """完整场景

    各小节分别校验后，在 validate 中做跨小节检查（网格整除、日程取值范围），
    并组装成 Scenario。
    """

    model = ModelSectionSerializer()
    cost = CostSectionSerializer(required=False)
    initial = InitialSectionSerializer()
    run = RunSectionSerializer()
    schedule = ScheduleSectionSerializer(required=False)
    solver = SolverSectionSerializer(required=False)
    sweep = SweepSectionSerializer(required=False)
    continuation = ContinuationSectionSerializer(required=False)
    design = DesignSectionSerializer(required=False)

    def validate(self, attrs):
        model = attrs['model']
        run = attrs['run']
        cost = attrs.get('cost') or CostParams(**settings.EPICTRL_DEFAULTS['cost'])

        try:
            cells_for_horizon(run['horizon'], run['cell_dt'])
            cells_for_horizon(run['cell_dt'], run['dt'])
        except EpiControlError as e:
            raise serializers.ValidationError({'run': [f"网格不一致: {e}"]})

        solver_values = dict(settings.EPICTRL_DEFAULTS['solver'])
        solver_values.update(attrs.get('solver', {}))
        try:
            solver = SolverConfig(dt=run['dt'], **solver_values)
        except EpiControlError as e:
            raise serializers.ValidationError({'solver': [str(e)]})

        schedule, label, u_steps, h_steps = None, '', (), ()
        if 'schedule' in attrs:
            section = attrs['schedule']
            label, u_steps, h_steps = section['label'], section['u'], section['h']
            if any(v > model.u_max for _, v in u_steps):
                raise serializers.ValidationError({'schedule': [f"u 的取值超过 u_max={model.u_max}"]})
            if any(v > model.h_max for _, v in h_steps):
                raise serializers.ValidationError({'schedule': [f"h 的取值超过 h_max={model.h_max}"]})
            schedule = ControlSchedule.from_steps(model, run['horizon'], run['cell_dt'], u_steps, h_steps)

        sweep = None
        if 'sweep' in attrs:
            section = attrs['sweep']
            grid = (section['lo'], section['hi'], section['count']) if 'values' not in section else None
            try:
                sweep = SweepSpec(section['parameter'], values=section.get('values', ()), grid=grid,
                                  mode=section['mode'], workers=run['workers'])
            except EpiControlError as e:
                raise serializers.ValidationError({'sweep': [str(e)]})

        design = attrs.get('design')
        if design is None and run['mode'] == 'random-sweep':
            design = DesignSectionSerializer().run_validation({})

        continuation = attrs.get('continuation', {})
        return Scenario(
            mode=run['mode'], model=model, cost=cost, initial=attrs['initial'],
            horizon=run['horizon'], dt=run['dt'], cell_dt=run['cell_dt'], solver=solver,
            seed=run['seed'], workers=run['workers'], name=run['name'],
            schedule=schedule, schedule_label=label, u_steps=u_steps, h_steps=h_steps,
            sweep=sweep, kappa_ladder=continuation.get('kappa_ladder', ()),
            horizon_ladder=continuation.get('horizon_ladder', ()), design=design,
            shadow_values=run['shadow_values'],
        )
