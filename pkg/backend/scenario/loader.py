"""
场景文件解析

支持两种等价的编码：
- 扁平文本：每行一个 section.key = value，# 开头的注释和空行会被忽略
- JSON：{"section": {"key": value, ...}, ...}

语法问题（未知小节或键、重复键、缺少等号）抛出带行号和键名的 ScenarioParseError，
取值问题交给序列化器，以 ScenarioValidationError 报告。
"""

import json
import logging
import os
from typing import Any, Dict, Optional

from epidemic.exceptions import ScenarioParseError, ScenarioValidationError
from .models import Scenario
from .serializers import ScenarioSerializer

logger = logging.getLogger(__name__)

# 每种模式必须出现的场景字段
MODE_REQUIREMENTS = {
    'sweep': ('sweep', "sweep 模式需要 sweep 小节"),
    'kappa-continuation': ('kappa_ladder', "kappa-continuation 模式需要 continuation.kappa_ladder"),
    'horizon-continuation': ('horizon_ladder', "horizon-continuation 模式需要 continuation.horizon_ladder"),
}


def _section_fields() -> Dict[str, set]:
    serializer = ScenarioSerializer()
    return {name: set(field.fields) for name, field in serializer.fields.items()}


def _check_key(sections: Dict[str, set], section: str, key: str, line: Optional[int] = None) -> None:
    if section not in sections:
        raise ScenarioParseError(f"未知的小节 '{section}'，可选: {', '.join(sorted(sections))}", line, section)
    if key not in sections[section]:
        raise ScenarioParseError(f"小节 '{section}' 中没有键 '{key}'", line, f"{section}.{key}")


def parse_text(text: str) -> Dict[str, Dict[str, Any]]:
    """解析扁平的 section.key = value 文本

    Raises:
        ScenarioParseError: 语法错误、未知键或重复键
    """
    sections = _section_fields()
    data: Dict[str, Dict[str, Any]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ScenarioParseError("缺少 '='，应写作 section.key = value", number)
        dotted, value = (part.strip() for part in line.split('=', 1))
        if dotted.count('.') != 1:
            raise ScenarioParseError("键必须写作 section.key", number, dotted)
        section, key = dotted.split('.')
        _check_key(sections, section, key, number)
        if key in data.get(section, {}):
            raise ScenarioParseError("重复的键", number, dotted)
        if value == '':
            raise ScenarioParseError("取值不能为空", number, dotted)
        data.setdefault(section, {})[key] = value
    return data


def parse_json(text: str) -> Dict[str, Dict[str, Any]]:
    """解析 JSON 编码的场景

    Raises:
        ScenarioParseError: JSON 语法错误、结构不对或未知键
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"JSON 语法错误: {e.msg}", e.lineno)
    if not isinstance(data, dict):
        raise ScenarioParseError("JSON 场景的顶层必须是对象")
    sections = _section_fields()
    for section, values in data.items():
        if not isinstance(values, dict):
            raise ScenarioParseError("小节必须是对象", key=section)
        for key in values:
            _check_key(sections, section, key)
    return data


def _flatten_errors(errors: Any, prefix: str = '') -> Dict[str, list]:
    flat: Dict[str, list] = {}
    if isinstance(errors, dict):
        for key, value in errors.items():
            name = prefix if key == 'non_field_errors' else (f"{prefix}.{key}" if prefix else key)
            flat.update(_flatten_errors(value, name))
    else:
        messages = errors if isinstance(errors, list) else [errors]
        flat.setdefault(prefix or 'scenario', []).extend(str(m) for m in messages)
    return flat


def read_scenario_data(path: str) -> Dict[str, Dict[str, Any]]:
    """读取场景文件，按扩展名或首字符选择 JSON 或文本解析"""
    if not os.path.isfile(path):
        raise ScenarioParseError(f"场景文件不存在: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    if path.endswith('.json') or text.lstrip().startswith('{'):
        return parse_json(text)
    return parse_text(text)


def build_scenario(data: Dict[str, Dict[str, Any]], mode: Optional[str] = None,
                   overrides: Optional[Dict[str, Any]] = None) -> Scenario:
    """校验原始数据并组装 Scenario

    Args:
        data: 按小节组织的原始取值
        mode: 命令行给出的模式，覆盖 run.mode
        overrides: 命令行覆盖项，键为 section.key

    Raises:
        ScenarioValidationError: 取值不合法或缺少当前模式需要的小节
    """
    data = {section: dict(values) for section, values in data.items()}
    sections = _section_fields()
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split('.')
        _check_key(sections, section, key)
        data.setdefault(section, {})[key] = value
    if mode is not None:
        data.setdefault('run', {})['mode'] = mode

    serializer = ScenarioSerializer(data=data)
    if not serializer.is_valid():
        errors = _flatten_errors(serializer.errors)
        logger.warning(f"场景校验失败: {errors}")
        raise ScenarioValidationError(errors)
    scenario = serializer.validated_data

    requirement = MODE_REQUIREMENTS.get(scenario.mode)
    if requirement is not None:
        attribute, message = requirement
        if not getattr(scenario, attribute):
            raise ScenarioValidationError({'run.mode': [message]})
    return scenario


def parse_scenario(path: str, mode: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Scenario:
    """解析并校验场景文件

    Args:
        path: 场景文件路径
        mode: 覆盖 run.mode 的模式
        overrides: 命令行覆盖项，例如 {'run.seed': 3, 'run.dt': 0.05}

    Returns:
        Scenario: 校验后的场景

    Raises:
        ScenarioParseError: 文件不存在或语法错误
        ScenarioValidationError: 取值不合法
    """
    data = read_scenario_data(path)
    scenario = build_scenario(data, mode, overrides)
    logger.info(f"已加载场景 {path}: 模式 {scenario.mode}, T={scenario.horizon}, dt={scenario.dt}")
    return scenario
