"""
运行结果的写出

所有文件都是纯文本：trajectory.csv、summary.json、sweep.csv 以及失败时的 error.json。
数值按完整精度写出，JSON 按键排序且不含时间戳，同一场景和种子重复运行得到逐字节相同的文件。
"""

import json
import logging
import math
import os
from dataclasses import asdict, is_dataclass
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from epidemic.models import Trajectory
from optimal_control.models import AdjointPath, SwitchingPath

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ('t', 's', 'e', 'i', 'r', 'u', 'h', 'lambda_s', 'lambda_e', 'lambda_i', 'phi_u', 'phi_h')
FLOAT_FORMAT = '%.17g'

TRAJECTORY_FILE = 'trajectory.csv'
SUMMARY_FILE = 'summary.json'
SWEEP_FILE = 'sweep.csv'
ERROR_FILE = 'error.json'


def trajectory_frame(trajectory: Trajectory, adjoints: Optional[AdjointPath] = None,
                     switching: Optional[SwitchingPath] = None) -> pd.DataFrame:
    """轨迹表格，列顺序固定；simulate 模式下伴随和切换函数列为空"""
    n = len(trajectory.times)
    empty = np.full(n, np.nan)
    frame = pd.DataFrame({
        't': trajectory.times,
        's': trajectory.s,
        'e': trajectory.e,
        'i': trajectory.i,
        'r': trajectory.r,
        'u': trajectory.u,
        'h': trajectory.h,
        'lambda_s': adjoints.lambda_s if adjoints is not None else empty,
        'lambda_e': adjoints.lambda_e if adjoints is not None else empty,
        'lambda_i': adjoints.lambda_i if adjoints is not None else empty,
        'phi_u': switching.phi_u if switching is not None else empty,
        'phi_h': switching.phi_h if switching is not None else empty,
    })
    return frame[list(TRAJECTORY_COLUMNS)]


def write_csv(frame: pd.DataFrame, path: str, index: bool = False) -> str:
    frame.to_csv(path, index=index, float_format=FLOAT_FORMAT, na_rep='', lineterminator='\n')
    logger.debug(f"已写出 {path}: {len(frame)} 行")
    return path


def write_trajectory_csv(out_dir: str, trajectory: Trajectory, adjoints: Optional[AdjointPath] = None,
                         switching: Optional[SwitchingPath] = None, filename: str = TRAJECTORY_FILE) -> str:
    return write_csv(trajectory_frame(trajectory, adjoints, switching), os.path.join(out_dir, filename))


def jsonable(value: Any) -> Any:
    """把结果对象转换为可以写入 JSON 的结构

    numpy 标量和数组转为 Python 数值和列表，枚举取其值，NaN 和无穷写作 null。
    """
    if isinstance(value, Enum):
        return value.value
    if is_dataclass(value) and not isinstance(value, type):
        return jsonable(asdict(value))
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(data: Dict[str, Any], path: str) -> str:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(jsonable(data), f, ensure_ascii=False, indent=2, sort_keys=True, allow_nan=False)
        f.write('\n')
    return path


def write_summary_json(out_dir: str, summary: Dict[str, Any]) -> str:
    return write_json(summary, os.path.join(out_dir, SUMMARY_FILE))


def write_error_json(out_dir: str, exit_code: int, error_type: str, message: str,
                     details: Optional[Dict[str, Any]] = None) -> Optional[str]:
    """写出机器可读的错误文件；输出目录不可写时只记录日志"""
    payload = {'exit_code': exit_code, 'error_type': error_type, 'message': message, 'details': details or {}}
    try:
        os.makedirs(out_dir, exist_ok=True)
        return write_json(payload, os.path.join(out_dir, ERROR_FILE))
    except OSError as e:
        logger.error(f"无法写出错误文件到 {out_dir}: {str(e)}")
        return None
