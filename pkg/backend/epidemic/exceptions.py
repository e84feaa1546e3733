"""
异常定义模块

所有应用共享的异常层次结构。求解器内部抛出这些异常，场景流水线负责捕获并转换为退出码。
"""


class EpiControlError(Exception):
    """所有领域异常的基类"""


class ParameterError(EpiControlError, ValueError):
    """模型、成本或求解器参数不合法（例如违反 0 ≤ h_max < beta）"""


class StateError(EpiControlError, ValueError):
    """状态不在单纯形内，或初始条件不满足要求"""


class ScheduleError(EpiControlError, ValueError):
    """控制日程的网格或容许性不满足要求"""


class InvariantViolationError(EpiControlError):
    """积分过程中守恒或非负性被破坏，通常说明步长过大"""


class LambertDomainError(EpiControlError, ValueError):
    """Lambert W 主分支的自变量小于 -1/e"""


class DegenerateChangeOfVariablesError(EpiControlError):
    """s 在某个区间上停滞，无法以 s 作为积分变量"""


class AdjointDivergenceError(EpiControlError):
    """伴随变量出现非有限值"""


class BoundViolationError(EpiControlError, ValueError):
    """扰动后的控制离开了允许的区间"""


class DegenerateSampleError(EpiControlError, ValueError):
    """样本长度不足或方差为零"""


class NotConvergedError(EpiControlError):
    """要求收敛结果的操作收到了未收敛的结果"""


class ScenarioParseError(EpiControlError):
    """场景文件语法错误

    Attributes:
        line: 出错的行号（JSON 格式时为 None）
        key: 出错的键名
    """

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        location = []
        if line is not None:
            location.append(f"第 {line} 行")
        if key:
            location.append(f"键 '{key}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(f"{prefix}{message}")


class ScenarioValidationError(EpiControlError, ValueError):
    """场景文件内容校验失败

    Attributes:
        errors: 字段名到错误信息列表的映射
    """

    def __init__(self, errors):
        self.errors = errors
        details = "; ".join(f"{field}: {', '.join(map(str, msgs))}" for field, msgs in errors.items())
        super().__init__(f"场景校验失败: {details}")
