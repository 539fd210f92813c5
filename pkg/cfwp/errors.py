from typing import Any, List, Optional


class CfwpError(Exception):
    """计算错误基类（status_code / detail 与 HTTPException 对齐）"""

    status_code: int = 400
    exit_code: Optional[int] = None

    def __init__(self, detail: str, **context: Any):
        super().__init__(detail)
        self.detail = detail
        self.context = context

    def to_dict(self) -> dict:
        payload = {"error": type(self).__name__, "detail": self.detail}
        payload.update({k: v for k, v in self.context.items() if v is not None})
        return payload


# 表达式语言
class ExprSyntaxError(CfwpError):
    status_code = 422

    def __init__(self, detail: str, position: int, expected: List[str]):
        super().__init__(f"{detail} at position {position} (expected {', '.join(expected)})",
                         position=position, expected=list(expected))
        self.position = position
        self.expected = list(expected)


class UnknownIdentifier(CfwpError):
    status_code = 422

    def __init__(self, name: str, position: Optional[int] = None):
        super().__init__(f"unknown identifier '{name}'", name=name, position=position)
        self.name = name
        self.position = position


class DomainError(CfwpError):
    status_code = 422

    def __init__(self, detail: str, subexpr: str):
        super().__init__(f"{detail}: {subexpr}", subexpr=subexpr)
        self.subexpr = subexpr


class ToleranceNotMet(CfwpError):
    pass


# 几何与参数
class InvalidParams(CfwpError):
    status_code = 422


class InvalidInput(CfwpError):
    status_code = 422


class IntConditionFailed(CfwpError):
    pass


class QuadratureFailure(CfwpError):
    pass


class LimitDiverges(CfwpError):
    pass


class TabulatedProfileUnsupported(CfwpError):
    pass


# 积分与匹配
class IrregularSingularity(CfwpError):
    pass


class StepUnderflow(CfwpError):
    pass


class DegenerateDirection(CfwpError):
    pass


class PreconditionError(CfwpError):
    pass


class ResourceLimit(CfwpError):
    status_code = 413


# 命令行
class ConfigError(CfwpError):
    status_code = 422
    exit_code = 64


class FileAccessError(CfwpError):
    status_code = 500
    exit_code = 74
