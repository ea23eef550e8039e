import typing

if typing.TYPE_CHECKING:
    from typing import Any, Mapping

__all__ = [
    "NfsfError",
    "DomainError",
    "ConfigError",
    "DivergenceError",
    "BlowUpError",
    "ConvergenceError",
    "ConditionFailed",
]


class NfsfError(Exception):
    pass


class DomainError(NfsfError, ValueError):
    pass


class ConfigError(NfsfError, ValueError):
    def __init__(self, message: str, *, path: "str | None" = None, line: "int | None" = None) -> None:
        self.path = path
        self.line = line
        where = f"{path or '<config>'}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(f"{where}{message}")


class DivergenceError(NfsfError, RuntimeError):
    def __init__(self, message: str, diagnostics: "Mapping[str, Any] | None" = None) -> None:
        self.diagnostics: "dict[str, Any]" = dict(diagnostics or {})
        super().__init__(message)


class BlowUpError(DivergenceError):
    def __init__(self, message: str, tau: float, diagnostics: "Mapping[str, Any] | None" = None) -> None:
        self.tau = tau
        super().__init__(message, {"tau": tau, **(diagnostics or {})})


class ConvergenceError(NfsfError, RuntimeError):
    def __init__(self, message: str, bracket: "tuple[float, float] | None" = None) -> None:
        self.bracket = bracket
        super().__init__(message if bracket is None else f"{message} (bracket `{bracket}`)")


class ConditionFailed(NfsfError):
    pass
