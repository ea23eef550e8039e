import typing

import numpy as np

from ..core import as_dataclass
from ..errors import DomainError

if typing.TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

__all__ = ["ExternalInput"]


@as_dataclass(readonly=True)
class ExternalInput:
    """External input B(t): a constant, or piecewise-linear in time and held constant outside the table."""

    kind: str
    times: "NDArray[np.float64]"
    values: "NDArray[np.float64]"

    @staticmethod
    def constant(b: float) -> "ExternalInput":
        return ExternalInput("constant", np.zeros(1), np.full(1, float(b)))

    @staticmethod
    def tabulated(times: "ArrayLike", values: "ArrayLike") -> "ExternalInput":
        t = np.asarray(times, dtype=np.float64)
        v = np.asarray(values, dtype=np.float64)
        if t.ndim != 1 or t.shape != v.shape or t.size < 1:
            raise DomainError(f"Tabulated input needs matching 1-d times and values, got `{t.shape}`, `{v.shape}`")
        if np.any(np.diff(t) <= 0):
            raise DomainError("Tabulated input times must be strictly increasing")
        return ExternalInput("tabulated-in-time", t, v)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or bool(np.all(self.values == self.values[0]))

    def value(self, t: "ArrayLike") -> "NDArray[np.float64]":
        if self.kind == "constant":
            return np.full(np.shape(t), self.values[0])
        return np.interp(t, self.times, self.values)

    def __call__(self, t: "ArrayLike") -> "NDArray[np.float64]":
        return self.value(t)

    def transformed(self, tau: "ArrayLike") -> "NDArray[np.float64]":
        """β(τ) = B(−log α(τ)) = B(½·log(2τ + 1)), in normalized time."""
        return self.value(0.5 * np.log1p(2.0 * np.asarray(tau, dtype=np.float64)))

    def time_scaled(self, tau_c: float) -> "ExternalInput":
        """Input of the rescaled time t̃ = t/τ_c."""
        if self.kind == "constant":
            return self
        return ExternalInput(self.kind, self.times / tau_c, self.values)

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))
