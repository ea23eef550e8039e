import typing

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.special import expit

from ..core import as_dataclass
from ..errors import DomainError

if typing.TYPE_CHECKING:
    from typing import Literal

    from numpy.typing import ArrayLike, NDArray

    PhiKind = Literal["linear", "smoothed-rectifier", "sigmoid", "custom-tabulated", "polynomial"]
    Sign = Literal["nonneg", "nonpos", "mixed"]

__all__ = ["ModulationFn"]


@as_dataclass(readonly=True)
class ModulationFn:
    """Modulation function Φ: ℝ → ℝ with first and second derivatives.

    `params` holds the per-kind scalars:

    - linear: (slope, offset)
    - smoothed-rectifier: (gain, width); width 0 is the sharp rectifier gain·max(p, 0)
    - sigmoid: (gain, threshold, steepness)
    - polynomial: coefficients c0, c1, ... (increasing degree)
    - custom-tabulated: () with `knots`/`values`, linear interpolation and constant extrapolation
    """

    kind: str
    params: "tuple[float, ...]"
    knots: "NDArray[np.float64] | None" = None
    values: "NDArray[np.float64] | None" = None

    @staticmethod
    def linear(slope: float = 1.0, offset: float = 0.0) -> "ModulationFn":
        return ModulationFn("linear", (float(slope), float(offset)))

    @staticmethod
    def constant(c: float) -> "ModulationFn":
        return ModulationFn("linear", (0.0, float(c)))

    @staticmethod
    def rectifier(gain: float = 1.0, width: float = 0.0) -> "ModulationFn":
        if width < 0:
            raise DomainError(f"Smoothing width must be nonnegative, got `{width}`")
        return ModulationFn("smoothed-rectifier", (float(gain), float(width)))

    @staticmethod
    def sigmoid(gain: float = 1.0, threshold: float = 0.0, steepness: float = 1.0) -> "ModulationFn":
        if not steepness > 0:
            raise DomainError(f"Sigmoid steepness must be positive, got `{steepness}`")
        return ModulationFn("sigmoid", (float(gain), float(threshold), float(steepness)))

    @staticmethod
    def polynomial(*coefficients: float) -> "ModulationFn":
        if not coefficients:
            raise DomainError("Polynomial needs at least one coefficient")
        return ModulationFn("polynomial", tuple(float(c) for c in coefficients))

    @staticmethod
    def tabulated(knots: "ArrayLike", values: "ArrayLike") -> "ModulationFn":
        k = np.asarray(knots, dtype=np.float64)
        v = np.asarray(values, dtype=np.float64)
        if k.ndim != 1 or k.shape != v.shape or k.size < 2:
            raise DomainError(f"Tabulated Φ needs matching 1-d knots and values, got shapes `{k.shape}`, `{v.shape}`")
        if np.any(np.diff(k) <= 0):
            raise DomainError("Tabulated Φ knots must be strictly increasing")
        return ModulationFn("custom-tabulated", (), k, v)

    def __call__(self, p: "ArrayLike") -> "NDArray[np.float64]":
        x = np.asarray(p, dtype=np.float64)
        if self.kind == "linear":
            a, b = self.params
            return a * x + b
        if self.kind == "smoothed-rectifier":
            a, nu = self.params
            return a * np.maximum(x, 0.0) if nu == 0.0 else a * nu * np.logaddexp(0.0, x / nu)
        if self.kind == "sigmoid":
            a, theta, kappa = self.params
            return a * expit((x - theta) / kappa)
        if self.kind == "polynomial":
            return npoly.polyval(x, self.params)
        return np.interp(x, self.knots, self.values)  # type: ignore

    def derivative(self, p: "ArrayLike") -> "NDArray[np.float64]":
        x = np.asarray(p, dtype=np.float64)
        if self.kind == "linear":
            return np.full_like(x, self.params[0])
        if self.kind == "smoothed-rectifier":
            a, nu = self.params
            return a * (x > 0.0).astype(np.float64) if nu == 0.0 else a * expit(x / nu)
        if self.kind == "sigmoid":
            a, theta, kappa = self.params
            e = expit((x - theta) / kappa)
            return (a / kappa) * e * (1.0 - e)
        if self.kind == "polynomial":
            return npoly.polyval(x, npoly.polyder(self.params)) if len(self.params) > 1 else np.zeros_like(x)
        h = 1e-7 * (1.0 + np.abs(x))
        return (self(x + h) - self(x - h)) / (2.0 * h)

    def second_derivative(self, p: "ArrayLike") -> "NDArray[np.float64]":
        x = np.asarray(p, dtype=np.float64)
        if self.kind == "linear":
            return np.zeros_like(x)
        if self.kind == "smoothed-rectifier":
            a, nu = self.params
            if nu == 0.0:
                return np.zeros_like(x)
            e = expit(x / nu)
            return (a / nu) * e * (1.0 - e)
        if self.kind == "sigmoid":
            a, theta, kappa = self.params
            e = expit((x - theta) / kappa)
            return (a / kappa**2) * e * (1.0 - e) * (1.0 - 2.0 * e)
        if self.kind == "polynomial":
            return npoly.polyval(x, npoly.polyder(self.params, 2)) if len(self.params) > 2 else np.zeros_like(x)
        h = 1e-4 * (1.0 + np.abs(x))
        return (self(x + h) - 2.0 * self(x) + self(x - h)) / h**2

    @property
    def lipschitz_constant(self) -> "float | None":
        """‖Φ′‖∞ when it is finite and known in closed form, None otherwise."""
        if self.kind == "linear":
            return abs(self.params[0])
        if self.kind == "smoothed-rectifier":
            return abs(self.params[0])
        if self.kind == "sigmoid":
            a, _, kappa = self.params
            return abs(a) / (4.0 * kappa)
        if self.kind == "polynomial":
            return abs(self.params[1]) if len(self.params) == 2 else (0.0 if len(self.params) == 1 else None)
        return float(np.max(np.abs(np.diff(self.values) / np.diff(self.knots))))  # type: ignore

    @property
    def sign(self) -> "Sign":
        if self.kind == "linear":
            a, b = self.params
            if a != 0.0:
                return "mixed"
            return "nonneg" if b >= 0 else "nonpos"
        if self.kind in ("smoothed-rectifier", "sigmoid"):
            return "nonneg" if self.params[0] >= 0 else "nonpos"
        if self.kind == "polynomial":
            c = np.asarray(self.params)
            if np.all(c[1::2] == 0.0):
                if np.all(c[0::2] >= 0.0):
                    return "nonneg"
                if np.all(c[0::2] <= 0.0):
                    return "nonpos"
            return "mixed"
        if np.all(self.values >= 0.0):  # type: ignore
            return "nonneg"
        return "nonpos" if np.all(self.values <= 0.0) else "mixed"  # type: ignore

    @property
    def is_constant(self) -> bool:
        return self.lipschitz_constant == 0.0

    def is_increasing(self) -> bool:
        """Non-decreasing everywhere, strictly somewhere."""
        if self.kind in ("linear", "smoothed-rectifier", "sigmoid"):
            return self.params[0] > 0
        if self.kind == "custom-tabulated":
            dv = np.diff(self.values)  # type: ignore
            return bool(np.all(dv >= 0.0) and np.any(dv > 0.0))
        return len(self.params) == 2 and self.params[1] > 0

    def sup_derivative(self, lo: float = -1e3, hi: float = 1e3, n: int = 200_001) -> float:
        """‖Φ′‖∞, sampled on [lo, hi] when no closed form is known."""
        lip = self.lipschitz_constant
        if lip is not None:
            return lip
        return float(np.max(np.abs(self.derivative(np.linspace(lo, hi, n)))))

    def scaled(self, c: float) -> "ModulationFn":
        """The function c·Φ."""
        if self.kind == "linear":
            a, b = self.params
            return ModulationFn("linear", (c * a, c * b))
        if self.kind == "smoothed-rectifier":
            a, nu = self.params
            return ModulationFn("smoothed-rectifier", (c * a, nu))
        if self.kind == "sigmoid":
            a, theta, kappa = self.params
            return ModulationFn("sigmoid", (c * a, theta, kappa))
        if self.kind == "polynomial":
            return ModulationFn("polynomial", tuple(c * k for k in self.params))
        return ModulationFn("custom-tabulated", (), self.knots, c * self.values)  # type: ignore

    def inverse(self, omega: "ArrayLike", *, tol: float = 1e-12, max_iter: int = 200) -> "NDArray[np.float64]":
        """Φ⁻¹ by monotone bisection; Φ must be increasing and ω inside its range."""
        if not self.is_increasing():
            raise DomainError(f"Φ of kind `{self.kind}` is not increasing, no inverse")
        w = np.atleast_1d(np.asarray(omega, dtype=np.float64))
        lo = np.full_like(w, -1.0)
        hi = np.full_like(w, 1.0)
        for _ in range(60):
            low = self(lo) > w
            high = self(hi) < w
            if not (low.any() or high.any()):
                break
            lo = np.where(low, 2.0 * lo, lo)
            hi = np.where(high, 2.0 * hi, hi)
        else:
            raise DomainError(f"Values outside the range of Φ: `{w[(self(lo) > w) | (self(hi) < w)][:3]}`")
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            below = self(mid) < w
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo) <= tol * (1.0 + np.max(np.abs(mid))):
                break
        return (0.5 * (lo + hi)).reshape(np.shape(omega))
