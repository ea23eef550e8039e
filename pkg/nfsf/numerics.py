"""Special functions, heat-kernel moments, periodic convolution and Fourier modes.

All functions are vectorised over numpy broadcasting and pure.
"""
import logging
import typing

import numpy as np
import scipy.fft as sfft
from scipy import special

from .core import as_dataclass
from .errors import DomainError

if typing.TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    from .model.kernel import ConnectivityKernel

__all__ = [
    "erf",
    "half_line_gaussian_integral",
    "heat_kernel",
    "heat_kernel_dxi",
    "moment_zG",
    "moment_zGdxi",
    "HeatKernelEval",
    "periodic_convolve",
    "FourierModes",
    "fourier_modes",
]

logger = logging.getLogger(__name__)

SQRT_PI = float(np.sqrt(np.pi))
# below this τ − η the moment identities return their analytic limits
NEAR_SINGULAR = 1e-14


def erf(x: "ArrayLike") -> "NDArray[np.float64]":
    return special.erf(np.asarray(x, dtype=np.float64))


def half_line_gaussian_integral(mu: "ArrayLike", scale: "ArrayLike") -> "NDArray[np.float64]":
    """∫₀^∞ exp(−(y − μ)²/(2·scale)) dy = √(π·scale/2)·(1 + erf(μ/√(2·scale)))."""
    m = np.asarray(mu, dtype=np.float64)
    v = np.asarray(scale, dtype=np.float64)
    if np.any(v <= 0):
        raise DomainError(f"Gaussian scale must be positive, got `{v[v <= 0].ravel()[:3]}`")
    # 1 + erf(x) == erfc(−x) keeps the left tail accurate down to underflow
    return np.sqrt(np.pi * v / 2.0) * special.erfc(-m / np.sqrt(2.0 * v))


def _elapsed(tau: "ArrayLike", eta: "ArrayLike") -> "NDArray[np.float64]":
    dt = np.asarray(tau, dtype=np.float64) - np.asarray(eta, dtype=np.float64)
    if np.any(dt <= 0):
        raise DomainError("Heat kernel needs τ > η")
    return dt


def heat_kernel(z: "ArrayLike", tau: "ArrayLike", xi: "ArrayLike", eta: "ArrayLike") -> "NDArray[np.float64]":
    """G(z, τ, ξ, η) = exp(−(z − ξ)²/(4(τ − η)))/√(4π(τ − η))."""
    dt = _elapsed(tau, eta)
    dz = np.asarray(z, dtype=np.float64) - np.asarray(xi, dtype=np.float64)
    return np.exp(-(dz**2) / (4.0 * dt)) / np.sqrt(4.0 * np.pi * dt)


def heat_kernel_dxi(z: "ArrayLike", tau: "ArrayLike", xi: "ArrayLike", eta: "ArrayLike") -> "NDArray[np.float64]":
    """∂G/∂ξ = (z − ξ)/(2(τ − η))·G."""
    dt = _elapsed(tau, eta)
    dz = np.asarray(z, dtype=np.float64) - np.asarray(xi, dtype=np.float64)
    return dz / (2.0 * dt) * np.exp(-(dz**2) / (4.0 * dt)) / np.sqrt(4.0 * np.pi * dt)


def moment_zG(gamma_tau: "ArrayLike", tau: "ArrayLike", xi: "ArrayLike", eta: "ArrayLike") -> "NDArray[np.float64]":
    """∫_{γ_τ}^∞ z·G(z, τ, ξ, η) dz."""
    dt = _elapsed(tau, eta)
    g = np.asarray(gamma_tau, dtype=np.float64)
    x = np.asarray(xi, dtype=np.float64)
    dg = x - g
    with np.errstate(divide="ignore", invalid="ignore"):
        regular = np.sqrt(dt / np.pi) * np.exp(-(dg**2) / (4.0 * dt)) + 0.5 * x * special.erfc(-dg / (2.0 * np.sqrt(dt)))
    limit = x * (0.5 * (1.0 + np.sign(dg)))
    return np.where(dt < NEAR_SINGULAR, limit, regular)


def moment_zGdxi(
    gamma_tau: "ArrayLike", tau: "ArrayLike", gamma_eta: "ArrayLike", eta: "ArrayLike"
) -> "NDArray[np.float64]":
    """∫_{γ_τ}^∞ z·∂G/∂ξ(z, τ, γ_η, η) dz."""
    dt = _elapsed(tau, eta)
    gt = np.asarray(gamma_tau, dtype=np.float64)
    dg = gt - np.asarray(gamma_eta, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        regular = gt * np.exp(-(dg**2) / (4.0 * dt)) / np.sqrt(4.0 * np.pi * dt) + 0.5 * special.erfc(
            dg / (2.0 * np.sqrt(dt))
        )
        # the 1/√(τ − η) term diverges only on the diagonal γ_τ = γ_η with γ_τ ≠ 0
        diverging = (dg == 0.0) & (gt != 0.0)
        limit = np.where(diverging, np.copysign(np.inf, gt), 0.0) + 0.5 * (1.0 - np.sign(dg))
    return np.where(dt < NEAR_SINGULAR, limit, regular)


@as_dataclass(readonly=True)
class HeatKernelEval:
    z: float
    tau: float
    xi: float
    eta: float

    @property
    def value(self) -> float:
        return float(heat_kernel(self.z, self.tau, self.xi, self.eta))

    @property
    def dxi(self) -> float:
        return float(heat_kernel_dxi(self.z, self.tau, self.xi, self.eta))


def periodic_convolve(W: "ConnectivityKernel", f: "ArrayLike") -> "NDArray[np.float64]":
    """(W∗f)[x] = Σ_y W[x − y]·f[y]·Δx^d on the torus.

    `f` is either shaped like the grid or flattened over it, with optional leading batch axes.
    """
    grid = W.grid
    a = np.asarray(f, dtype=np.float64)
    flat = a.shape[-1:] == (grid.n_points,)
    if flat:
        lead = a.shape[:-1]
    elif a.shape[a.ndim - grid.d :] == grid.shape:
        lead = a.shape[: a.ndim - grid.d]
    else:
        raise DomainError(f"Field of shape `{a.shape}` does not live on grid `{grid.shape}`")
    axes = tuple(range(-grid.d, 0))
    spectrum = sfft.fftn(W.samples, axes=axes)
    out = sfft.ifftn(sfft.fftn(a.reshape(lead + grid.shape), axes=axes) * spectrum, axes=axes).real
    out *= grid.cell_volume
    return out.reshape(a.shape)


@as_dataclass(readonly=True)
class FourierModes:
    """Unnormalised modes Ŵ_k = Σ_x W[x]·exp(−2πi k·x/L)·Δx^d for |k_i| ≤ K_max."""

    k: "NDArray[np.int64]"
    values: "NDArray[np.complex128]"
    L: float
    convention: str = "exp(-2*pi*i*k.x/L), unnormalised"

    def mode(self, *k: int) -> complex:
        hit = np.all(self.k == np.asarray(k), axis=1)
        if not hit.any():
            raise KeyError(f"Mode `{k}` not computed")
        return complex(self.values[np.argmax(hit)])

    @property
    def real(self) -> "NDArray[np.float64]":
        return self.values.real

    @property
    def max_imag(self) -> float:
        return float(np.max(np.abs(self.values.imag)))


def fourier_modes(W: "ConnectivityKernel", K_max: int) -> FourierModes:
    if K_max < 0:
        raise DomainError(f"K_max must be nonnegative, got `{K_max}`")
    grid = W.grid
    k_top = min(int(K_max), grid.n_x // 2)
    if k_top < K_max:
        logger.debug(f"K_max {K_max} clipped to the Nyquist index {k_top}")
    spectrum = sfft.fftn(W.samples) * grid.cell_volume
    ks = np.arange(-k_top, k_top + 1)
    k = np.stack([m.ravel() for m in np.meshgrid(*([ks] * grid.d), indexing="ij")], axis=1)
    values = spectrum[tuple((k % grid.n_x).T)]
    return FourierModes(k.astype(np.int64), values.astype(np.complex128), grid.L)
