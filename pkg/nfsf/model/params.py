import typing

import numpy as np

from ..core import as_dataclass
from ..errors import DomainError
from .grids import ActivityGrid

if typing.TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    from .density import DensityField
    from .grids import SpatialGrid
    from .inputs import ExternalInput
    from .kernel import ConnectivityKernel
    from .modulation import ModulationFn

__all__ = ["ModelParams", "RescaleMap", "normalize_parameters"]


@as_dataclass(readonly=True)
class ModelParams:
    tau_c: float
    sigma: float
    L: float
    d: int
    phi: "ModulationFn"
    W: "ConnectivityKernel"
    B: "ExternalInput"

    @staticmethod
    def create(
        phi: "ModulationFn", W: "ConnectivityKernel", B: "ExternalInput", *, tau_c: float = 1.0, sigma: float = 1.0
    ) -> "ModelParams":
        if not tau_c > 0:
            raise DomainError(f"tau_c must be positive, got `{tau_c}`")
        if not sigma > 0:
            raise DomainError(f"sigma must be positive, got `{sigma}`")
        return ModelParams(float(tau_c), float(sigma), W.grid.L, W.grid.d, phi, W, B)

    @property
    def grid(self) -> "SpatialGrid":
        return self.W.grid

    @property
    def mass(self) -> float:
        """Per-x mass 1/L^d."""
        return 1.0 / self.L**self.d

    @property
    def is_normalized(self) -> bool:
        return self.tau_c == 1.0 and self.sigma == 1.0

    def replace(self, **changes: "typing.Any") -> "ModelParams":
        fields = {k: getattr(self, k) for k in ("phi", "W", "B", "tau_c", "sigma")}
        fields.update(changes)
        return ModelParams.create(fields.pop("phi"), fields.pop("W"), fields.pop("B"), **fields)

    def normalize(self) -> "tuple[ModelParams, RescaleMap]":
        return normalize_parameters(self)


@as_dataclass(readonly=True)
class RescaleMap:
    """ρ(x, s, t) = (1/√σ)·ρ̃(x, s/√σ, t/τ_c) and back."""

    sigma: float
    tau_c: float

    @property
    def s_scale(self) -> float:
        return float(np.sqrt(self.sigma))

    def time_to_normalized(self, t: "ArrayLike") -> "NDArray[np.float64]":
        return np.asarray(t, dtype=np.float64) / self.tau_c

    def time_to_original(self, t: "ArrayLike") -> "NDArray[np.float64]":
        return np.asarray(t, dtype=np.float64) * self.tau_c

    def field_to_normalized(self, rho: "DensityField") -> "DensityField":
        c = self.s_scale
        activity = ActivityGrid(rho.activity.s_max / c, rho.activity.n_s)
        return rho.with_grids(rho.spatial, activity, rho.values * c, rho.t / self.tau_c)

    def field_to_original(self, rho: "DensityField") -> "DensityField":
        c = self.s_scale
        activity = ActivityGrid(rho.activity.s_max * c, rho.activity.n_s)
        return rho.with_grids(rho.spatial, activity, rho.values / c, rho.t * self.tau_c)

    def mean_to_original(self, rho_bar: "ArrayLike") -> "NDArray[np.float64]":
        return np.asarray(rho_bar) * self.s_scale

    def boundary_to_original(self, rho_0: "ArrayLike") -> "NDArray[np.float64]":
        return np.asarray(rho_0) / self.s_scale


def normalize_parameters(p: ModelParams) -> "tuple[ModelParams, RescaleMap]":
    """Equivalent parameters with τ_c = 1 and σ = 1.

    Φ̃ = Φ/√σ and the input is re-timed by τ_c. Since ρ̄ = √σ·ρ̃̄, the kernel becomes W̃ = √σ·W so that the
    argument W∗ρ̄ + B of Φ is unchanged.
    """
    c = float(np.sqrt(p.sigma))
    scale = RescaleMap(p.sigma, p.tau_c)
    if p.is_normalized:
        return p, scale
    return ModelParams.create(p.phi.scaled(1.0 / c), p.W.scaled(c), p.B.time_scaled(p.tau_c)), scale
