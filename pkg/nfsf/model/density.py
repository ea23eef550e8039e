import typing

import numpy as np

from ..core import as_dataclass
from ..errors import DomainError
from ..numerics import periodic_convolve

if typing.TYPE_CHECKING:
    from typing import Callable

    from numpy.typing import ArrayLike, NDArray

    from .grids import ActivityGrid, SpatialGrid
    from .params import ModelParams

__all__ = ["DensityField", "CompatibleInitialCondition", "mean_activity", "drift_field"]


@as_dataclass(readonly=True)
class DensityField:
    """ρ(x, s, t) as cell averages, `values.shape == (n_points, n_s)` with x flattened in C order."""

    spatial: "SpatialGrid"
    activity: "ActivityGrid"
    values: "NDArray[np.float64]"
    t: float = 0.0

    @staticmethod
    def from_values(
        spatial: "SpatialGrid", activity: "ActivityGrid", values: "ArrayLike", t: float = 0.0
    ) -> "DensityField":
        v = np.array(values, dtype=np.float64)
        if v.ndim == 1:
            v = np.broadcast_to(v, (spatial.n_points, activity.n_s)).copy()
        v = v.reshape(spatial.n_points, -1)
        if v.shape[1] != activity.n_s:
            raise DomainError(f"Density of shape `{v.shape}` does not match `{(spatial.n_points, activity.n_s)}`")
        v.setflags(write=False)
        return DensityField(spatial, activity, v, float(t))

    @staticmethod
    def from_profile(
        spatial: "SpatialGrid",
        activity: "ActivityGrid",
        profile: "Callable[[NDArray[np.float64]], ArrayLike]",
        t: float = 0.0,
    ) -> "DensityField":
        """Sample `profile(s)` at cell centres and rescale every x to mass 1/L^d.

        `profile` may return shape (n_s,) or (n_points, n_s).
        """
        v = np.broadcast_to(np.asarray(profile(activity.centers), dtype=np.float64), (spatial.n_points, activity.n_s))
        mass = v.sum(axis=1, keepdims=True) * activity.ds
        if np.any(mass <= 0):
            raise DomainError("Profile has zero mass on some x")
        return DensityField.from_values(spatial, activity, v / (mass * spatial.volume), t)

    @staticmethod
    def half_gaussian(
        spatial: "SpatialGrid", activity: "ActivityGrid", sigma: float, center: "ArrayLike" = 0.0
    ) -> "DensityField":
        """Discrete exp(−(s − center)²/(2σ)), normalised; `center` may vary over x."""
        c = np.reshape(np.asarray(center, dtype=np.float64), (-1, 1))
        return DensityField.from_profile(spatial, activity, lambda s: np.exp(-((s[None, :] - c) ** 2) / (2.0 * sigma)))

    def with_values(self, values: "ArrayLike", t: "float | None" = None) -> "DensityField":
        return DensityField.from_values(self.spatial, self.activity, values, self.t if t is None else t)

    def with_grids(
        self, spatial: "SpatialGrid", activity: "ActivityGrid", values: "ArrayLike", t: float
    ) -> "DensityField":
        return DensityField.from_values(spatial, activity, values, t)

    @property
    def mass_per_x(self) -> "NDArray[np.float64]":
        return self.values.sum(axis=1) * self.activity.ds

    @property
    def total_mass(self) -> float:
        return float(self.mass_per_x.sum() * self.spatial.cell_volume)

    def mass_defect(self) -> float:
        """sup_x |L^d·mass(x) − 1|."""
        return float(np.max(np.abs(self.mass_per_x * self.spatial.volume - 1.0)))

    def mean_activity(self) -> "NDArray[np.float64]":
        return mean_activity(self)

    def moment(self, h: "Callable[[NDArray[np.float64]], ArrayLike]") -> "NDArray[np.float64]":
        """∫h(s)ρ(x, s) ds per x."""
        return self.values @ np.asarray(h(self.activity.centers), dtype=np.float64) * self.activity.ds

    def boundary_value(self) -> "NDArray[np.float64]":
        """ρ(x, 0) extrapolated linearly from the first two cells."""
        return 1.5 * self.values[:, 0] - 0.5 * self.values[:, 1]

    def on_grid(self) -> "NDArray[np.float64]":
        return self.values.reshape(self.spatial.shape + (self.activity.n_s,))

    def check(self, *, mass_tol: float = 1e-10, negative_tol: float = 1e-14) -> None:
        lowest = float(self.values.min())
        if lowest < -negative_tol:
            raise DomainError(f"Density is negative, min `{lowest}`")
        defect = self.mass_defect()
        if defect > mass_tol:
            raise DomainError(f"Per-x mass deviates from 1/L^d by `{defect}` (relative)")

    def l1_distance(self, other: "DensityField") -> float:
        """‖ρ − ρ′‖_{L¹(x, s)}."""
        if not (self.spatial.same_as(other.spatial) and self.activity.same_as(other.activity)):
            raise DomainError("Fields live on different grids")
        return float(np.abs(self.values - other.values).sum() * self.activity.ds * self.spatial.cell_volume)


def mean_activity(rho: DensityField) -> "NDArray[np.float64]":
    """ρ̄[x] = Σ_j s_j·ρ[x, j]·Δs, flattened over x."""
    return rho.values @ rho.activity.centers * rho.activity.ds


def drift_field(rho: DensityField, p: "ModelParams", t: "float | None" = None) -> "NDArray[np.float64]":
    """Φ_ρ̄[x] = Φ((W∗ρ̄)[x] + B(t))."""
    t = rho.t if t is None else t
    return p.phi(periodic_convolve(p.W, mean_activity(rho)) + p.B.value(t))


@as_dataclass(readonly=True)
class CompatibleInitialCondition:
    """Initial density with a fast-decay certificate on the upper quarter of the activity grid."""

    field: DensityField
    tail_rho: float
    tail_slope: float
    threshold: float

    @staticmethod
    def certify(rho: DensityField, *, threshold: float = 1e-8, mass_tol: float = 1e-10) -> "CompatibleInitialCondition":
        rho.check(mass_tol=mass_tol)
        s = rho.activity.centers
        tail = s >= 0.75 * rho.activity.s_max
        s4 = s[tail] ** 4
        tail_rho = float(np.max(np.abs(rho.values[:, tail]) * s4))
        slope = np.gradient(rho.values, rho.activity.ds, axis=1)
        tail_slope = float(np.max(np.abs(slope[:, tail]) * s4))
        if max(tail_rho, tail_slope) > threshold:
            raise DomainError(
                f"Initial density does not decay fast enough: tail ρ·s⁴ `{tail_rho:.3e}`, "
                f"∂ρ·s⁴ `{tail_slope:.3e}` above `{threshold}`"
            )
        return CompatibleInitialCondition(rho, tail_rho, tail_slope, threshold)
