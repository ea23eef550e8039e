import typing

import numpy as np

from ..core import as_dataclass
from ..errors import DomainError

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray

__all__ = ["SpatialGrid", "ActivityGrid"]


@as_dataclass(readonly=True)
class SpatialGrid:
    """Uniform periodic grid on the torus [0, L)^d with `n_x` points per dimension."""

    d: int
    L: float
    n_x: int

    @staticmethod
    def create(d: int, L: float, n_x: int) -> "SpatialGrid":
        if d not in (1, 2):
            raise DomainError(f"Spatial dimension must be 1 or 2, got `{d}`")
        if not L > 0:
            raise DomainError(f"Torus side must be positive, got `{L}`")
        if n_x < 1:
            raise DomainError(f"Need at least one point per dimension, got `{n_x}`")
        return SpatialGrid(int(d), float(L), int(n_x))

    @property
    def dx(self) -> float:
        return self.L / self.n_x

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    @property
    def shape(self) -> "tuple[int, ...]":
        return (self.n_x,) * self.d

    @property
    def n_points(self) -> int:
        return self.n_x**self.d

    @property
    def volume(self) -> float:
        return self.L**self.d

    def axis(self) -> "NDArray[np.float64]":
        return np.arange(self.n_x) * self.dx

    def coords(self) -> "tuple[NDArray[np.float64], ...]":
        """Meshgrid coordinates, one array of `shape` per dimension."""
        return tuple(np.meshgrid(*([self.axis()] * self.d), indexing="ij"))

    def indices(self) -> "NDArray[np.int64]":
        """Integer index of every flattened point, shape (n_points, d)."""
        return np.stack([i.ravel() for i in np.indices(self.shape)], axis=1)

    def same_as(self, other: "SpatialGrid") -> bool:
        return self.d == other.d and self.n_x == other.n_x and abs(self.L - other.L) <= 1e-14 * self.L


@as_dataclass(readonly=True)
class ActivityGrid:
    """Cell-centred grid on [0, s_max] with a no-flux wall at s_max."""

    s_max: float
    n_s: int

    @staticmethod
    def create(s_max: float, n_s: int) -> "ActivityGrid":
        if n_s < 32:
            raise DomainError(f"Activity grid needs at least 32 cells, got `{n_s}`")
        if not s_max > 0:
            raise DomainError(f"Truncation level must be positive, got `{s_max}`")
        return ActivityGrid(float(s_max), int(n_s))

    @staticmethod
    def covering(phi_max: float, sigma: float, *, ds: "float | None" = None, n_s: "int | None" = None) -> "ActivityGrid":
        """Grid with s_max = Φ_max + 10√σ and either a given spacing or a given cell count."""
        s_max = max(phi_max, 0.0) + 10.0 * np.sqrt(sigma)
        if n_s is None:
            n_s = max(32, int(np.ceil(s_max / (ds if ds is not None else np.sqrt(sigma) / 50.0))))
            if ds is not None:
                s_max = n_s * ds
        return ActivityGrid.create(s_max, n_s)

    @property
    def ds(self) -> float:
        return self.s_max / self.n_s

    @property
    def centers(self) -> "NDArray[np.float64]":
        return (np.arange(self.n_s) + 0.5) * self.ds

    @property
    def faces(self) -> "NDArray[np.float64]":
        return np.arange(self.n_s + 1) * self.ds

    def covers(self, phi_max: float, sigma: float) -> bool:
        return self.s_max >= phi_max + 10.0 * np.sqrt(sigma) - 1e-12

    def same_as(self, other: "ActivityGrid") -> bool:
        return self.n_s == other.n_s and abs(self.s_max - other.s_max) <= 1e-14 * self.s_max
