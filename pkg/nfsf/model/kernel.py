import typing

import numpy as np

from ..core import as_dataclass
from ..errors import DomainError
from .grids import SpatialGrid

if typing.TYPE_CHECKING:
    from typing import Sequence

    from numpy.typing import ArrayLike, NDArray

__all__ = ["ConnectivityKernel"]


def _periodic_distance(grid: SpatialGrid) -> "NDArray[np.float64]":
    """Minimal-image distance |x| on the torus for every grid point."""
    r2 = np.zeros(grid.shape)
    for c in grid.coords():
        c = np.minimum(c, grid.L - c)
        r2 = r2 + c**2
    return np.sqrt(r2)


@as_dataclass(readonly=True)
class ConnectivityKernel:
    """Periodic connectivity W sampled on a SpatialGrid, `samples.shape == grid.shape`."""

    grid: SpatialGrid
    samples: "NDArray[np.float64]"
    tag: str = "tabulated"

    @staticmethod
    def from_samples(grid: SpatialGrid, samples: "ArrayLike", tag: str = "tabulated") -> "ConnectivityKernel":
        w = np.array(samples, dtype=np.float64)
        if w.shape != grid.shape:
            raise DomainError(f"Kernel samples of shape `{w.shape}` do not match grid `{grid.shape}`")
        w.setflags(write=False)
        return ConnectivityKernel(grid, w, tag)

    @staticmethod
    def constant(grid: SpatialGrid, w: float) -> "ConnectivityKernel":
        return ConnectivityKernel.from_samples(grid, np.full(grid.shape, float(w)), "constant")

    @staticmethod
    def cosine(grid: SpatialGrid, amplitude: float, *, mode: int = 1, offset: float = 0.0) -> "ConnectivityKernel":
        """offset + amplitude·Σ_i cos(2π·mode·x_i/L)."""
        w = np.full(grid.shape, float(offset))
        for c in grid.coords():
            w = w + amplitude * np.cos(2.0 * np.pi * mode * c / grid.L)
        return ConnectivityKernel.from_samples(grid, w, "cosine")

    @staticmethod
    def difference_of_gaussians(
        grid: SpatialGrid, a_exc: float, s_exc: float, a_inh: float, s_inh: float
    ) -> "ConnectivityKernel":
        """a_exc·exp(−|x|²/(2s_exc²)) − a_inh·exp(−|x|²/(2s_inh²)), periodicised by minimal image."""
        r = _periodic_distance(grid)
        w = a_exc * np.exp(-(r**2) / (2.0 * s_exc**2)) - a_inh * np.exp(-(r**2) / (2.0 * s_inh**2))
        return ConnectivityKernel.from_samples(grid, w, "difference-of-gaussians")

    @property
    def W0(self) -> float:
        return float(np.sum(self.samples) * self.grid.cell_volume)

    @property
    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.samples)) * self.grid.cell_volume)

    @property
    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.samples**2) * self.grid.cell_volume))

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.samples)))

    @property
    def grad_sup(self) -> float:
        """sup |∇W| from periodic central differences."""
        g2 = np.zeros(self.grid.shape)
        for axis in range(self.grid.d):
            g = (np.roll(self.samples, -1, axis=axis) - np.roll(self.samples, 1, axis=axis)) / (2.0 * self.grid.dx)
            g2 = g2 + g**2
        return float(np.sqrt(np.max(g2)))

    def reflected(self) -> "NDArray[np.float64]":
        """Samples of W(−x) on the same grid."""
        w = self.samples
        for axis in range(self.grid.d):
            w = np.roll(np.flip(w, axis=axis), 1, axis=axis)
        return w

    @property
    def componentwise_symmetric(self) -> bool:
        for axis in range(self.grid.d):
            r = np.roll(np.flip(self.samples, axis=axis), 1, axis=axis)
            if np.max(np.abs(r - self.samples)) > 1e-12:
                return False
        return True

    @property
    def is_nonpositive(self) -> bool:
        return bool(np.all(self.samples <= 0.0))

    def shifted(self, shift: "Sequence[int]") -> "ConnectivityKernel":
        """W(x − r) for a grid-snapped shift r given in grid steps."""
        if len(shift) != self.grid.d:
            raise DomainError(f"Shift `{tuple(shift)}` does not match dimension `{self.grid.d}`")
        return ConnectivityKernel.from_samples(
            self.grid, np.roll(self.samples, tuple(int(k) for k in shift), axis=tuple(range(self.grid.d))), self.tag
        )

    def scaled(self, c: float) -> "ConnectivityKernel":
        return ConnectivityKernel.from_samples(self.grid, c * self.samples, self.tag)
