"""Stationary states: ρ∞(x, s) = exp(−(s − Φ₀(x))²/(2σ))/Z_ρ with Φ₀ = Φ(W∗ρ̄∞ + B)."""
import logging
import typing

import numpy as np
from scipy import optimize, special

from .core import as_dataclass
from .errors import ConvergenceError, DomainError
from .model.density import DensityField, drift_field, mean_activity
from .numerics import periodic_convolve
from .solvers.direct import rhs

if typing.TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    from .model.grids import ActivityGrid
    from .model.params import ModelParams

__all__ = [
    "EquilibriumState",
    "g_function",
    "truncated_gaussian_stats",
    "homogeneous_branch",
    "state_from_field",
    "stationarity_residual",
]

logger = logging.getLogger(__name__)

SQRT_PI = float(np.sqrt(np.pi))


def _ratio(eta: "NDArray[np.float64]") -> "NDArray[np.float64]":
    """e^{−η²}/(1 + erf η), evaluated as 1/erfcx(−η)."""
    return 1.0 / special.erfcx(-eta)


def g_function(eta: "ArrayLike") -> "NDArray[np.float64]":
    """g(η) = 1 − (2/√π)·R·(R/√π + η) with R = e^{−η²}/(1 + erf η); values in (0, 1), with g(0) = 1 − 2/π."""
    e = np.asarray(eta, dtype=np.float64)
    r = _ratio(e)
    return 1.0 - (2.0 / SQRT_PI) * r * (r / SQRT_PI + e)


def truncated_gaussian_stats(
    phi0: "ArrayLike", sigma: float, L: float, d: int = 1
) -> "tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]":
    """(Z_ρ, ρ̄∞, M∞) of the half-line profile centred at Φ₀, per-x mass 1/L^d."""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got `{sigma}`")
    p0 = np.asarray(phi0, dtype=np.float64)
    vol = L**d
    eta = p0 / np.sqrt(2.0 * sigma)
    z = vol * np.sqrt(np.pi * sigma / 2.0) * special.erfc(-eta)
    rho_bar = (p0 + np.sqrt(2.0 * sigma / np.pi) * _ratio(eta)) / vol
    m_inf = sigma / vol * g_function(eta)
    return z, rho_bar, m_inf


@as_dataclass(readonly=True)
class EquilibriumState:
    profile: DensityField
    phi0: "NDArray[np.float64]"
    phi0_prime: "NDArray[np.float64]"
    rho_bar: "NDArray[np.float64]"
    M_inf: "NDArray[np.float64]"
    Z_rho: "NDArray[np.float64]"
    sigma: float
    residual: float
    roots: "tuple[float, ...]" = ()

    @property
    def homogeneous(self) -> bool:
        return bool(np.ptp(self.phi0) <= 1e-12 * (1.0 + np.max(np.abs(self.phi0))))

    @property
    def M_sup(self) -> float:
        return float(np.max(self.M_inf))

    def scalars(self) -> "dict[str, float]":
        return {
            "Phi0": float(np.mean(self.phi0)),
            "Phi0_prime": float(np.mean(self.phi0_prime)),
            "rho_bar_inf": float(np.mean(self.rho_bar)),
            "M_inf": float(np.mean(self.M_inf)),
            "Z_rho": float(np.mean(self.Z_rho)),
            "residual": self.residual,
        }


def _build_state(
    p: "ModelParams", activity: "ActivityGrid", phi0: "NDArray[np.float64]", roots: "tuple[float, ...]" = ()
) -> EquilibriumState:
    z, rho_bar, m_inf = truncated_gaussian_stats(phi0, p.sigma, p.L, p.d)
    profile = DensityField.half_gaussian(p.grid, activity, p.sigma, center=phi0)
    arg = periodic_convolve(p.W, rho_bar) + p.B.value(0.0)
    residual = float(np.max(np.abs(phi0 - p.phi(arg))))
    return EquilibriumState(profile, phi0, p.phi.derivative(arg), rho_bar, m_inf, z, p.sigma, residual, roots)


def homogeneous_branch(
    p: "ModelParams", activity: "ActivityGrid", *, tol: float = 1e-12, max_iter: int = 10_000, n_scan: int = 4001
) -> EquilibriumState:
    """Spatially homogeneous stationary state from the scalar fixed point Φ₀ = Φ(W₀·ρ̄∞(Φ₀) + B).

    All sign changes of the residual in the expanded bracket are located; the smallest root is returned and the
    others are listed in `roots`.
    """
    if not p.B.is_constant:
        raise DomainError("Homogeneous branch needs a constant input")
    w0, b = p.W.W0, float(p.B.value(0.0))

    def residual(phi0: float) -> float:
        _, rho_bar, _ = truncated_gaussian_stats(phi0, p.sigma, p.L, p.d)
        return float(phi0 - p.phi(w0 * rho_bar + b))

    if residual(0.0) == 0.0:
        logger.info("Homogeneous branch: Φ₀ = 0 is an exact fixed point")
        return _build_state(p, activity, np.zeros(p.grid.n_points), (0.0,))

    lo, hi = -1.0, 1.0
    for _ in range(64):
        if residual(lo) < 0.0 < residual(hi):
            break
        lo, hi = 2.0 * lo, 2.0 * hi
    # further roots may lie beyond the first sign change
    lo, hi = 16.0 * lo, 16.0 * hi
    grid = np.union1d(np.linspace(lo, hi, n_scan), [0.0])
    values = np.array([residual(g) for g in grid])
    roots = [float(g) for g, r in zip(grid, values) if r == 0.0]
    for a, c, ra, rc in zip(grid[:-1], grid[1:], values[:-1], values[1:]):
        if ra * rc < 0.0:
            try:
                root, info = optimize.brentq(residual, a, c, xtol=1e-15, rtol=4e-16, maxiter=max_iter, full_output=True)
            except RuntimeError as e:
                raise ConvergenceError(f"Fixed point did not converge: {e}", (float(a), float(c))) from e
            roots.append(float(root))
    if not roots:
        raise ConvergenceError("No fixed point of the homogeneous equation found", (float(lo), float(hi)))
    roots = sorted(set(roots))
    if len(roots) > 1:
        logger.warning(f"Homogeneous branch has {len(roots)} roots {roots}; using the smallest")
    phi0 = roots[0]
    if abs(residual(phi0)) > tol:
        raise ConvergenceError(f"Fixed-point residual `{residual(phi0):.3e}` above `{tol}`", (lo, hi))
    logger.info(f"Homogeneous branch: Φ₀ = {phi0:.15g}")
    return _build_state(p, activity, np.full(p.grid.n_points, phi0), tuple(roots))


def state_from_field(rho: DensityField, p: "ModelParams") -> EquilibriumState:
    """Stationary-state scalars for a (possibly x-dependent) profile, e.g. the end of a long direct run."""
    phi0 = drift_field(rho, p)
    z, rho_bar, m_inf = truncated_gaussian_stats(phi0, p.sigma, p.L, p.d)
    arg = periodic_convolve(p.W, mean_activity(rho)) + p.B.value(rho.t)
    return EquilibriumState(
        rho, phi0, p.phi.derivative(arg), rho_bar, m_inf, z, p.sigma, stationarity_residual(rho, p), ()
    )


def stationarity_residual(state: "EquilibriumState | DensityField", p: "ModelParams", *, parts: bool = False) -> "typing.Any":
    """sup-norm of σ∂_sρ∞ + (s − Φ(W∗ρ̄∞ + B))ρ∞ on interior faces, and of the direct-solver right-hand side.

    Returns the larger of the two, or both when `parts` is set.
    """
    rho = state.profile if isinstance(state, EquilibriumState) else state
    ds = rho.activity.ds
    phi = drift_field(rho, p)
    s_f = rho.activity.faces[1:-1]
    v = rho.values
    relation = p.sigma * np.diff(v, axis=1) / ds + (s_f[None, :] - phi[:, None]) * 0.5 * (v[:, 1:] + v[:, :-1])
    first = float(np.max(np.abs(relation)))
    second = float(np.max(np.abs(rhs(rho, p))))
    return (first, second) if parts else max(first, second)
