"""Conservative finite-volume integrator for the density ρ(x, s, t).

Fluxes live on cell faces, the s = 0 face and the truncation wall carry zero flux, and each step solves one
block-tridiagonal system (one block per x) with the drift Φ_ρ̄ frozen or Picard-iterated.
"""
import logging
import typing

import numpy as np
from scipy.linalg import LinAlgError, solve_banded
from tqdm import tqdm

from ..core import as_dataclass
from ..errors import DivergenceError, DomainError
from ..model.density import DensityField, drift_field, mean_activity

if typing.TYPE_CHECKING:
    from typing import Callable, Literal

    from numpy.typing import NDArray

    from ..model.params import ModelParams

    Scheme = Literal["chang-cooper", "upwind-implicit"]
    Coupling = Literal["frozen", "iterated"]
    TestFunction = Literal["one", "s", "s2", "smoothed-linear"]

__all__ = [
    "SolverConfig",
    "FluxField",
    "DirectRun",
    "bernoulli",
    "flux",
    "rhs",
    "step",
    "simulate",
    "boundary_trace",
    "weak_moment_residual",
    "positivity_dt",
    "universal_boundary_bound",
    "second_moment_bound",
    "nonpositive_mean_bound",
]

logger = logging.getLogger(__name__)

WALL_MASS_TOL = 1e-9


@as_dataclass(readonly=True)
class SolverConfig:
    dt: float
    t_end: float
    scheme: str = "chang-cooper"
    coupling: str = "frozen"
    max_iter: int = 50
    tol: float = 1e-12
    snapshot_stride: int = 1

    @staticmethod
    def create(
        dt: float,
        t_end: float,
        *,
        scheme: "Scheme" = "chang-cooper",
        coupling: "Coupling" = "frozen",
        max_iter: int = 50,
        tol: float = 1e-12,
        snapshot_stride: int = 1,
    ) -> "SolverConfig":
        if not dt > 0:
            raise DomainError(f"Time step must be positive, got `{dt}`")
        if not tol > 0:
            raise DomainError(f"Picard tolerance must be positive, got `{tol}`")
        if t_end < 0:
            raise DomainError(f"Final time must be nonnegative, got `{t_end}`")
        if scheme not in ("chang-cooper", "upwind-implicit"):
            raise DomainError(f"Unknown scheme `{scheme}`")
        if coupling not in ("frozen", "iterated"):
            raise DomainError(f"Unknown coupling `{coupling}`")
        if snapshot_stride < 1:
            raise DomainError(f"Snapshot stride must be at least 1, got `{snapshot_stride}`")
        return SolverConfig(float(dt), float(t_end), scheme, coupling, int(max_iter), float(tol), int(snapshot_stride))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@as_dataclass(readonly=True)
class FluxField:
    """F[x, j+½] = (Φ_ρ̄ − s)ρ − σ∂_sρ on all n_s + 1 faces; both end faces are exactly zero."""

    F: "NDArray[np.float64]"
    t: float

    @property
    def interior(self) -> "NDArray[np.float64]":
        return self.F[:, 1:-1]


def bernoulli(w: "NDArray[np.float64]") -> "NDArray[np.float64]":
    """B(w) = w/(eʷ − 1), B(0) = 1."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = w / np.expm1(w)
    return np.where(np.abs(w) < 1e-10, 1.0 - 0.5 * w, out)


def _face_weights(
    phi: "NDArray[np.float64]", rho: DensityField, sigma: float, scheme: str
) -> "tuple[NDArray[np.float64], NDArray[np.float64]]":
    """(Cm, Cp) on interior faces with F = (σ/Δs)(Cm·ρ_j − Cp·ρ_{j+1})."""
    ds = rho.activity.ds
    w = (phi[:, None] - rho.activity.faces[None, 1:-1]) * ds / sigma
    if scheme == "chang-cooper":
        return bernoulli(-w), bernoulli(w)
    return 1.0 + np.maximum(w, 0.0), 1.0 + np.maximum(-w, 0.0)


def _flux_with(phi: "NDArray[np.float64]", rho: DensityField, p: "ModelParams", scheme: str) -> "NDArray[np.float64]":
    cm, cp = _face_weights(phi, rho, p.sigma, scheme)
    F = np.zeros((rho.spatial.n_points, rho.activity.n_s + 1))
    F[:, 1:-1] = p.sigma / rho.activity.ds * (cm * rho.values[:, :-1] - cp * rho.values[:, 1:])
    return F


def flux(rho: DensityField, p: "ModelParams", t: "float | None" = None, scheme: str = "chang-cooper") -> FluxField:
    t = rho.t if t is None else t
    return FluxField(_flux_with(drift_field(rho, p, t), rho, p, scheme), t)


def rhs(rho: DensityField, p: "ModelParams", t: "float | None" = None, scheme: str = "chang-cooper") -> "NDArray[np.float64]":
    """Semi-discrete ∂ρ/∂t = −(F_{j+½} − F_{j−½})/(τ_c·Δs)."""
    F = flux(rho, p, t, scheme).F
    return -(F[:, 1:] - F[:, :-1]) / (p.tau_c * rho.activity.ds)


def positivity_dt(rho: DensityField, p: "ModelParams") -> float:
    """Δs²/(2σ + Δs·max|Φ_ρ̄ − s|), the explicit-part positivity bound."""
    ds = rho.activity.ds
    a = np.abs(drift_field(rho, p)[:, None] - rho.activity.faces[None, :])
    return float(ds**2 / (2.0 * p.sigma + ds * a.max()))


def _implicit_solve(
    values: "NDArray[np.float64]", phi: "NDArray[np.float64]", rho: DensityField, p: "ModelParams", dt: float, scheme: str
) -> "NDArray[np.float64]":
    n_points, n_s = values.shape
    cm, cp = _face_weights(phi, rho, p.sigma, scheme)
    r = dt * p.sigma / (p.tau_c * rho.activity.ds**2)

    upper = np.zeros((n_points, n_s))
    upper[:, :-1] = -r * cp
    lower = np.zeros((n_points, n_s))
    lower[:, 1:] = -r * cm
    diag = np.ones((n_points, n_s))
    diag[:, :-1] += r * cm
    diag[:, 1:] += r * cp

    ab = np.zeros((3, n_points * n_s))
    ab[0, 1:] = upper.ravel()[:-1]
    ab[1] = diag.ravel()
    ab[2, :-1] = lower.ravel()[1:]
    try:
        out = solve_banded((1, 1), ab, values.ravel(), check_finite=False)
    except (LinAlgError, ValueError) as e:
        raise DivergenceError(f"Tridiagonal solve failed at t=`{rho.t}`: {e}", {"t": rho.t}) from e
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"Non-finite density after step at t=`{rho.t}`", {"t": rho.t})
    return out.reshape(n_points, n_s)


def step(
    rho: DensityField, p: "ModelParams", cfg: SolverConfig, *, drift: "NDArray[np.float64] | None" = None
) -> DensityField:
    """One implicit step of length cfg.dt.

    `drift` overrides Φ_ρ̄ (frozen coupling only); the four-population model uses it to inject its coupled drift.
    """
    t_new = rho.t + cfg.dt
    phi = drift_field(rho, p, rho.t) if drift is None else drift
    new = _implicit_solve(rho.values, phi, rho, p, cfg.dt, cfg.scheme)
    if cfg.coupling == "iterated" and drift is None:
        for it in range(cfg.max_iter):
            phi = drift_field(rho.with_values(new, t_new), p, t_new)
            nxt = _implicit_solve(rho.values, phi, rho, p, cfg.dt, cfg.scheme)
            change = float(np.max(np.abs(nxt - new)))
            new = nxt
            if change < cfg.tol:
                break
        else:
            logger.warning(f"Picard coupling did not reach tol {cfg.tol} at t={t_new:.6g}, last change {change:.3e}")
    return rho.with_values(new, t_new)


@as_dataclass
class DirectRun:
    """Result of `simulate`: snapshots every `snapshot_stride` steps plus per-step traces."""

    params: "ModelParams"
    config: SolverConfig
    snapshots: "list[DensityField]"
    step_times: "NDArray[np.float64]"
    means: "NDArray[np.float64]"
    boundary: "NDArray[np.float64]"
    drifts: "NDArray[np.float64]"
    wall_mass: float
    mass_defect: float

    @property
    def times(self) -> "NDArray[np.float64]":
        return np.array([f.t for f in self.snapshots])

    @property
    def final(self) -> DensityField:
        return self.snapshots[-1]


def simulate(
    rho0: DensityField,
    p: "ModelParams",
    cfg: SolverConfig,
    *,
    with_tqdm: bool = False,
    drift_fn: "Callable[[DensityField, float], NDArray[np.float64]] | None" = None,
) -> DirectRun:
    """Integrate from `rho0` to cfg.t_end."""
    n_steps = cfg.n_steps
    logger.info(
        f"Direct run: {n_steps} steps of dt={cfg.dt:g}, grid {rho0.spatial.shape}×{rho0.activity.n_s}, "
        f"scheme {cfg.scheme}, coupling {cfg.coupling}"
    )
    rho = rho0
    snapshots = [rho0]
    means = np.empty((n_steps + 1, rho0.spatial.n_points))
    boundary = np.empty_like(means)
    drifts = np.empty_like(means)
    wall = 0.0

    def record(k: int, field: DensityField) -> None:
        nonlocal wall
        means[k] = mean_activity(field)
        boundary[k] = field.boundary_value()
        drifts[k] = drift_field(field, p) if drift_fn is None else drift_fn(field, field.t)
        wall = max(wall, float(np.max(field.values[:, -1])) * field.activity.ds * field.spatial.volume)

    record(0, rho0)
    tq = tqdm(total=n_steps, desc="simulate", unit=" steps", disable=not with_tqdm)
    try:
        for k in range(1, n_steps + 1):
            rho = step(rho, p, cfg, drift=None if drift_fn is None else drifts[k - 1])
            # pin the clock to the grid so snapshot times do not drift
            rho = rho.with_values(rho.values, k * cfg.dt)
            record(k, rho)
            if k % cfg.snapshot_stride == 0 or k == n_steps:
                snapshots.append(rho)
            tq.update()
    finally:
        tq.close()

    if wall > WALL_MASS_TOL:
        logger.warning(f"Mass at the truncation wall reached {wall:.3e}; raise s_max")
    defect = max(f.mass_defect() for f in snapshots)
    logger.info(f"Direct run finished at t={rho.t:g}, max mass defect {defect:.3e}")
    return DirectRun(
        p, cfg, snapshots, np.arange(n_steps + 1) * cfg.dt, means, boundary, drifts, wall, defect
    )


def boundary_trace(run: DirectRun) -> "tuple[NDArray[np.float64], NDArray[np.float64]]":
    """(times, ρ(x, 0, t)) with the face value extrapolated from the first two cells."""
    return run.step_times, run.boundary


def _test_function(
    h: "TestFunction",
) -> "tuple[Callable[[NDArray[np.float64]], NDArray[np.float64]], ...]":
    if h == "one":
        return (np.ones_like, np.zeros_like, np.zeros_like)
    if h == "s":
        return (lambda s: s, np.ones_like, np.zeros_like)
    if h == "s2":
        return (lambda s: s**2, lambda s: 2.0 * s, lambda s: np.full_like(s, 2.0))
    if h == "smoothed-linear":
        # C², increasing, h(0) = h′(0) = 0 and h(s) = s for s ≥ 1
        return (
            lambda s: np.where(s < 1.0, 3 * s**2 - 3 * s**3 + s**4, s),
            lambda s: np.where(s < 1.0, 6 * s - 9 * s**2 + 4 * s**3, 1.0),
            lambda s: np.where(s < 1.0, 6 - 18 * s + 12 * s**2, 0.0),
        )
    raise DomainError(f"Unknown test function `{h}`")


def weak_moment_residual(
    run: DirectRun, h: "TestFunction" = "s"
) -> "tuple[NDArray[np.float64], NDArray[np.float64]]":
    """τ_c·d/dt∫hρ − ∫[(Φ_ρ̄ − s)h′ + σh″]ρ − σh′(0)ρ(x, 0, t) at interior snapshot times.

    Returns (times, residual[time, x]); the time derivative is a centred difference over snapshots.
    """
    p = run.params
    f, df, d2f = _test_function(h)
    snaps = run.snapshots
    if len(snaps) < 3:
        raise DomainError("Need at least three snapshots for a centred difference")
    s = snaps[0].activity.centers
    ds = snaps[0].activity.ds
    times = run.times
    moments = np.stack([r.values @ f(s) * ds for r in snaps])
    index = np.searchsorted(run.step_times, times - 1e-12 * max(1.0, times[-1]))
    residual = np.empty((len(snaps) - 2, snaps[0].spatial.n_points))
    for k in range(1, len(snaps) - 1):
        rho = snaps[k]
        phi = run.drifts[index[k]]
        weight = (phi[:, None] - s[None, :]) * df(s)[None, :] + p.sigma * d2f(s)[None, :]
        forcing = (weight * rho.values).sum(axis=1) * ds + p.sigma * df(np.zeros(1))[0] * rho.boundary_value()
        dm = (moments[k + 1] - moments[k - 1]) / (times[k + 1] - times[k - 1])
        residual[k - 1] = p.tau_c * dm - forcing
    return times[1:-1], residual


def universal_boundary_bound(times: "NDArray[np.float64]", p: "ModelParams") -> "NDArray[np.float64]":
    """(1/L^d)·√(2/(πσ))/√(1 − e^{−2t/τ_c}), valid for Φ ≥ 0; +∞ at t = 0."""
    with np.errstate(divide="ignore"):
        return p.mass * np.sqrt(2.0 / (np.pi * p.sigma)) / np.sqrt(-np.expm1(-2.0 * np.asarray(times) / p.tau_c))


def second_moment_bound(
    times: "NDArray[np.float64]", p: "ModelParams", m2_0: "NDArray[np.float64]"
) -> "NDArray[np.float64]":
    """(σ/L^d)(1 − e^{−2t/τ_c}) + M₂(0)e^{−2t/τ_c} per time and x, valid for Φ ≤ 0."""
    decay = np.exp(-2.0 * np.asarray(times) / p.tau_c)[:, None]
    return p.sigma * p.mass * (1.0 - decay) + np.asarray(m2_0)[None, :] * decay


def nonpositive_mean_bound(times: "NDArray[np.float64]", p: "ModelParams", m2_0_sup: float) -> "NDArray[np.float64]":
    """(1/L^d)(1 + σ − σe^{−2t/τ_c}) + e^{−2t/τ_c}·sup_x M₂(x, 0), valid for Φ ≤ 0."""
    decay = np.exp(-2.0 * np.asarray(times) / p.tau_c)
    return p.mass * (1.0 + p.sigma - p.sigma * decay) + decay * m2_0_sup
