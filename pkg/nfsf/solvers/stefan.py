"""Free-boundary backend.

In normalized units (τ_c = σ = 1) the selfsimilar change of variables y = eᵗs, τ = ½(e²ᵗ − 1) and the shift
z = y + γ turn the density equation into a heat equation on the moving half-line z > γ(x, τ). Green's identity
gives a closed Volterra system for the boundary value v, the boundary position γ and the first moment ū, which is
solved node by node on a uniform τ-mesh by windowed Picard iteration.
"""
import contextlib
import logging
import math
import typing

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special
from tqdm import tqdm

from ..core import as_dataclass, cached
from ..errors import BlowUpError, DivergenceError, DomainError
from ..model.density import DensityField
from ..model.params import normalize_parameters
from ..numerics import periodic_convolve

if typing.TYPE_CHECKING:
    from typing import Callable

    from numpy.typing import ArrayLike, NDArray

    from ..model.params import ModelParams, RescaleMap

    PsiFn = Callable[[NDArray[np.float64], NDArray[np.float64], float], NDArray[np.float64]]

__all__ = [
    "TauMesh",
    "StefanConfig",
    "InitialData",
    "BoundaryTriple",
    "SelfsimilarField",
    "StefanRun",
    "alpha",
    "tau_of_t",
    "t_of_tau",
    "psi_function",
    "to_selfsimilar",
    "integrate_gamma",
    "picard_window",
    "reconstruct_u",
    "to_original",
    "march",
    "initial_data",
    "selfsimilar_to_density",
    "run_stefan",
]

logger = logging.getLogger(__name__)

SQRT_PI = math.sqrt(math.pi)

prange = range


def alpha(tau: "ArrayLike") -> "NDArray[np.float64]":
    """α(τ) = (2τ + 1)^{−1/2} = e^{−t}."""
    return 1.0 / np.sqrt(2.0 * np.asarray(tau, dtype=np.float64) + 1.0)


def tau_of_t(t: "ArrayLike") -> "NDArray[np.float64]":
    return 0.5 * np.expm1(2.0 * np.asarray(t, dtype=np.float64))


def t_of_tau(tau: "ArrayLike") -> "NDArray[np.float64]":
    return 0.5 * np.log1p(2.0 * np.asarray(tau, dtype=np.float64))


@as_dataclass(readonly=True)
class TauMesh:
    """Uniform nodes τ_m = m·Δτ, m = 0…M, with the current window [τ_k0, τ_k1]."""

    dtau: float
    n_nodes: int
    k0: int = 0
    k1: int = 0

    @staticmethod
    def covering(dtau: float, tau_end: float) -> "TauMesh":
        if not dtau > 0:
            raise DomainError(f"Δτ must be positive, got `{dtau}`")
        return TauMesh(float(dtau), int(math.ceil(tau_end / dtau - 1e-9)) + 1)

    @property
    def nodes(self) -> "NDArray[np.float64]":
        return np.arange(self.n_nodes) * self.dtau

    @property
    def tau_end(self) -> float:
        return (self.n_nodes - 1) * self.dtau

    def window(self, k0: int, k1: int) -> "TauMesh":
        if not 0 <= k0 < k1 < self.n_nodes:
            raise DomainError(f"Window `{(k0, k1)}` outside mesh of {self.n_nodes} nodes")
        if (k1 - k0) * self.dtau > 1.0 + 1e-12:
            raise DomainError(f"Window length `{(k1 - k0) * self.dtau}` exceeds 1")
        return TauMesh(self.dtau, self.n_nodes, k0, k1)


@as_dataclass(readonly=True)
class StefanConfig:
    dtau: float
    t_end: float
    window: float = 0.1
    tol: float = 1e-10
    max_iter: int = 200
    damping: float = 1.0
    max_halvings: int = 8
    blowup: float = 1e8
    rebase: bool = True

    @staticmethod
    def create(dtau: float, t_end: float, **kwargs: "typing.Any") -> "StefanConfig":
        if not dtau > 0:
            raise DomainError(f"Δτ must be positive, got `{dtau}`")
        window = kwargs.get("window", 0.1)
        if not dtau <= window <= 1.0:
            raise DomainError(f"Window length must lie in [Δτ, 1], got `{window}`")
        return StefanConfig(float(dtau), float(t_end), **kwargs)


@as_dataclass(readonly=True)
class InitialData:
    """u⁰ as cell averages between `edges` (n_s + 1 points in z, boundary at z = 0)."""

    edges: "NDArray[np.float64]"
    cells: "NDArray[np.float64]"

    @property
    def first_moment(self) -> "NDArray[np.float64]":
        return self.cells @ (0.5 * (self.edges[1:] ** 2 - self.edges[:-1] ** 2))

    @property
    def boundary_value(self) -> "NDArray[np.float64]":
        """u⁰ at z = edges[0], extrapolated linearly through the first two cell centres."""
        c0, c1 = 0.5 * (self.edges[:2] + self.edges[1:3])
        slope = (self.cells[:, 1] - self.cells[:, 0]) / (c1 - c0)
        return self.cells[:, 0] - slope * (c0 - self.edges[0])


@as_dataclass
class BoundaryTriple:
    """(v, γ, ū, Ψ) per row and τ-node, in absolute (un-rebased) z coordinates."""

    tau: "NDArray[np.float64]"
    v: "NDArray[np.float64]"
    gamma: "NDArray[np.float64]"
    ubar: "NDArray[np.float64]"
    psi: "NDArray[np.float64]"
    filled: int = 0

    @staticmethod
    def empty(n_rows: int, mesh: TauMesh) -> "BoundaryTriple":
        z = np.zeros((n_rows, mesh.n_nodes))
        return BoundaryTriple(mesh.nodes, z.copy(), z.copy(), z.copy(), z.copy(), 0)

    def at(self, tau: float) -> "tuple[NDArray[np.float64], ...]":
        """(v, γ, ū, Ψ) linearly interpolated at τ (within the filled nodes)."""
        if tau > self.tau[self.filled] + 1e-12:
            raise DomainError(f"τ=`{tau}` beyond the solved range `{self.tau[self.filled]}`")
        k = min(int(tau / (self.tau[1] - self.tau[0])), max(self.filled - 1, 0))
        if self.filled == 0:
            return self.v[:, 0], self.gamma[:, 0], self.ubar[:, 0], self.psi[:, 0]
        w = (tau - self.tau[k]) / (self.tau[k + 1] - self.tau[k])
        return tuple(a[:, k] * (1.0 - w) + a[:, k + 1] * w for a in (self.v, self.gamma, self.ubar, self.psi))

    def lipschitz_defect(self) -> float:
        """max over nodes of |Δγ| − max|Ψ|·Δτ; nonpositive on a consistent solution."""
        n = self.filled + 1
        dg = np.abs(np.diff(self.gamma[:, :n], axis=1))
        return float(np.max(dg - np.max(np.abs(self.psi[:, :n])) * np.diff(self.tau[:n]))) if n > 1 else 0.0


@as_dataclass(readonly=True)
class SelfsimilarField:
    """u(x, z, τ) sampled at z = γ(x, τ) + y_j on a shared grid of offsets y_j ≥ 0 (cell centres)."""

    tau: float
    y: "NDArray[np.float64]"
    gamma: "NDArray[np.float64]"
    u: "NDArray[np.float64]"

    @property
    def z(self) -> "NDArray[np.float64]":
        return self.gamma[:, None] + self.y[None, :]

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    @property
    def mass_per_x(self) -> "NDArray[np.float64]":
        return self.u.sum(axis=1) * self.dy

    @property
    def first_moment(self) -> "NDArray[np.float64]":
        """∫_γ z·u dz per x."""
        return (self.u * self.z).sum(axis=1) * self.dy


def psi_function(p: "ModelParams") -> "PsiFn":
    """Ψ(γ, ū, τ) = Φ(α·W∗(ū − γ·L^{−d}) + β(τ))·α for one population, normalized parameters."""
    mass = p.mass

    def psi(gamma: "NDArray[np.float64]", ubar: "NDArray[np.float64]", tau: float) -> "NDArray[np.float64]":
        a = float(alpha(tau))
        return p.phi(a * periodic_convolve(p.W, ubar - gamma * mass) + p.B.transformed(tau)) * a

    return psi


def to_selfsimilar(rho: DensityField, gamma: "ArrayLike | None" = None) -> SelfsimilarField:
    """u(x, z, τ) = e^{−t}ρ(x, e^{−t}(z − γ), t) with τ = ½(e^{2t} − 1), in normalized units.

    Sampling is exact: the offsets are y_j = eᵗs_j for the density's cell centres s_j.
    """
    t = rho.t
    g = np.zeros(rho.spatial.n_points) if gamma is None else np.broadcast_to(np.asarray(gamma, float), (rho.spatial.n_points,))
    y = math.exp(t) * rho.activity.centers
    return SelfsimilarField(float(tau_of_t(t)), y, np.array(g), math.exp(-t) * rho.values)


def selfsimilar_to_density(u: SelfsimilarField, like: DensityField) -> DensityField:
    """Inverse of `to_selfsimilar` on the grid of `like` (offsets must be eᵗ·s_j)."""
    t = float(t_of_tau(u.tau))
    return like.with_values(math.exp(t) * u.u, t)


def initial_data(rho: DensityField) -> InitialData:
    return InitialData(rho.activity.faces.copy(), rho.values.copy())


def _initial_terms(
    u0: InitialData, gamma: "NDArray[np.float64]", tau: float, shift: "NDArray[np.float64]"
) -> "tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]":
    """∫G(γ, τ, ξ, 0)u⁰ dξ, ∫∫_γ z·G dz u⁰ dξ and ∫∫_γ G dz u⁰ dξ, exact for piecewise-constant u⁰."""
    c = 2.0 * math.sqrt(tau)
    edges = u0.edges[None, :] - shift[:, None]
    x = (edges - gamma[:, None]) / c
    e = special.erf(x)
    g = np.exp(-(x**2))
    # antiderivatives in ξ of the mass and first-moment identities, with ξ = γ + c·x
    A = 0.5 * c * (x + x * e + g / SQRT_PI)
    F = c * (
        0.25 * c * e
        + gamma[:, None] * A / c
        + 0.5 * c * (0.5 * x**2 + (0.5 * x**2 - 0.25) * e + x * g / (2.0 * SQRT_PI))
    )
    iv = (u0.cells * 0.5 * np.diff(e, axis=1)).sum(axis=1)
    iu = (u0.cells * np.diff(F, axis=1)).sum(axis=1)
    im = (u0.cells * np.diff(A, axis=1)).sum(axis=1)
    return iv, iu, im


@cached
def _product_weights(n: int, h: float) -> "tuple[NDArray[np.float64], NDArray[np.float64]]":
    """Weights of ∫ g(η)(τ − η)^{−1/2} dη for g linear on [τ − l·h, τ − (l−1)·h], indexed by lag l."""
    lag = np.arange(n + 2, dtype=np.float64)
    lag1 = np.maximum(lag - 1.0, 0.0)
    i0 = 2.0 * math.sqrt(h) * (np.sqrt(lag) - np.sqrt(lag1))
    i1 = (2.0 / 3.0) * h**1.5 * (lag**1.5 - lag1**1.5)
    wb = (lag * h * i0 - i1) / h
    wa = i0 - wb
    wa[0] = wb[0] = 0.0
    wa.setflags(write=False)
    wb.setflags(write=False)
    return wa, wb


def _history_sums(gamma, v, psi, tau, lo, hi, wa, wb, h, out_v, out_u, out_m):  # type: ignore
    """Volterra sums for nodes lo…hi of every row.

    out_v = Σ_j ω_mj·f_mj·v_j approximates ∫₀^τm ∂G/∂ξ(γ_m, τ_m, γ_j, η)v dη and out_u the matching
    ∫ (moment kernel)·v dη and out_m its mass part. f carries the difference quotient
    (γ_m − γ_j)/(τ_m − η_j), which tends to −Ψ_m on the diagonal.
    """
    n_rows = gamma.shape[0]
    for x in prange(n_rows):
        for m in range(lo, hi + 1):
            gm = gamma[x, m]
            acc_v = 0.0
            acc_u = 0.0
            acc_m = 0.0
            for j in range(m + 1):
                w = 0.0
                if j < m:
                    w += wa[m - j]
                if j >= 1:
                    w += wb[m - j + 1]
                if j == m:
                    dq = -psi[x, m]
                    decay = 1.0
                    r = 0.5
                    trap = 0.5 * h
                else:
                    lag = tau[m] - tau[j]
                    dq = (gm - gamma[x, j]) / lag
                    decay = math.exp(-dq * dq * lag / 4.0)
                    r = 0.5 * math.erfc(dq * math.sqrt(lag) / 2.0)
                    trap = 0.5 * h if j == 0 else h
                acc_v += w * dq * decay / (4.0 * SQRT_PI) * v[x, j]
                acc_m += w * decay / (2.0 * SQRT_PI) * v[x, j]
                acc_u += (gm * w * decay / (2.0 * SQRT_PI) + trap * r) * v[x, j]
            out_v[x, m - lo] = acc_v
            out_u[x, m - lo] = acc_u
            out_m[x, m - lo] = acc_m


with contextlib.suppress(ImportError):
    import numba as nb

    prange = nb.prange
    _history_sums = nb.njit(parallel=True, nogil=True, cache=False)(_history_sums)


def integrate_gamma(
    ubar: "NDArray[np.float64]",
    gamma_start: "NDArray[np.float64]",
    p: "ModelParams",
    mesh: TauMesh,
    *,
    psi_fn: "PsiFn | None" = None,
    blowup: float = 1e8,
) -> "tuple[NDArray[np.float64], NDArray[np.float64]]":
    """RK4 for ∂γ/∂τ = −Ψ over the window nodes k0…k1.

    `ubar` holds ū at those nodes (shape rows × (k1 − k0 + 1)); midpoint values are linear interpolants.
    Returns (γ, Ψ) at the same nodes.
    """
    psi = psi_function(p) if psi_fn is None else psi_fn
    n = mesh.k1 - mesh.k0 + 1
    if ubar.shape[-1] != n:
        raise DomainError(f"ū path has `{ubar.shape[-1]}` nodes, window has `{n}`")
    h = mesh.dtau
    tau = mesh.k0 * h + np.arange(n) * h
    gamma = np.empty_like(ubar)
    out = np.empty_like(ubar)
    gamma[:, 0] = gamma_start
    out[:, 0] = psi(gamma[:, 0], ubar[:, 0], tau[0])
    for m in range(n - 1):
        g, t = gamma[:, m], tau[m]
        u_mid = 0.5 * (ubar[:, m] + ubar[:, m + 1])
        k1 = -out[:, m]
        k2 = -psi(g + 0.5 * h * k1, u_mid, t + 0.5 * h)
        k3 = -psi(g + 0.5 * h * k2, u_mid, t + 0.5 * h)
        k4 = -psi(g + h * k3, ubar[:, m + 1], t + h)
        gamma[:, m + 1] = g + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(gamma[:, m + 1])) or np.max(np.abs(gamma[:, m + 1])) > blowup:
            raise BlowUpError(f"Free boundary blew up near τ=`{t + h:.6g}`", t + h)
        out[:, m + 1] = psi(gamma[:, m + 1], ubar[:, m + 1], t + h)
    return gamma, out


def _window_update(
    u0: InitialData,
    triple: BoundaryTriple,
    mesh: TauMesh,
    shift: "NDArray[np.float64]",
    weights: "tuple[NDArray[np.float64], NDArray[np.float64]]",
) -> "tuple[NDArray[np.float64], NDArray[np.float64]]":
    """One application of the Duhamel maps (v, ū) ↦ (F_v, F_ū) on the window, in shifted coordinates."""
    lo, hi = mesh.k0 + 1, mesh.k1
    gamma = triple.gamma - shift[:, None]
    n_rows = gamma.shape[0]
    out_v = np.empty((n_rows, hi - lo + 1))
    out_u = np.empty_like(out_v)
    out_m = np.empty_like(out_v)
    _history_sums(
        np.ascontiguousarray(gamma[:, : hi + 1]),
        np.ascontiguousarray(triple.v[:, : hi + 1]),
        np.ascontiguousarray(triple.psi[:, : hi + 1]),
        triple.tau[: hi + 1],
        lo,
        hi,
        weights[0],
        weights[1],
        mesh.dtau,
        out_v,
        out_u,
        out_m,
    )
    new_v = np.empty_like(out_v)
    new_u = np.empty_like(out_v)
    for i, m in enumerate(range(lo, hi + 1)):
        iv, iu, im = _initial_terms(u0, gamma[:, m], float(triple.tau[m]), shift)
        new_v[:, i] = 2.0 * iv + 2.0 * out_v[:, i]
        # back to absolute z: ∫_γ z·u = ∫_γ′ z′·u + shift·∫u, with the discrete mass of the same quadrature
        new_u[:, i] = iu + out_u[:, i] + shift * (im + out_m[:, i])
    return new_v, new_u


def picard_window(
    u0: InitialData,
    p: "ModelParams",
    mesh: TauMesh,
    triple: BoundaryTriple,
    *,
    tol: float = 1e-10,
    max_iter: int = 200,
    damping: float = 1.0,
    rebase: bool = True,
    psi_fn: "PsiFn | None" = None,
    blowup: float = 1e8,
) -> int:
    """Fill nodes k0+1…k1 of `triple` with the fixed point of the Duhamel system; returns the iteration count.

    Nodes up to k0 must already be solved. With `rebase`, the window is computed in z′ = z − γ(x, τ_k0),
    which leaves (v, ū − γ·L^{−d}) unchanged.
    """
    lo, hi = mesh.k0 + 1, mesh.k1
    shift = triple.gamma[:, mesh.k0].copy() if rebase else np.zeros(triple.gamma.shape[0])
    weights = _product_weights(triple.tau.size, mesh.dtau)
    triple.v[:, lo : hi + 1] = triple.v[:, [mesh.k0]]
    triple.ubar[:, lo : hi + 1] = triple.ubar[:, [mesh.k0]]
    theta = damping
    previous = math.inf
    rises = 0
    for it in range(1, max_iter + 1):
        gamma, psi = integrate_gamma(
            triple.ubar[:, mesh.k0 : hi + 1], triple.gamma[:, mesh.k0], p, mesh, psi_fn=psi_fn, blowup=blowup
        )
        triple.gamma[:, lo : hi + 1] = gamma[:, 1:]
        triple.psi[:, mesh.k0 : hi + 1] = psi
        new_v, new_u = _window_update(u0, triple, mesh, shift, weights)
        change = max(
            float(np.max(np.abs(new_v - triple.v[:, lo : hi + 1]))),
            float(np.max(np.abs(new_u - triple.ubar[:, lo : hi + 1]))),
        )
        if not math.isfinite(change):
            raise DivergenceError(f"Non-finite Picard iterate in window {(mesh.k0, mesh.k1)}", {"iteration": it})
        triple.v[:, lo : hi + 1] += theta * (new_v - triple.v[:, lo : hi + 1])
        triple.ubar[:, lo : hi + 1] += theta * (new_u - triple.ubar[:, lo : hi + 1])
        logger.debug(f"window {(mesh.k0, mesh.k1)} iteration {it}: change {change:.3e}")
        if change < tol:
            gamma, psi = integrate_gamma(
                triple.ubar[:, mesh.k0 : hi + 1], triple.gamma[:, mesh.k0], p, mesh, psi_fn=psi_fn, blowup=blowup
            )
            triple.gamma[:, lo : hi + 1] = gamma[:, 1:]
            triple.psi[:, mesh.k0 : hi + 1] = psi
            triple.filled = hi
            return it
        if change > previous:
            rises += 1
            if theta == 1.0:
                theta = 0.5
                logger.debug(f"window {(mesh.k0, mesh.k1)}: oscillation, damping set to 0.5")
            if rises > 5:
                break
        previous = change
    raise DivergenceError(
        f"Picard iteration did not contract on window {(mesh.k0, mesh.k1)}",
        {"window": [mesh.k0, mesh.k1], "last_change": previous, "iterations": it},
    )


def reconstruct_u(
    triple: BoundaryTriple,
    u0: InitialData,
    tau: float,
    y: "NDArray[np.float64]",
    *,
    n_gauss: int = 4,
) -> SelfsimilarField:
    """u(x, γ(x, τ) + y, τ) from the Duhamel formula.

    The boundary integral is taken in θ = √(τ − η), panels of width ≤ min Δy/4 resolve the heat-kernel layer.
    """
    v_t, g_t, _, _ = triple.at(tau)
    n_rows = triple.v.shape[0]
    nodes = triple.tau[: triple.filled + 1]
    u = np.empty((n_rows, y.size))
    if tau <= 0.0:
        for x in range(n_rows):
            idx = np.clip(np.searchsorted(u0.edges, y, side="right") - 1, 0, u0.cells.shape[1] - 1)
            u[x] = np.where(y < u0.edges[-1], u0.cells[x, idx], 0.0)
        return SelfsimilarField(0.0, y, g_t.copy(), u)
    c = 2.0 * math.sqrt(tau)
    root = math.sqrt(tau)
    width = max(min(float(np.min(np.diff(y))) if y.size > 1 else root, root) / 4.0, 1e-12)
    panels = max(16, int(math.ceil(root / width)))
    gx, gw = leggauss(n_gauss)
    edges = np.linspace(0.0, root, panels + 1)
    half = 0.5 * np.diff(edges)
    theta = (edges[:-1, None] + half[:, None] * (gx[None, :] + 1.0)).ravel()
    wts = (half[:, None] * gw[None, :]).ravel()
    eta = tau - theta**2
    for x in range(n_rows):
        z = g_t[x] + y
        e = special.erf((u0.edges[None, :] - z[:, None]) / c)
        heat = (u0.cells[x][None, :] * 0.5 * np.diff(e, axis=1)).sum(axis=1)
        v_eta = np.interp(eta, nodes, triple.v[x, : nodes.size])
        g_eta = np.interp(eta, nodes, triple.gamma[x, : nodes.size])
        dz = z[:, None] - g_eta[None, :]
        kernel = dz / (2.0 * SQRT_PI * theta[None, :] ** 2) * np.exp(-(dz**2) / (4.0 * theta[None, :] ** 2))
        u[x] = heat + kernel @ (wts * v_eta)
    return SelfsimilarField(float(tau), y, g_t.copy(), u)


@as_dataclass
class StefanRun:
    params: "ModelParams"
    normalized: "ModelParams"
    scale: "RescaleMap"
    config: StefanConfig
    rho0: DensityField
    u0: InitialData
    mesh: TauMesh
    triple: BoundaryTriple
    windows: "list[tuple[int, int, int]]"

    def boundary_trace(self, times: "ArrayLike") -> "NDArray[np.float64]":
        return to_original(self, times, "boundary")

    def mean_trace(self, times: "ArrayLike") -> "NDArray[np.float64]":
        return to_original(self, times, "mean")

    def field(self, t: float) -> DensityField:
        return to_original(self, t, "field")


def to_original(run: StefanRun, times: "ArrayLike", what: str = "mean") -> "typing.Any":
    """Map the normalized free-boundary solution back to original variables.

    `what` is "boundary" for ρ(x, 0, t) = (1/√σ)e^{t/τ_c}v(x, τ), "mean" for ρ̄ = √σ·e^{−t/τ_c}(ū − γ/L^d),
    both shaped (time, x), or "field" for a DensityField at a single time.
    """
    scale, mass = run.scale, run.normalized.mass
    if what == "field":
        t_n = float(scale.time_to_normalized(times))
        tau = float(tau_of_t(t_n))
        like = scale.field_to_normalized(run.rho0)
        u = reconstruct_u(run.triple, run.u0, tau, math.exp(t_n) * like.activity.centers)
        return scale.field_to_original(like.with_values(math.exp(t_n) * u.u, t_n))
    t_n = np.atleast_1d(scale.time_to_normalized(times))
    out = np.empty((t_n.size, run.triple.v.shape[0]))
    for i, t in enumerate(t_n):
        v, g, ub, _ = run.triple.at(float(tau_of_t(t)))
        if what == "boundary":
            out[i] = math.exp(t) * v / scale.s_scale
        elif what == "mean":
            out[i] = scale.s_scale * math.exp(-t) * (ub - g * mass)
        else:
            raise DomainError(f"Unknown output `{what}`")
    return out


def march(
    u0: InitialData,
    p: "ModelParams",
    mesh: TauMesh,
    cfg: StefanConfig,
    *,
    psi_fn: "PsiFn | None" = None,
    with_tqdm: bool = False,
) -> "tuple[BoundaryTriple, list[tuple[int, int, int]]]":
    """Solve every τ-node window by window; rows of `u0` may stack several populations when `psi_fn` couples them."""
    triple = BoundaryTriple.empty(u0.cells.shape[0], mesh)
    psi = psi_function(p) if psi_fn is None else psi_fn
    triple.v[:, 0] = u0.boundary_value
    triple.ubar[:, 0] = u0.first_moment
    triple.psi[:, 0] = psi(triple.gamma[:, 0], triple.ubar[:, 0], 0.0)

    nominal = max(1, int(round(cfg.window / cfg.dtau)))
    size = nominal
    windows: "list[tuple[int, int, int]]" = []
    k0 = 0
    tq = tqdm(total=mesh.n_nodes - 1, desc="stefan", unit=" nodes", disable=not with_tqdm)
    try:
        while k0 < mesh.n_nodes - 1:
            halvings = 0
            while True:
                k1 = min(k0 + size, mesh.n_nodes - 1)
                try:
                    its = picard_window(
                        u0,
                        p,
                        mesh.window(k0, k1),
                        triple,
                        tol=cfg.tol,
                        max_iter=cfg.max_iter,
                        damping=cfg.damping,
                        rebase=cfg.rebase,
                        psi_fn=psi_fn,
                        blowup=cfg.blowup,
                    )
                    break
                except BlowUpError:
                    raise
                except DivergenceError as e:
                    halvings += 1
                    if halvings > cfg.max_halvings or size == 1:
                        raise DivergenceError(
                            f"No contraction after {halvings - 1} window halvings at τ=`{k0 * mesh.dtau:.6g}`",
                            {**e.diagnostics, "tau": k0 * mesh.dtau, "halvings": halvings - 1},
                        ) from e
                    size = max(1, size // 2)
                    logger.warning(f"Halving Picard window to {size} nodes at τ={k0 * mesh.dtau:.6g}")
            windows.append((k0, k1, its))
            tq.update(k1 - k0)
            k0 = k1
            size = min(nominal, 2 * size)
    finally:
        tq.close()

    lowest = float(triple.v[:, : triple.filled + 1].min())
    if lowest < -1e-8:
        logger.warning(f"Boundary value became negative ({lowest:.3e})")
    return triple, windows


def run_stefan(rho0: DensityField, p: "ModelParams", cfg: StefanConfig, *, with_tqdm: bool = False) -> StefanRun:
    """Solve the free-boundary system from ρ⁰ (original units) up to cfg.t_end (original time)."""
    norm, scale = normalize_parameters(p)
    u0 = initial_data(scale.field_to_normalized(rho0))
    mesh = TauMesh.covering(cfg.dtau, float(tau_of_t(cfg.t_end / p.tau_c)))
    logger.info(f"Stefan run: {mesh.n_nodes} τ-nodes of Δτ={mesh.dtau:g} up to τ={mesh.tau_end:.4g}")
    triple, windows = march(u0, norm, mesh, cfg, with_tqdm=with_tqdm)
    logger.info(f"Stefan run finished in {len(windows)} windows")
    return StefanRun(p, norm, scale, cfg, rho0, u0, mesh, triple, windows)
