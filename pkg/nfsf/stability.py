"""Stability conditions, entropy functionals and decay measurement around stationary states."""
import logging
import math
import typing

import numpy as np
import pandas as pd
import polars as pl
from numpy.polynomial.legendre import leggauss
from scipy.linalg import LinAlgError, eigh_tridiagonal

from .core import as_dataclass
from .errors import ConditionFailed, DomainError
from .model.density import DensityField, drift_field, mean_activity
from .numerics import FourierModes, fourier_modes, periodic_convolve
from .solvers.direct import bernoulli

if typing.TYPE_CHECKING:
    from typing import Any, Literal, Sequence

    from numpy.typing import ArrayLike, NDArray

    from .equilibrium import EquilibriumState
    from .model.params import ModelParams

__all__ = [
    "ConditionRecord",
    "StabilityReport",
    "EntropyTrace",
    "LinearMargins",
    "relative_entropy",
    "poincare_constant",
    "check_prop_stab1",
    "check_high_noise_remark",
    "check_nonsymmetric_extra",
    "condition_operands",
    "decay_rate_prediction",
    "corollary_global_rate",
    "linear_fourier_threshold",
    "check_nonlinear_condition",
    "mean_ode",
    "lyapunov_noiseless",
    "entropy_trace",
    "q_sandwich",
    "measure_decay",
    "stability_report",
    "seeded_perturbation",
]

logger = logging.getLogger(__name__)

RHO_FLOOR = 1e-300
EXCLUDED_MASS_TOL = 1e-8


@as_dataclass(readonly=True)
class ConditionRecord:
    """One inequality lhs < rhs (or ≤ when `strict` is False) with the operands it was built from."""

    name: str
    lhs: float
    rhs: float
    passed: bool
    strict: bool = True
    note: str = ""
    operands: "dict[str, Any] | None" = None

    @staticmethod
    def compare(name: str, lhs: float, rhs: float, *, strict: bool = True, note: str = "", **operands: "Any") -> "ConditionRecord":
        passed = lhs < rhs if strict else lhs <= rhs
        return ConditionRecord(name, float(lhs), float(rhs), bool(passed), strict, note, operands)

    def to_dict(self) -> "dict[str, Any]":
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "passed": self.passed,
            "strict": self.strict,
            "note": self.note,
            "operands": dict(self.operands or {}),
        }


@as_dataclass
class StabilityReport:
    conditions: "list[ConditionRecord]"
    operands: "dict[str, float]"
    K: "float | None" = None
    K_eps: "float | None" = None

    def __getitem__(self, name: str) -> ConditionRecord:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(f"No condition named `{name}`")

    def to_dict(self) -> "dict[str, Any]":
        return {
            "conditions": [c.to_dict() for c in self.conditions],
            "operands": dict(self.operands),
            "K": self.K,
            "K_eps": self.K_eps,
        }

    def to_frame(self, mode: 'Literal["pl", "pd"]' = "pl") -> "pl.DataFrame | pd.DataFrame":
        df = pl.DataFrame(
            {
                "name": [c.name for c in self.conditions],
                "lhs": [c.lhs for c in self.conditions],
                "rhs": [c.rhs for c in self.conditions],
                "passed": [c.passed for c in self.conditions],
                "note": [c.note for c in self.conditions],
            }
        )
        return df if mode == "pl" else df.to_arrow().to_pandas(self_destruct=True)


def _excluded(rho: DensityField, rho_inf: DensityField) -> "tuple[NDArray[np.bool_], float]":
    if rho_inf.values.min() < 0.0:
        raise DomainError("Stationary profile is negative")
    keep = rho_inf.values > RHO_FLOOR
    bulk = rho_inf.values >= 1e-12 * rho_inf.values.max(axis=1, keepdims=True)
    if np.any(bulk & ~keep):
        raise DomainError("Stationary profile vanishes on bulk cells")
    mass = float(np.abs(rho.values[~keep]).sum() * rho.activity.ds * rho.spatial.cell_volume)
    if mass > EXCLUDED_MASS_TOL:
        logger.warning(f"Entropy excludes {mass:.3e} of mass where ρ∞ underflows")
    return keep, mass


def _entropy_density(rho: DensityField, rho_inf: DensityField) -> "tuple[NDArray[np.float64], float]":
    """∫((ρ − ρ∞)/ρ∞)²ρ∞ ds per x, and the excluded mass."""
    keep, mass = _excluded(rho, rho_inf)
    diff = np.where(keep, rho.values - rho_inf.values, 0.0)
    safe = np.where(keep, rho_inf.values, 1.0)
    return (diff**2 / safe).sum(axis=1) * rho.activity.ds, mass


def relative_entropy(rho: DensityField, rho_inf: "DensityField | EquilibriumState") -> float:
    """∫∫((ρ − ρ∞)/ρ∞)²ρ∞ ds dx."""
    ref = rho_inf if isinstance(rho_inf, DensityField) else rho_inf.profile
    density, _ = _entropy_density(rho, ref)
    return float(density.sum() * rho.spatial.cell_volume)


def poincare_constant(
    state: "EquilibriumState", method: 'Literal["conservative", "numeric"]' = "numeric"
) -> "NDArray[np.float64]":
    """γ(ρ∞(x)) per x.

    "conservative" is the generic bound 1/σ. "numeric" is the first nonzero eigenvalue of
    −(1/ρ∞)∂_s(ρ∞∂_s·) with no-flux ends, discretised with the same exponentially fitted face weights as the
    direct solver, restricted to cells where ρ∞ is above 1e−30 of its peak.
    """
    n_points = state.profile.spatial.n_points
    if method == "conservative":
        return np.full(n_points, 1.0 / state.sigma)
    if method != "numeric":
        raise DomainError(f"Unknown Poincaré method `{method}`")
    act = state.profile.activity
    ds = act.ds
    out = np.empty(n_points)
    for x in range(n_points):
        rho = state.profile.values[x]
        keep = np.nonzero(rho > 1e-30 * rho.max())[0]
        lo, hi = keep[0], keep[-1] + 1
        r = rho[lo:hi]
        w = (state.phi0[x] - act.faces[lo + 1 : hi]) * ds / state.sigma
        face = bernoulli(-w) * r[:-1]
        diag = np.zeros(r.size)
        diag[:-1] += face
        diag[1:] += face
        inv = 1.0 / np.sqrt(r)
        try:
            vals = eigh_tridiagonal(
                diag * inv * inv / ds**2, -face * inv[:-1] * inv[1:] / ds**2, select="i", select_range=(0, 1)
            )[0]
        except LinAlgError as e:
            raise DomainError(f"Eigen-solver failed at x-index {x}: {e}") from e
        out[x] = vals[1]
    return out


def condition_operands(state: "EquilibriumState", p: "ModelParams", gamma: "NDArray[np.float64] | None") -> "dict[str, float]":
    g = poincare_constant(state, "conservative") if gamma is None else np.asarray(gamma)
    phi_prime = p.phi.sup_derivative()
    w2 = p.W.l2_norm
    m_sup = state.M_sup
    return {
        "sigma": p.sigma,
        "L": p.L,
        "d": float(p.d),
        "phi_prime_sup": phi_prime,
        "W_L2": w2,
        "M_inf_sup": m_sup,
        "gamma_tilde": float(np.min(g)),
        "C": phi_prime * w2 / p.L ** (p.d / 2.0) * math.sqrt(m_sup),
    }


def check_prop_stab1(
    state: "EquilibriumState", p: "ModelParams", gamma: "NDArray[np.float64] | None" = None
) -> "list[ConditionRecord]":
    """The Poincaré-based condition and its two simplified forms.

    - C < (σ/2)·γ̃^{1/2}, with C = ‖Φ′‖∞‖W‖_{L²}L^{−d/2}·sup M∞^{1/2}
    - C < √σ/2 (γ̃ replaced by its generic bound 1/σ)
    - L^{−d}·‖Φ′‖∞‖W‖_{L²} < ½ (M∞ replaced by its bound σ/L^d)
    """
    op = condition_operands(state, p, gamma)
    sigma, c = op["sigma"], op["C"]
    return [
        ConditionRecord.compare("stab1", c, 0.5 * sigma * math.sqrt(op["gamma_tilde"]), **op),
        ConditionRecord.compare("stabcond2", c, 0.5 * math.sqrt(sigma), **op),
        ConditionRecord.compare(
            "stabcond3", op["phi_prime_sup"] * op["W_L2"] / p.L**p.d, 0.5, **op
        ),
    ]


def check_high_noise_remark(p: "ModelParams") -> "list[ConditionRecord]":
    """High-noise regime σ > L^{2d}πB²/(2|W₀|²) and the remark condition ‖Φ′‖∞‖W‖_{L²} ≤ L^d/(2√(1 − 2/π))."""
    w0 = p.W.W0
    b = float(p.B.value(0.0))
    vol = p.L**p.d
    threshold = math.inf if w0 == 0.0 else vol**2 * math.pi * b**2 / (2.0 * w0**2)
    lhs = p.phi.sup_derivative() * p.W.l2_norm
    return [
        ConditionRecord.compare("high_noise", threshold, p.sigma, W0=w0, B=b),
        ConditionRecord.compare(
            "high_noise_stability", lhs, vol / (2.0 * math.sqrt(1.0 - 2.0 / math.pi)), strict=False
        ),
    ]


def check_nonsymmetric_extra(
    state: "EquilibriumState", p: "ModelParams", alpha: float = 0.5, xi: float = 0.1, gamma: "NDArray[np.float64] | None" = None
) -> ConditionRecord:
    """2L^d ≤ α^{3/2}(2 − ξ)γ^{1/2}σ/(‖∇W‖∞‖Φ′‖∞M∞^{1/2}), needed when W is not symmetric."""
    op = condition_operands(state, p, gamma)
    denom = p.W.grad_sup * op["phi_prime_sup"] * math.sqrt(op["M_inf_sup"])
    rhs = math.inf if denom == 0.0 else alpha**1.5 * (2.0 - xi) * math.sqrt(op["gamma_tilde"]) * p.sigma / denom
    return ConditionRecord.compare("nonsymmetric_extra", 2.0 * p.L**p.d, rhs, strict=False, alpha=alpha, xi=xi, **op)


def decay_rate_prediction(
    state: "EquilibriumState",
    p: "ModelParams",
    re0: float,
    *,
    eps: float = 0.0,
    gamma: "NDArray[np.float64] | None" = None,
) -> "tuple[float, float]":
    """(K, K_ε) with K = γ̃^{1/2}((σ/2)γ̃^{1/2} − C) − C²·RE₀/(2L^dσ), and K_ε = γ̃^{1/2}((σ/2)γ̃^{1/2} − C) − ε.

    The relative entropy is then bounded by e^{−2Kt}·RE₀.
    """
    stab1 = check_prop_stab1(state, p, gamma)[0]
    if not stab1.passed:
        raise ConditionFailed(f"Poincaré condition fails ({stab1.lhs:.6g} ≥ {stab1.rhs:.6g}), no decay rate")
    op = condition_operands(state, p, gamma)
    g, c, sigma = op["gamma_tilde"], op["C"], op["sigma"]
    base = math.sqrt(g) * (0.5 * sigma * math.sqrt(g) - c)
    return base - c**2 / (2.0 * p.L**p.d * sigma) * re0, base - eps


def corollary_global_rate(
    state: "EquilibriumState", p: "ModelParams", gamma: "NDArray[np.float64] | None" = None
) -> "dict[str, float]":
    """Global-in-time rate constant −K = 2‖Φ‖∞²/σ + γ̃^{1/2}(C − (σ/2)γ̃^{1/2}).

    When W ≤ 0, B ≥ 0 and Φ ≥ 0 is increasing, ‖Φ‖∞ may be replaced by Φ(B); the sufficient noise level
    σ > 4Φ(B)⁴/(½ − ‖Φ′‖∞‖W‖_{L²}/L^d)² is reported as well. Keys absent from the result do not apply.
    """
    op = condition_operands(state, p, gamma)
    g, c, sigma = op["gamma_tilde"], op["C"], op["sigma"]
    tail = math.sqrt(g) * (c - 0.5 * sigma * math.sqrt(g))
    out: "dict[str, float]" = {}
    if p.phi.kind == "sigmoid":
        out["minus_K"] = 2.0 * p.phi.params[0] ** 2 / sigma + tail
    elif p.phi.kind == "custom-tabulated":
        out["minus_K"] = 2.0 * float(np.max(np.abs(p.phi.values))) ** 2 / sigma + tail  # type: ignore
    b = float(p.B.value(0.0))
    if p.W.is_nonpositive and b >= 0.0 and p.phi.sign == "nonneg" and p.phi.is_increasing():
        phi_b = float(p.phi(b))
        out["minus_K_input"] = 2.0 * phi_b**2 / sigma + tail
        gap = 0.5 - op["phi_prime_sup"] * op["W_L2"] / p.L**p.d
        if gap > 0.0:
            out["sigma_threshold"] = 4.0 * phi_b**4 / gap**2
    return out


@as_dataclass(readonly=True)
class LinearMargins:
    k: "NDArray[np.int64]"
    margins: "NDArray[np.float64]"

    @property
    def stable(self) -> bool:
        return bool(np.all(self.margins > 0.0))

    @property
    def worst(self) -> "tuple[tuple[int, ...], float]":
        i = int(np.argmin(self.margins))
        return tuple(int(v) for v in self.k[i]), float(self.margins[i])

    def margin(self, *k: int) -> float:
        hit = np.all(self.k == np.asarray(k), axis=1)
        if not hit.any():
            raise KeyError(f"Mode `{k}` not computed")
        return float(self.margins[np.argmax(hit)])

    def to_frame(self, mode: 'Literal["pl", "pd"]' = "pl") -> "pl.DataFrame | pd.DataFrame":
        cols = {f"k{i}": self.k[:, i] for i in range(self.k.shape[1])}
        df = pl.DataFrame({**cols, "margin": self.margins})
        return df if mode == "pl" else df.to_arrow().to_pandas(self_destruct=True)


def _homogeneous_scalars(state: "EquilibriumState") -> "tuple[float, float]":
    if not state.homogeneous:
        raise DomainError("Condition needs a spatially homogeneous stationary state")
    return float(state.phi0_prime[0]), float(state.M_inf[0])


def linear_fourier_threshold(state: "EquilibriumState", modes: FourierModes) -> LinearMargins:
    """margin_k = σ/M∞ − Φ₀′·Re Ŵ_k; the state is linearly stable iff every margin is positive."""
    phi_prime, m_inf = _homogeneous_scalars(state)
    return LinearMargins(modes.k, state.sigma / m_inf - phi_prime * modes.real)


def check_nonlinear_condition(
    state: "EquilibriumState", p: "ModelParams", alpha: float = 0.5, K_max: int = 32
) -> "tuple[ConditionRecord, LinearMargins]":
    """Linearised form of the quadratic-form condition: c = (1 − α)δ − (M∞/σ)Φ₀′W must be H-stable,
    i.e. ĉ_k = 1 − α − (M∞/σ)Φ₀′Ŵ_k ≥ 0 for |k_i| ≤ K_max."""
    if not p.W.componentwise_symmetric:
        raise DomainError("Nonlinear stability condition needs a componentwise symmetric kernel")
    phi_prime, m_inf = _homogeneous_scalars(state)
    modes = fourier_modes(p.W, K_max)
    c_hat = 1.0 - alpha - m_inf / state.sigma * phi_prime * modes.real
    margins = LinearMargins(modes.k, c_hat)
    k_worst, worst = margins.worst
    record = ConditionRecord.compare(
        "nonlinear_linearized",
        -worst,
        0.0,
        strict=False,
        note=f"linearized check only; worst mode {k_worst}",
        alpha=alpha,
        K_max=K_max,
        worst_k=list(k_worst),
        offending=[list(map(int, k)) for k in modes.k[c_hat < 0.0]],
    )
    return record, margins


def mean_ode(
    rho_bar0: "ArrayLike", p: "ModelParams", t_end: float, dt: float
) -> "tuple[NDArray[np.float64], NDArray[np.float64]]":
    """RK4 for τ_c·ρ̄′ = −ρ̄ + Φ(W∗ρ̄ + B)/L^d, the noiseless mean dynamics."""
    n = int(round(t_end / dt))
    traj = np.empty((n + 1, p.grid.n_points))
    traj[0] = np.asarray(rho_bar0, dtype=np.float64).ravel()

    def f(r: "NDArray[np.float64]", t: float) -> "NDArray[np.float64]":
        return (-r + p.phi(periodic_convolve(p.W, r) + p.B.value(t)) * p.mass) / p.tau_c

    for k in range(n):
        r, t = traj[k], k * dt
        k1 = f(r, t)
        k2 = f(r + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = f(r + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = f(r + dt * k3, t + dt)
        traj[k + 1] = r + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return np.arange(n + 1) * dt, traj


def lyapunov_noiseless(trajectory: "ArrayLike", p: "ModelParams", *, n_gauss: int = 48) -> "NDArray[np.float64]":
    """E[ζ] = −(1/(2L^d))∫∫W(x − y)ζ(y)ζ(x) + ∫∫_{Φ(B)}^{ζ}(Φ⁻¹(ω) − B)dω along ζ = Φ_ρ̄(t).

    The inner integral starts at Φ(B) instead of 0, which shifts E by a constant; it is evaluated as
    ∫_B^{Φ⁻¹(ζ)}(p − B)Φ′(p)dp by Gauss–Legendre quadrature.
    """
    rho_bar = np.atleast_2d(np.asarray(trajectory, dtype=np.float64))
    b = float(p.B.value(0.0))
    gx, gw = leggauss(n_gauss)
    dv = p.grid.cell_volume
    out = np.empty(rho_bar.shape[0])
    for i, r in enumerate(rho_bar):
        zeta = p.phi(periodic_convolve(p.W, r) + b)
        u = p.phi.inverse(zeta)
        half = 0.5 * (u - b)
        nodes = b + half[:, None] * (gx[None, :] + 1.0)
        inner = (half[:, None] * gw[None, :] * (nodes - b) * p.phi.derivative(nodes)).sum(axis=1)
        interaction = -0.5 * p.mass * float(np.sum(zeta * periodic_convolve(p.W, zeta))) * dv
        out[i] = interaction + float(inner.sum()) * dv
    return out


@as_dataclass
class EntropyTrace:
    times: "NDArray[np.float64]"
    re: "NDArray[np.float64]"
    E: "NDArray[np.float64]"
    H: "NDArray[np.float64]"
    Q: "NDArray[np.float64]"
    excluded_mass: float
    rate: "float | None" = None
    r2: "float | None" = None

    def to_frame(self, mode: 'Literal["pl", "pd"]' = "pl") -> "pl.DataFrame | pd.DataFrame":
        df = pl.DataFrame({"t": self.times, "relative_entropy": self.re, "Q": self.Q})
        return df if mode == "pl" else df.to_arrow().to_pandas(self_destruct=True)


def entropy_trace(
    snapshots: "Sequence[DensityField]", state: "EquilibriumState", p: "ModelParams", *, fit: bool = True
) -> EntropyTrace:
    """RE(t), E(x, t) = ½∫((ρ − ρ∞)/ρ∞)²ρ∞ ds, H = Φ^δρ̄^δ and Q = ∫2E − H/σ dx over snapshots."""
    n = len(snapshots)
    n_points = state.profile.spatial.n_points
    dv = state.profile.spatial.cell_volume
    re = np.empty(n)
    E = np.empty((n, n_points))
    H = np.empty((n, n_points))
    excluded = 0.0
    for i, rho in enumerate(snapshots):
        density, mass = _entropy_density(rho, state.profile)
        excluded = max(excluded, mass)
        E[i] = 0.5 * density
        re[i] = density.sum() * dv
        H[i] = (drift_field(rho, p) - state.phi0) * (mean_activity(rho) - mean_activity(state.profile))
    Q = (2.0 * E - H / p.sigma).sum(axis=1) * dv
    trace = EntropyTrace(np.array([r.t for r in snapshots]), re, E, H, Q, excluded)
    if fit and n >= 40:
        trace.rate, trace.r2 = measure_decay(trace)
    return trace


def q_sandwich(trace: EntropyTrace, state: "EquilibriumState", p: "ModelParams", alpha: float = 0.5) -> "NDArray[np.bool_]":
    """α·RE ≤ Q ≤ (1 + ‖Φ′‖∞‖W‖_{L²}M∞/σ)·RE per sample, with RE = 2∫E dx."""
    upper = 1.0 + p.phi.sup_derivative() * p.W.l2_norm * state.M_sup / p.sigma
    slack = 1e-14 * (1.0 + np.abs(trace.re))
    return (alpha * trace.re <= trace.Q + slack) & (trace.Q <= upper * trace.re + slack)


def measure_decay(
    trace: "EntropyTrace | tuple[ArrayLike, ArrayLike]", *, floor: float = 1e-16, min_samples: int = 20
) -> "tuple[float, float]":
    """Least-squares rate of log RE(t) over the last half of the pre-floor samples; returns (rate, R²)."""
    times, re = (trace.times, trace.re) if isinstance(trace, EntropyTrace) else map(np.asarray, trace)
    times = np.asarray(times, dtype=np.float64)
    re = np.asarray(re, dtype=np.float64)
    below = np.nonzero(re <= floor)[0]
    end = int(below[0]) if below.size else re.size
    start = end // 2
    if end - start < min_samples:
        raise DomainError(f"Need at least {min_samples} samples above the floor for a fit, got `{end - start}`")
    t, y = times[start:end], np.log(re[start:end])
    slope, intercept = np.polyfit(t, y, 1)
    fitted = slope * t + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return float(-slope), 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def stability_report(
    state: "EquilibriumState",
    p: "ModelParams",
    *,
    alpha: float = 0.5,
    xi: float = 0.1,
    K_max: int = 32,
    re0: float = 0.0,
    poincare: 'Literal["conservative", "numeric"]' = "numeric",
) -> StabilityReport:
    """Every condition that applies to `state`, with the decay prediction when the Poincaré condition holds."""
    gamma = poincare_constant(state, poincare)
    conditions = check_prop_stab1(state, p, gamma)
    conditions += check_high_noise_remark(p)
    conditions.append(check_nonsymmetric_extra(state, p, alpha, xi, gamma))
    if state.homogeneous and p.W.componentwise_symmetric:
        conditions.append(check_nonlinear_condition(state, p, alpha, K_max)[0])
    if state.homogeneous:
        margins = linear_fourier_threshold(state, fourier_modes(p.W, K_max))
        k, worst = margins.worst
        conditions.append(ConditionRecord.compare("linear_threshold", -worst, 0.0, note=f"worst mode {k}"))
    K = K_eps = None
    if conditions[0].passed:
        K, K_eps = decay_rate_prediction(state, p, re0, gamma=gamma)
    operands = condition_operands(state, p, gamma)
    operands.update({f"corollary_{k}": v for k, v in corollary_global_rate(state, p, gamma).items()})
    return StabilityReport(conditions, operands, K, K_eps)


def seeded_perturbation(
    state: "EquilibriumState",
    rng: np.random.Generator,
    *,
    target_re: float,
    mode: int = 1,
    uniform: float = 0.0,
) -> DensityField:
    """ρ∞·(1 + ε·a(x)·(g(s) − ⟨g⟩_x)) with g = tanh((s − m(x))/√σ) and a(x) = uniform + cos(2π·mode·x₀/L + φ).

    The phase φ is drawn from `rng` and ε is chosen so that the relative entropy equals `target_re`. Per-x mass
    is preserved; ε is capped at 0.25/max|a| to keep the density positive.
    """
    rho_inf = state.profile
    spatial, act = rho_inf.spatial, rho_inf.activity
    phase = float(rng.uniform(0.0, 2.0 * np.pi))
    a = uniform + np.cos(2.0 * np.pi * mode * spatial.coords()[0].ravel() / spatial.L + phase)
    v = rho_inf.values
    m = (v @ act.centers) / v.sum(axis=1)
    g = np.tanh((act.centers[None, :] - m[:, None]) / np.sqrt(state.sigma))
    g = g - ((g * v).sum(axis=1) / v.sum(axis=1))[:, None]
    h = a[:, None] * g
    norm = float((h**2 * v).sum() * act.ds * spatial.cell_volume)
    if norm == 0.0:
        raise DomainError("Perturbation vanishes identically")
    eps = np.sqrt(target_re / norm)
    cap = 0.25 / max(float(np.max(np.abs(h))), 1e-300)
    if eps > cap:
        raise DomainError(f"Target relative entropy `{target_re}` would make the density negative")
    return rho_inf.with_values(v * (1.0 + eps * h), 0.0)
