"""Four populations with orientation-shifted connectivity, coupled through one summed convolution."""
import logging
import math
import typing

import numpy as np
from tqdm import tqdm

from .core import as_dataclass
from .errors import DomainError
from .model.density import DensityField, mean_activity
from .model.grids import SpatialGrid
from .model.params import normalize_parameters
from .numerics import periodic_convolve
from .solvers.direct import SolverConfig, step
from .solvers.stefan import (
    InitialData,
    StefanConfig,
    StefanRun,
    TauMesh,
    alpha,
    march,
    reconstruct_u,
    tau_of_t,
    to_original,
)
from .stability import ConditionRecord, condition_operands, poincare_constant, relative_entropy

if typing.TYPE_CHECKING:
    from typing import Sequence

    from numpy.typing import ArrayLike, NDArray

    from .equilibrium import EquilibriumState
    from .model.inputs import ExternalInput
    from .model.params import ModelParams

__all__ = [
    "ORIENTATIONS",
    "PopulationSet",
    "GridcellRun",
    "GridcellStefanRun",
    "snap_shifts",
    "coupled_drift",
    "step4",
    "simulate4",
    "stefan4",
    "shift_condition",
    "check_gridcell_stab1",
    "summed_relative_entropy",
]

logger = logging.getLogger(__name__)

ORIENTATIONS = ("N", "W", "S", "E")


def snap_shifts(grid: SpatialGrid, shifts: "ArrayLike") -> "NDArray[np.int64]":
    """Physical shift vectors (4 × d) rounded to whole grid steps."""
    r = np.asarray(shifts, dtype=np.float64).reshape(len(ORIENTATIONS), grid.d)
    steps = np.rint(r / grid.dx).astype(np.int64)
    off = np.abs(steps * grid.dx - r).max()
    if off > 1e-9 * max(grid.dx, 1.0):
        logger.info(f"Shifts snapped to the grid, largest move {off:.3e}")
    return steps


@as_dataclass(readonly=True)
class PopulationSet:
    """ρ^β for β in N, W, S, E with shifts r^β in grid steps and inputs B^β."""

    fields: "tuple[DensityField, ...]"
    shifts: "NDArray[np.int64]"
    inputs: "tuple[ExternalInput, ...]"

    @staticmethod
    def create(
        fields: "Sequence[DensityField]", shifts: "ArrayLike", inputs: "Sequence[ExternalInput]"
    ) -> "PopulationSet":
        if len(fields) != 4 or len(inputs) != 4:
            raise DomainError(f"Need four populations, got `{len(fields)}` fields and `{len(inputs)}` inputs")
        first = fields[0]
        for f in fields[1:]:
            if not (f.spatial.same_as(first.spatial) and f.activity.same_as(first.activity)):
                raise DomainError("Populations live on different grids")
        steps = np.asarray(shifts, dtype=np.int64).reshape(4, first.spatial.d)
        return PopulationSet(tuple(fields), steps, tuple(inputs))

    @staticmethod
    def uniform(
        rho: DensityField,
        p: "ModelParams",
        shifts: "ArrayLike | None" = None,
        inputs: "Sequence[ExternalInput] | None" = None,
    ) -> "PopulationSet":
        """Four copies of `rho`; shifts default to zero and inputs to p.B."""
        steps = np.zeros((4, rho.spatial.d), dtype=np.int64) if shifts is None else shifts
        return PopulationSet.create([rho] * 4, steps, list(inputs) if inputs is not None else [p.B] * 4)

    @property
    def t(self) -> float:
        return self.fields[0].t

    @property
    def physical_shifts(self) -> "NDArray[np.float64]":
        return self.shifts * self.fields[0].spatial.dx

    def with_fields(self, fields: "Sequence[DensityField]") -> "PopulationSet":
        return PopulationSet(tuple(fields), self.shifts, self.inputs)

    def means(self) -> "NDArray[np.float64]":
        return np.stack([mean_activity(f) for f in self.fields])


def _convolution_sum(p: "ModelParams", shifts: "NDArray[np.int64]", q: "NDArray[np.float64]") -> "NDArray[np.float64]":
    """¼Σ_β′ W(· − r^β′)∗q^β′, q shaped (4, n_points)."""
    total = np.zeros(q.shape[1])
    for b in range(4):
        total += periodic_convolve(p.W.shifted(shifts[b]), q[b])
    return 0.25 * total


def coupled_drift(pop: PopulationSet, p: "ModelParams", t: "float | None" = None) -> "NDArray[np.float64]":
    """Φ^β = Φ(¼Σ_β′ W^β′∗ρ̄^β′ + B^β(t)), shaped (4, n_points)."""
    when = pop.t if t is None else t
    conv = _convolution_sum(p, pop.shifts, pop.means())
    return np.stack([p.phi(conv + pop.inputs[b].value(when)) for b in range(4)])


def step4(pop: PopulationSet, p: "ModelParams", cfg: SolverConfig) -> PopulationSet:
    """One implicit step per population with the coupled drift frozen at the start of the step."""
    drift = coupled_drift(pop, p)
    return pop.with_fields([step(f, p, cfg, drift=drift[b]) for b, f in enumerate(pop.fields)])


@as_dataclass
class GridcellRun:
    params: "ModelParams"
    config: SolverConfig
    snapshots: "list[PopulationSet]"
    step_times: "NDArray[np.float64]"
    means: "NDArray[np.float64]"
    boundary: "NDArray[np.float64]"

    @property
    def times(self) -> "NDArray[np.float64]":
        return np.array([s.t for s in self.snapshots])

    @property
    def final(self) -> PopulationSet:
        return self.snapshots[-1]


def simulate4(pop: PopulationSet, p: "ModelParams", cfg: SolverConfig, *, with_tqdm: bool = False) -> GridcellRun:
    n_steps = cfg.n_steps
    n_points = pop.fields[0].spatial.n_points
    logger.info(f"Four-population direct run: {n_steps} steps of dt={cfg.dt:g}")
    means = np.empty((n_steps + 1, 4, n_points))
    boundary = np.empty_like(means)
    means[0] = pop.means()
    boundary[0] = [f.boundary_value() for f in pop.fields]
    snapshots = [pop]
    tq = tqdm(total=n_steps, desc="gridcell", unit=" steps", disable=not with_tqdm)
    try:
        for k in range(1, n_steps + 1):
            pop = step4(pop, p, cfg)
            pop = pop.with_fields([f.with_values(f.values, k * cfg.dt) for f in pop.fields])
            means[k] = pop.means()
            boundary[k] = [f.boundary_value() for f in pop.fields]
            if k % cfg.snapshot_stride == 0 or k == n_steps:
                snapshots.append(pop)
            tq.update()
    finally:
        tq.close()
    return GridcellRun(p, cfg, snapshots, np.arange(n_steps + 1) * cfg.dt, means, boundary)


@as_dataclass
class GridcellStefanRun:
    """Free-boundary solution of the four populations, rows stacked β-major."""

    stacked: StefanRun
    pop: PopulationSet

    def _split(self, values: "NDArray[np.float64]") -> "NDArray[np.float64]":
        return values.reshape(values.shape[0], 4, -1)

    def boundary_trace(self, times: "ArrayLike") -> "NDArray[np.float64]":
        return self._split(to_original(self.stacked, times, "boundary"))

    def mean_trace(self, times: "ArrayLike") -> "NDArray[np.float64]":
        return self._split(to_original(self.stacked, times, "mean"))

    def fields(self, t: float) -> PopulationSet:
        run = self.stacked
        scale = run.scale
        t_n = float(scale.time_to_normalized(t))
        like = scale.field_to_normalized(self.pop.fields[0])
        u = reconstruct_u(run.triple, run.u0, float(tau_of_t(t_n)), math.exp(t_n) * like.activity.centers)
        rows = u.u.reshape(4, -1, u.u.shape[1])
        return self.pop.with_fields(
            [scale.field_to_original(like.with_values(math.exp(t_n) * rows[b], t_n)) for b in range(4)]
        )


def stefan4(pop: PopulationSet, p: "ModelParams", cfg: StefanConfig, *, with_tqdm: bool = False) -> GridcellStefanRun:
    """Free-boundary backend lifted to four populations; they interact only through Ψ^β."""
    norm, scale = normalize_parameters(p)
    inputs = [b.time_scaled(p.tau_c) for b in pop.inputs]
    normalized = [scale.field_to_normalized(f) for f in pop.fields]
    u0 = InitialData(normalized[0].activity.faces.copy(), np.vstack([f.values for f in normalized]))
    n_points = pop.fields[0].spatial.n_points
    mass = norm.mass

    def psi(gamma: "NDArray[np.float64]", ubar: "NDArray[np.float64]", tau: float) -> "NDArray[np.float64]":
        a = float(alpha(tau))
        q = (ubar - gamma * mass).reshape(4, n_points)
        conv = a * _convolution_sum(norm, pop.shifts, q)
        return np.concatenate([norm.phi(conv + inputs[b].transformed(tau)) * a for b in range(4)])

    mesh = TauMesh.covering(cfg.dtau, float(tau_of_t(cfg.t_end / p.tau_c)))
    logger.info(f"Four-population Stefan run: {mesh.n_nodes} τ-nodes")
    triple, windows = march(u0, norm, mesh, cfg, psi_fn=psi, with_tqdm=with_tqdm)
    stacked = StefanRun(p, norm, scale, cfg, pop.fields[0], u0, mesh, triple, windows)
    return GridcellStefanRun(stacked, pop)


def _torus_norm(vec: "NDArray[np.float64]", L: float) -> float:
    wrapped = vec - L * np.rint(vec / L)
    return float(np.sqrt(np.sum(wrapped**2)))


def shift_condition(
    state: "EquilibriumState",
    p: "ModelParams",
    shifts: "ArrayLike",
    alpha: float = 0.5,
    xi: float = 0.1,
    gamma: "NDArray[np.float64] | None" = None,
) -> "list[ConditionRecord]":
    """max_{β,j}|r^β + r^j| ≤ α^{3/2}(2 − 4ξ)γ̃^{1/2}σ/(‖∇W‖∞‖Φ′‖∞M∞), and the non-symmetric-W extra condition.

    `shifts` are physical vectors (4 × d).
    """
    if not state.homogeneous:
        raise DomainError("Shift condition needs the homogeneous stationary state shared by all populations")
    g = poincare_constant(state, "numeric") if gamma is None else gamma
    op = condition_operands(state, p, g)
    r = np.asarray(shifts, dtype=np.float64).reshape(4, p.d)
    lhs = max(_torus_norm(r[b] + r[j], p.L) for b in range(4) for j in range(4))
    denom = p.W.grad_sup * op["phi_prime_sup"] * op["M_inf_sup"]
    rhs = math.inf if denom == 0.0 else alpha**1.5 * (2.0 - 4.0 * xi) * math.sqrt(op["gamma_tilde"]) * p.sigma / denom
    denom_ns = p.W.grad_sup * op["phi_prime_sup"] * math.sqrt(op["M_inf_sup"])
    rhs_ns = (
        math.inf if denom_ns == 0.0 else alpha**1.5 * (2.0 - xi) * math.sqrt(op["gamma_tilde"]) * p.sigma / denom_ns
    )
    return [
        ConditionRecord.compare("shift", lhs, rhs, strict=False, alpha=alpha, xi=xi, **op),
        ConditionRecord.compare("nonsymmetric_extra", 2.0 * p.L**p.d, rhs_ns, strict=False, alpha=alpha, xi=xi, **op),
    ]


def check_gridcell_stab1(
    state: "EquilibriumState", p: "ModelParams", gamma: "NDArray[np.float64] | None" = None
) -> ConditionRecord:
    """‖Φ′‖∞‖W‖_{L²}·sup M∞^{1/2} < 2σγ̃^{1/2} for the four-population system."""
    g = poincare_constant(state, "conservative") if gamma is None else gamma
    op = condition_operands(state, p, g)
    lhs = op["phi_prime_sup"] * op["W_L2"] * math.sqrt(op["M_inf_sup"])
    return ConditionRecord.compare("gridcell_stab1", lhs, 2.0 * p.sigma * math.sqrt(op["gamma_tilde"]), **op)


def summed_relative_entropy(pop: PopulationSet, state: "EquilibriumState") -> float:
    return sum(relative_entropy(f, state) for f in pop.fields)
