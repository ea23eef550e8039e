"""JSON run configuration.

Every section rejects unknown keys; validation errors are reported against the line of the offending key, or of
the enclosing object for missing keys.
"""
import json
import logging
import os
import typing
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError, DomainError
from .model import (
    ActivityGrid,
    ConnectivityKernel,
    ExternalInput,
    ModelParams,
    ModulationFn,
    SpatialGrid,
)
from .solvers.direct import SolverConfig
from .solvers.stefan import StefanConfig

if typing.TYPE_CHECKING:
    Loc = tuple[typing.Union[str, int], ...]

__all__ = [
    "PhiSection",
    "KernelSection",
    "InputSection",
    "ModelSection",
    "GridSection",
    "SolverSection",
    "StefanSection",
    "StabilitySection",
    "GridcellSection",
    "ExperimentSection",
    "OutputSection",
    "RunConfig",
    "parse_config",
    "load_config",
    "shifts_array",
]

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check_table(axis: "list[float]", values: "list[float]", name: str) -> None:
    if len(axis) != len(values) or not axis:
        raise ValueError(f"`{name}` and `values` must be nonempty and of equal length, got `{len(axis)}`, `{len(values)}`")
    if np.any(np.diff(axis) <= 0):
        raise ValueError(f"`{name}` must be strictly increasing")


class PhiSection(_Section):
    form: Literal["linear", "smoothed-rectifier", "sigmoid", "custom-tabulated"] = "linear"
    slope: float = 1.0
    offset: float = 0.0
    gain: float = 1.0
    width: float = Field(0.0, ge=0.0)
    threshold: float = 0.0
    steepness: float = Field(1.0, gt=0.0)
    knots: Optional[list[float]] = None
    values: Optional[list[float]] = None

    @model_validator(mode="after")
    def _tabulated(self) -> "PhiSection":
        if self.form == "custom-tabulated":
            if self.knots is None or self.values is None:
                raise ValueError("custom-tabulated Φ needs `knots` and `values`")
            _check_table(self.knots, self.values, "knots")
        return self

    def build(self) -> ModulationFn:
        if self.form == "linear":
            return ModulationFn.linear(self.slope, self.offset)
        if self.form == "smoothed-rectifier":
            return ModulationFn.rectifier(self.gain, self.width)
        if self.form == "sigmoid":
            return ModulationFn.sigmoid(self.gain, self.threshold, self.steepness)
        assert self.knots is not None and self.values is not None
        return ModulationFn.tabulated(self.knots, self.values)


class KernelSection(_Section):
    form: Literal["constant", "cosine", "difference-of-gaussians", "tabulated"] = "constant"
    value: float = 0.0
    amplitude: float = 0.0
    mode: int = Field(1, ge=1)
    offset: float = 0.0
    a_exc: float = 0.0
    s_exc: float = Field(1.0, gt=0.0)
    a_inh: float = 0.0
    s_inh: float = Field(1.0, gt=0.0)
    samples: Optional[list[Any]] = None

    @model_validator(mode="after")
    def _tabulated(self) -> "KernelSection":
        if self.form == "tabulated" and self.samples is None:
            raise ValueError("Tabulated kernel needs `samples`")
        return self

    def build(self, grid: SpatialGrid) -> ConnectivityKernel:
        if self.form == "constant":
            return ConnectivityKernel.constant(grid, self.value)
        if self.form == "cosine":
            return ConnectivityKernel.cosine(grid, self.amplitude, mode=self.mode, offset=self.offset)
        if self.form == "difference-of-gaussians":
            return ConnectivityKernel.difference_of_gaussians(grid, self.a_exc, self.s_exc, self.a_inh, self.s_inh)
        assert self.samples is not None
        return ConnectivityKernel.from_samples(grid, np.asarray(self.samples, dtype=np.float64))


class InputSection(_Section):
    form: Literal["constant", "tabulated"] = "constant"
    value: float = 0.0
    times: Optional[list[float]] = None
    values: Optional[list[float]] = None

    @model_validator(mode="after")
    def _tabulated(self) -> "InputSection":
        if self.form == "tabulated":
            if self.times is None or self.values is None:
                raise ValueError("Tabulated input needs `times` and `values`")
            _check_table(self.times, self.values, "times")
        return self

    def build(self) -> ExternalInput:
        if self.form == "constant":
            return ExternalInput.constant(self.value)
        assert self.times is not None and self.values is not None
        return ExternalInput.tabulated(self.times, self.values)


class ModelSection(_Section):
    tau_c: float = Field(1.0, gt=0.0)
    sigma: float = Field(1.0, gt=0.0)
    phi: PhiSection = PhiSection()
    kernel: KernelSection = KernelSection()
    input: InputSection = InputSection()


class GridSection(_Section):
    d: Literal[1, 2] = 1
    L: float = Field(1.0, gt=0.0)
    n_x: int = Field(64, ge=1)
    n_s: Optional[int] = Field(None, ge=32)
    ds: Optional[float] = Field(None, gt=0.0)
    s_max: Optional[float] = Field(None, gt=0.0)


class SolverSection(_Section):
    dt: float = Field(1e-3, gt=0.0)
    t_end: float = Field(1.0, ge=0.0)
    scheme: Literal["chang-cooper", "upwind-implicit"] = "chang-cooper"
    coupling: Literal["frozen", "iterated"] = "frozen"
    max_iter: int = Field(50, ge=1)
    tol: float = Field(1e-12, gt=0.0)


class StefanSection(_Section):
    dtau: float = Field(1e-3, gt=0.0)
    t_end: Optional[float] = Field(None, ge=0.0)
    window: float = Field(0.1, gt=0.0, le=1.0)
    tol: float = Field(1e-10, gt=0.0)
    max_iter: int = Field(200, ge=1)
    damping: float = Field(1.0, gt=0.0, le=1.0)
    max_halvings: int = Field(8, ge=0)
    blowup: float = Field(1e8, gt=0.0)
    rebase: bool = True


class StabilitySection(_Section):
    alpha: float = Field(0.5, gt=0.0, lt=1.0)
    xi: float = Field(0.1, ge=0.0, lt=0.5)
    K_max: int = Field(32, ge=1)
    poincare: Literal["conservative", "numeric"] = "numeric"
    eps: float = Field(0.0, ge=0.0)


class GridcellSection(_Section):
    shifts: list[list[float]] = Field(default_factory=lambda: [[0.0]] * 4)
    inputs: Optional[list[InputSection]] = None


class ExperimentSection(_Section):
    initial: Literal["half-gaussian", "equilibrium", "perturbed-equilibrium"] = "half-gaussian"
    center: float = 0.0
    relative_entropy: float = Field(1e-4, gt=0.0)
    mode: int = Field(1, ge=1)
    uniform: float = 0.0
    mean_ode_runs: int = Field(10, ge=1)


class OutputSection(_Section):
    snapshot_stride: int = Field(1, ge=1)
    n_times: int = Field(101, ge=2)
    n_fields: int = Field(5, ge=1)
    binary: bool = True


class RunConfig(_Section):
    model: ModelSection = ModelSection()
    grid: GridSection = GridSection()
    solver: SolverSection = SolverSection()
    stefan: StefanSection = StefanSection()
    stability: StabilitySection = StabilitySection()
    gridcell: GridcellSection = GridcellSection()
    experiment: ExperimentSection = ExperimentSection()
    output: OutputSection = OutputSection()
    seed: int = 0

    def spatial(self) -> SpatialGrid:
        return SpatialGrid.create(self.grid.d, self.grid.L, self.grid.n_x)

    def params(self) -> ModelParams:
        m = self.model
        W = m.kernel.build(self.spatial())
        return ModelParams.create(m.phi.build(), W, m.input.build(), tau_c=m.tau_c, sigma=m.sigma)

    def activity(self, phi_max: float) -> ActivityGrid:
        """Explicit s_max/n_s when given, otherwise a grid covering Φ_max + 10√σ."""
        g = self.grid
        if g.s_max is not None and g.n_s is not None:
            return ActivityGrid.create(g.s_max, g.n_s)
        return ActivityGrid.covering(phi_max, self.model.sigma, ds=g.ds, n_s=g.n_s)

    def solver_config(self) -> SolverConfig:
        s = self.solver
        return SolverConfig.create(
            s.dt,
            s.t_end,
            scheme=s.scheme,
            coupling=s.coupling,
            max_iter=s.max_iter,
            tol=s.tol,
            snapshot_stride=self.output.snapshot_stride,
        )

    def stefan_config(self) -> StefanConfig:
        s = self.stefan
        return StefanConfig.create(
            s.dtau,
            self.solver.t_end if s.t_end is None else s.t_end,
            window=s.window,
            tol=s.tol,
            max_iter=s.max_iter,
            damping=s.damping,
            max_halvings=s.max_halvings,
            blowup=s.blowup,
            rebase=s.rebase,
        )

    def population_inputs(self) -> "list[ExternalInput]":
        inputs = self.gridcell.inputs
        if inputs is None:
            return [self.model.input.build()] * 4
        return [i.build() for i in inputs]

    def resolved(self) -> "dict[str, Any]":
        return self.model_dump(mode="json")


def _key_lines(text: str) -> "dict[Loc, int]":
    """Line of every object key and array element that opens a container, by JSON path."""
    lines: "dict[Loc, int]" = {(): 1}
    stack: "list[list[Any]]" = []
    line = 1
    i = 0

    def child() -> "Loc":
        if not stack:
            return ()
        return (*stack[-1][1], stack[-1][2])

    while i < len(text):
        c = text[i]
        if c == "\n":
            line += 1
        elif c == '"':
            j = i + 1
            while text[j] != '"':
                j += 2 if text[j] == "\\" else 1
            if stack and stack[-1][0] == "obj" and stack[-1][2] is None:
                key = json.loads(text[i : j + 1])
                stack[-1][2] = key
                lines[(*stack[-1][1], key)] = line
            i = j
        elif c in "{[":
            path = child()
            lines.setdefault(path, line)
            stack.append(["obj", path, None] if c == "{" else ["arr", path, 0])
        elif c in "}]":
            stack.pop()
        elif c == "," and stack:
            if stack[-1][0] == "obj":
                stack[-1][2] = None
            else:
                stack[-1][2] += 1
        i += 1
    return lines


def _line_for(loc: "Loc", lines: "dict[Loc, int]") -> int:
    for n in range(len(loc), -1, -1):
        if loc[:n] in lines:
            return lines[loc[:n]]
    return 1


def parse_config(text: str, path: "str | None" = None) -> RunConfig:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON: {e.msg}", path=path, line=e.lineno) from e
    if not isinstance(payload, dict):
        raise ConfigError("Configuration must be a JSON object", path=path, line=1)
    try:
        cfg = RunConfig.model_validate(payload)
    except ValidationError as e:
        lines = _key_lines(text)
        first = sorted(e.errors(), key=lambda err: _line_for(tuple(err["loc"]), lines))[0]
        loc = tuple(first["loc"])
        dotted = ".".join(str(k) for k in loc)
        message = "Unknown key" if first["type"] == "extra_forbidden" else first["msg"]
        raise ConfigError(f"{message} at `{dotted}`", path=path, line=_line_for(loc, lines)) from e
    d = cfg.grid.d
    for b, shift in enumerate(cfg.gridcell.shifts):
        if len(shift) not in (1, d) or (len(shift) == 1 and d != 1 and shift != [0.0]):
            lines = _key_lines(text)
            raise ConfigError(
                f"Shift `{shift}` does not have {d} components",
                path=path,
                line=_line_for(("gridcell", "shifts", b), lines),
            )
    if len(cfg.gridcell.shifts) != 4:
        raise ConfigError(
            f"Need four shifts, got `{len(cfg.gridcell.shifts)}`",
            path=path,
            line=_line_for(("gridcell", "shifts"), _key_lines(text)),
        )
    if cfg.gridcell.inputs is not None and len(cfg.gridcell.inputs) != 4:
        raise ConfigError(
            f"Need four inputs, got `{len(cfg.gridcell.inputs)}`",
            path=path,
            line=_line_for(("gridcell", "inputs"), _key_lines(text)),
        )
    _check_build(cfg, text, path)
    return cfg


def _check_build(cfg: RunConfig, text: str, path: "str | None") -> None:
    """Build the model pieces once so that cross-section failures, such as kernel samples that do not fit the grid,
    are reported at the line of the section that produced them."""
    builders: "list[tuple[Loc, typing.Callable[[], object]]]" = [
        (("model", "phi"), cfg.model.phi.build),
        (("model", "kernel"), lambda: cfg.model.kernel.build(cfg.spatial())),
        (("model", "input"), cfg.model.input.build),
    ]
    for loc, build in builders:
        try:
            build()
        except (DomainError, ValueError) as e:
            dotted = ".".join(str(k) for k in loc)
            raise ConfigError(f"{e} at `{dotted}`", path=path, line=_line_for(loc, _key_lines(text))) from e


def load_config(path: "str | os.PathLike[str]") -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read configuration: {e}", path=str(path)) from e
    cfg = parse_config(text, str(path))
    logger.info(f"Loaded configuration {path}")
    return cfg


def shifts_array(cfg: RunConfig) -> "np.ndarray[Any, Any]":
    """Physical shift vectors (4 × d); a single zero component broadcasts to the zero vector."""
    d = cfg.grid.d
    return np.array([s if len(s) == d else [0.0] * d for s in cfg.gridcell.shifts], dtype=np.float64)
