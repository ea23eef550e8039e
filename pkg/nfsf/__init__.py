import typing

from .core import as_dataclass, cached
from .errors import (
    BlowUpError,
    ConditionFailed,
    ConfigError,
    ConvergenceError,
    DivergenceError,
    DomainError,
    NfsfError,
)
from .model import (
    ActivityGrid,
    ConnectivityKernel,
    DensityField,
    ExternalInput,
    ModelParams,
    ModulationFn,
    SpatialGrid,
    normalize_parameters,
)
from .solvers import SolverConfig, StefanConfig, run_stefan, simulate
from .equilibrium import EquilibriumState, homogeneous_branch
from .stability import StabilityReport, entropy_trace, stability_report
from .gridcell import PopulationSet, simulate4, stefan4

if typing.TYPE_CHECKING:
    from .solvers.stefan import PsiFn

    __all__ = [
        "as_dataclass",
        "cached",
        "NfsfError",
        "DomainError",
        "ConfigError",
        "DivergenceError",
        "BlowUpError",
        "ConvergenceError",
        "ConditionFailed",
        "ActivityGrid",
        "SpatialGrid",
        "ConnectivityKernel",
        "DensityField",
        "ExternalInput",
        "ModelParams",
        "ModulationFn",
        "normalize_parameters",
        "SolverConfig",
        "StefanConfig",
        "simulate",
        "run_stefan",
        "EquilibriumState",
        "homogeneous_branch",
        "StabilityReport",
        "stability_report",
        "entropy_trace",
        "PopulationSet",
        "simulate4",
        "stefan4",
        "PsiFn",
    ]

else:
    __all__ = [
        "as_dataclass",
        "cached",
        "NfsfError",
        "DomainError",
        "ConfigError",
        "DivergenceError",
        "BlowUpError",
        "ConvergenceError",
        "ConditionFailed",
        "ActivityGrid",
        "SpatialGrid",
        "ConnectivityKernel",
        "DensityField",
        "ExternalInput",
        "ModelParams",
        "ModulationFn",
        "normalize_parameters",
        "SolverConfig",
        "StefanConfig",
        "simulate",
        "run_stefan",
        "EquilibriumState",
        "homogeneous_branch",
        "StabilityReport",
        "stability_report",
        "entropy_trace",
        "PopulationSet",
        "simulate4",
        "stefan4",
    ]
