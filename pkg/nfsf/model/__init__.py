from .grids import ActivityGrid, SpatialGrid
from .modulation import ModulationFn
from .kernel import ConnectivityKernel
from .inputs import ExternalInput
from .params import ModelParams, RescaleMap, normalize_parameters
from .density import CompatibleInitialCondition, DensityField, drift_field, mean_activity

__all__ = [
    "ActivityGrid",
    "SpatialGrid",
    "ModulationFn",
    "ConnectivityKernel",
    "ExternalInput",
    "ModelParams",
    "RescaleMap",
    "normalize_parameters",
    "CompatibleInitialCondition",
    "DensityField",
    "drift_field",
    "mean_activity",
]
