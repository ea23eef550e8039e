from .direct import DirectRun, SolverConfig, simulate, step
from .stefan import BoundaryTriple, StefanConfig, StefanRun, run_stefan

__all__ = [
    "DirectRun",
    "SolverConfig",
    "simulate",
    "step",
    "BoundaryTriple",
    "StefanConfig",
    "StefanRun",
    "run_stefan",
]
