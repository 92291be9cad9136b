"""Simulation, inversion and stable inversion of SISO piecewise affine systems."""

__version__ = "0.1.0"

from .errors import PwaError  # noqa: E402
from .inversion import InversePwaModel, check_assumptions, global_relative_degree, invert  # noqa: E402
from .pwa import LocationMatrices, Partition, PwaModel, Trajectory, simulate  # noqa: E402
from .stable import StableInversionConfig, stable_inverse  # noqa: E402

__all__ = [
    "InversePwaModel",
    "LocationMatrices",
    "Partition",
    "PwaError",
    "PwaModel",
    "StableInversionConfig",
    "Trajectory",
    "check_assumptions",
    "global_relative_degree",
    "invert",
    "simulate",
    "stable_inverse",
]
