"""qkzb-lab: elliptic weight functions, dynamical R-matrices and qKZB equations."""

__version__ = "0.1.0"

from .types import ModularParams, SeriesConfig, SystemParams, WeightIndex

__all__ = [
    "ModularParams",
    "SeriesConfig",
    "SystemParams",
    "WeightIndex",
    "__version__",
]
