"""Simulation of RIS-assisted cell-free massive MIMO under channel aging and EMI."""

__version__ = "0.1.0"

from .config import ConfigError, SystemConfig, default_profile, small_profile  # noqa: E402
from .channel import Drop, draw_drop, make_drop  # noqa: E402
from .estimation import estimation_statistics, nmse  # noqa: E402
from .pipeline import DropResult, evaluate_drop  # noqa: E402

__all__ = [
    "ConfigError", "SystemConfig", "default_profile", "small_profile",
    "Drop", "draw_drop", "make_drop", "estimation_statistics", "nmse",
    "DropResult", "evaluate_drop", "__version__",
]
