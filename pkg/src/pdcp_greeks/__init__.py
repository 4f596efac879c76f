"""American option values and Greeks from penalized time stepping of the PDCP."""

from .experiments import (
    ErrorReport,
    ReferenceCache,
    RegionOfInterest,
    build_reference,
    convergence_sweep,
    estimate_order,
    roi_max_error,
)
from .greeks import greeks_1d, greeks_2d, greeks_for
from .grid import SpatialGrid, build_grid
from .market import PUT_1D, PUT_ON_AVERAGE_2D, InvalidParameterError, MarketParams1D, MarketParams2D
from .operator import DiscreteProblem, assemble_1d, assemble_2d
from .stepping import PenaltyConfig, StepperSpec, preset, solve_pdcp

__all__ = [
    "DiscreteProblem", "ErrorReport", "InvalidParameterError", "MarketParams1D", "MarketParams2D",
    "PUT_1D", "PUT_ON_AVERAGE_2D", "PenaltyConfig", "ReferenceCache", "RegionOfInterest",
    "SpatialGrid", "StepperSpec", "assemble_1d", "assemble_2d", "build_grid", "build_reference",
    "convergence_sweep", "estimate_order", "greeks_1d", "greeks_2d", "greeks_for", "preset",
    "roi_max_error", "solve_pdcp",
]
__version__ = "0.1.0"
