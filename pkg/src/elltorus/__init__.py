"""Construction of elliptic lower-dimensional invariant tori in planetary Hamiltonians."""
from .series import (ClassTag, Dimensions, PhasePoint, PoissonSeries, TermKey, TruncationLimits,
                     evaluate, lie_transform, poisson_bracket, reorder_fourier, series_norm)

__all__ = ["ClassTag", "Dimensions", "PhasePoint", "PoissonSeries", "TermKey", "TruncationLimits",
           "evaluate", "lie_transform", "poisson_bracket", "reorder_fourier", "series_norm"]
__version__ = "0.1.0"
