"""Simulation toolkit for log-averaged limit theorems of stabilizing Poisson functionals."""

from .domain import (Ball, Boundary, Box, HalfspacePolytope, PointConfiguration, WholeRegion,
                     restrict_scaled, sample_master, sample_poisson)
from .errors import (AscltError, ConfigError, CoverageError, DegenerateModelError, DependencyError,
                     DomainError, FitError, PreconditionError, UnsupportedError)
from .functionals import (CliqueCount, Constant, Count, Exact2D, KnnEdgeLength, MonteCarlo,
                          VoronoiVolume, evaluate_total)
from .rng import RngStream

__version__ = "0.1.0"
