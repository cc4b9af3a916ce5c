"""Nonlinear least squares with random-weighting ("recycling") resampling."""

from .errors import (
    DegenerateWeights,
    DomainError,
    EmptySample,
    MissingDataMarker,
    NonPositiveVariance,
    ParseError,
    RecycleError,
    SingularNormalEquations,
    TooFewReplicates,
)
from .models import CHWIRUT1, MODEL1, MODEL2, Dataset, RegressionModel, get_model, register_model
from .recycler import (
    CiResult,
    CoverageReport,
    RecycleRun,
    confidence_interval,
    coverage_study,
    run_recycle,
    sampling_distribution_sim,
)
from .weights import RngStream, WeightScheme, draw_weights, parse_scheme
from .wls_solver import FitResult, SolverConfig, fit

__version__ = "0.1.0"
