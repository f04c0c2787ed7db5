"""Overlapping-cluster mixtures of sparse multivariate regressions."""

from .core import (
    Dataset,
    ModelParams,
    PenaltyConfig,
    Responsibilities,
    log_likelihood,
    mvn_logpdf,
    pattern_mean,
    penalized_log_likelihood,
    penalty_value,
)
from .errors import (
    ConvergenceError,
    DataValidationError,
    NumericalError,
    OverlapmixError,
    SizeLimitError,
    UsageError,
)
from .patterns import MAX_K, OverlapPattern, PatternSet, enumerate_patterns

__version__ = "0.1.0"

__all__ = [
    "MAX_K",
    "ConvergenceError",
    "Dataset",
    "DataValidationError",
    "ModelParams",
    "NumericalError",
    "OverlapPattern",
    "OverlapmixError",
    "PatternSet",
    "PenaltyConfig",
    "Responsibilities",
    "SizeLimitError",
    "UsageError",
    "enumerate_patterns",
    "log_likelihood",
    "mvn_logpdf",
    "pattern_mean",
    "penalized_log_likelihood",
    "penalty_value",
    "__version__",
]
