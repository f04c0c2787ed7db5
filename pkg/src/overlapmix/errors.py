"""Exception hierarchy. Each branch maps to one CLI exit code."""


class OverlapmixError(Exception):
    """Base class for all library errors."""


class UsageError(OverlapmixError):
    """Bad command line, config file, or argument combination. Exit code 1."""


class DataValidationError(OverlapmixError):
    """Malformed or inconsistent input data. Exit code 2."""


class SizeLimitError(DataValidationError):
    """A requested size would blow up combinatorially (e.g. K > 12)."""


class NumericalError(OverlapmixError):
    """Numerical failure: non-SPD matrix, non-finite likelihood, degenerate model. Exit code 3."""


class ConvergenceError(OverlapmixError):
    """An iterative procedure failed to converge where convergence is required. Exit code 4."""


class EmptyComponentError(OverlapmixError):
    """A mixture component lost all posterior weight; callers prune instead of crashing."""


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3
EXIT_NONCONVERGENCE = 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, DataValidationError):
        return EXIT_DATA
    if isinstance(exc, ConvergenceError):
        return EXIT_NONCONVERGENCE
    if isinstance(exc, OverlapmixError):
        return EXIT_NUMERICAL
    return EXIT_NUMERICAL
