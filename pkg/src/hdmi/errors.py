"""Exception hierarchy shared across the package."""


class HDMIError(Exception):
    """Base class for all package errors."""


class CohortParseError(HDMIError, ValueError):
    """A cohort file could not be parsed; carries the offending row and column."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if column is not None:
            where.append(f"column {column!r}")
        if row is not None:
            where.append(f"row {row}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ConfigError(HDMIError, ValueError):
    pass


class FitError(HDMIError, RuntimeError):
    """A model could not be fitted (no events, no variation in response, ...)."""


class SingularityError(FitError):
    def __init__(self, message, columns=()):
        self.columns = tuple(columns)
        if self.columns:
            message = f"{message}: {', '.join(map(str, self.columns))}"
        super().__init__(message)


class DivergenceError(FitError):
    """Coefficients escaped to infinity (monotone likelihood / separation)."""


class SeparationError(FitError):
    pass


class CalibrationError(HDMIError, ValueError):
    def __init__(self, message, achievable=None):
        self.achievable = achievable
        if achievable is not None:
            message = f"{message}; achievable range is ({achievable[0]:.6g}, {achievable[1]:.6g})"
        super().__init__(message)


class InfeasibleSpecError(ConfigError):
    def __init__(self, message, quantile=None):
        self.quantile = quantile
        super().__init__(message)


class DegenerateScoreError(HDMIError, ValueError):
    pass


class MatchingError(HDMIError, RuntimeError):
    pass


class ImputationError(HDMIError, RuntimeError):
    pass
