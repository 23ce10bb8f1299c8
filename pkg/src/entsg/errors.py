"""Exception hierarchy shared by the solver, the time stepper and the CLI."""


class EntsgError(Exception):
    """Base class for every error raised by this package."""


# measures
class MeasureError(EntsgError, ValueError):
    pass


class DimensionMismatch(MeasureError):
    pass


class NegativeWeight(MeasureError):
    pass


class BadNormalization(MeasureError):
    pass


class MapProducedNonFinite(MeasureError):
    pass


class AxisOutOfRange(MeasureError):
    pass


# solvers
class SolverError(EntsgError):
    pass


class EpsilonNonPositive(SolverError, ValueError):
    pass


class NotConverged(SolverError):
    """Sinkhorn hit ``max_iter`` before reaching the requested tolerance.

    The last iterate is kept on ``solution`` so callers can inspect it.
    """

    def __init__(self, message, marginal_error=float("nan"), iterations=0,
                 solution=None, step=None):
        super().__init__(message)
        self.marginal_error = marginal_error
        self.iterations = iterations
        self.solution = solution
        self.step = step


class InstanceTooLarge(SolverError, ValueError):
    pass


class Degenerate(SolverError):
    pass


class NonFiniteUpdate(SolverError):
    pass


class SupportBoundViolated(SolverError):
    def __init__(self, message, step=None, radius=None, bound=None,
                 partial=None):
        super().__init__(message)
        self.step = step
        self.radius = radius
        self.bound = bound
        self.partial = partial


# configuration and files
class ConfigError(EntsgError, ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class ValidationError(ConfigError):
    def __init__(self, field, constraint):
        super().__init__(f"{field}: {constraint}")
        self.field = field
        self.constraint = constraint


class UnknownKey(ConfigError):
    def __init__(self, key, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown key {key!r}{where}")
        self.key = key
        self.line = line


class FormatError(EntsgError, OSError):
    pass


class FormatVersionMismatch(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass
