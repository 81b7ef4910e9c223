"""Exception hierarchy shared by all modules."""


class SempiError(Exception):
    """Base class for all package errors."""


class ParameterError(SempiError, ValueError):
    pass


class ParseError(SempiError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TaggingError(SempiError):
    pass


class TopologyError(SempiError):
    def __init__(self, message, element=None):
        self.element = element
        super().__init__(message)


class GeometryError(SempiError):
    pass


class DomainError(SempiError, ValueError):
    pass


class NonConvergenceError(SempiError):
    """Iterative solve failed; carries the best iterate and the residual history."""

    def __init__(self, message, best=None, history=None):
        self.best = best
        self.history = list(history) if history is not None else []
        super().__init__(message)


class ParityError(SempiError):
    pass


class SpectralInputError(SempiError):
    pass


class SchedulingError(SempiError):
    pass


class DivisionGuardError(SempiError):
    pass


class StatisticsError(SempiError):
    pass


class ConfigError(SempiError):
    """Aggregated configuration/schema violations."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class SimulationError(SempiError):
    """Numerical failure during a run, tagged with the problem identity."""

    def __init__(self, message, context=None):
        self.context = dict(context or {})
        if self.context:
            tag = ", ".join(f"{k}={v}" for k, v in self.context.items())
            message = f"{message} [{tag}]"
        super().__init__(message)


class TruncationWarning(UserWarning):
    def __init__(self, message, decay_ratio=None):
        self.decay_ratio = decay_ratio
        super().__init__(message)


class SingularityWarning(UserWarning):
    pass
