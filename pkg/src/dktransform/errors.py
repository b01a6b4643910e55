"""Exception hierarchy."""


class DKError(Exception):
    """Base class for all errors raised by this package."""


class SingularMetric(DKError):
    pass


class DegenerateFrame(DKError):
    pass


class NonPositiveTimeScale(DKError):
    pass


class UnsupportedDimension(DKError):
    pass


class DomainExit(DKError):
    """Trajectory reached the boundary of the declared domain box."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class StepFailure(DKError):
    pass


class EnergyMismatch(DKError):
    pass


class NoBoundState(DKError):
    pass


class SpectrumOverlap(DKError):
    pass


class SingularLinearSolve(DKError):
    pass


class ParseError(DKError):
    """Malformed expression or scenario document."""

    def __init__(self, message, *, field=None, line=None, column=None):
        where = []
        if field is not None:
            where.append(f"field {field!r}")
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field = field
        self.line = line
        self.column = column


class ValidationError(DKError):
    """Scenario violates one or more preconditions; ``errors`` lists all of them."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
