"""Exception hierarchy shared by every module of the package."""


class MechanicsError(Exception):
    """Base class. ``time`` is filled in by the integrators when an error
    escapes a right-hand side evaluation."""

    time = None

    def __str__(self):
        msg = super().__str__()
        if self.time is not None:
            msg = f"{msg} (at t={self.time:.17g})"
        return msg


class ExprSyntaxError(MechanicsError, ValueError):
    """Malformed expression text; ``position`` is 1-based."""

    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownVariable(MechanicsError, NameError):
    def __init__(self, name, position=None):
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"unknown variable {name!r}{where}")
        self.name = name
        self.position = position


class DomainError(MechanicsError, ArithmeticError):
    pass


class PreconditionViolated(MechanicsError):
    pass


class GridTooCoarse(MechanicsError):
    pass


class SingularLegendre(MechanicsError):
    pass


class NoConvergence(MechanicsError):
    pass


class NonFiniteState(MechanicsError):
    pass


class DegenerateConstraint(MechanicsError):
    pass


class DegenerateVaconomic(MechanicsError):
    pass


class DegenerateFrame(MechanicsError):
    pass


class ModelParseError(MechanicsError):
    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class DimensionMismatch(MechanicsError):
    pass


class InvariantViolation(MechanicsError):
    pass
