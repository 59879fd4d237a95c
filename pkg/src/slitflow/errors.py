"""Exception hierarchy. Messages name the module and the failed invariant."""


class SlitflowError(Exception):
    """Base class for all package errors."""


class ValidationError(SlitflowError, ValueError):
    """Input violates a documented precondition (CLI exit code 1)."""


class NumericalError(SlitflowError, ArithmeticError):
    """A computation failed to meet its tolerance (CLI exit code 2)."""


class UnconvergedError(NumericalError):
    pass


class DegenerateGeometryError(NumericalError):
    pass


class PoleError(NumericalError, ValueError):
    pass


class AmbiguousSideError(SlitflowError, ValueError):
    pass


class StepRejectedError(NumericalError):
    pass


class StiffnessError(NumericalError):
    pass
