"""Exception hierarchy. Each class carries the CLI exit code for its category."""


class ActiveFlowError(Exception):
    exit_code = 1


class ConfigurationError(ActiveFlowError):
    exit_code = 2


class DomainError(ActiveFlowError, ValueError):
    exit_code = 3


class ShapeError(ActiveFlowError, ValueError):
    exit_code = 3


class NumericalError(ActiveFlowError, ArithmeticError):
    exit_code = 4


class SingularityError(NumericalError):
    pass


class DegenerateBatchError(NumericalError):
    pass


class RoundAbort(ActiveFlowError):
    exit_code = 5
