"""Exception hierarchy; the CLI maps each class to an exit code."""


class RhizohomError(Exception):
    exit_code = 1


class ConfigError(RhizohomError, ValueError):
    exit_code = 2


class GeometryError(RhizohomError, ValueError):
    exit_code = 2


class SolverError(RhizohomError, RuntimeError):
    """Linear or nonlinear non-convergence; carries the residual history."""

    exit_code = 3

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class TableRangeError(RhizohomError, ValueError):
    exit_code = 3


class PropertyFailure(RhizohomError, AssertionError):
    exit_code = 4


class AlignmentError(RhizohomError, ValueError):
    exit_code = 5
