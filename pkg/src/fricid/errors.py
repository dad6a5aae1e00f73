"""Exception hierarchy shared by all modules.

The CLI maps each class to a process exit code (see ``fricid.cli``).
"""


class FricIdError(Exception):
    """Base class for all package errors."""


class ParameterError(FricIdError, ValueError):
    """Physically invalid or inconsistent parameters."""


class ShapeError(FricIdError, ValueError):
    """Array dimensions do not match the declared layout."""


class NumericalError(FricIdError, ArithmeticError):
    """Non-finite values or ill-conditioned linear algebra."""


class DivergenceError(NumericalError):
    """An integrator stage produced non-finite values."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class DegeneracyError(NumericalError):
    """All particle weights collapsed at some time step."""

    def __init__(self, message, t=None, sequence=None):
        super().__init__(message)
        self.t = t
        self.sequence = sequence


class SamplingError(FricIdError):
    """Sampled regressor data is rank deficient or too small."""


class ConvergenceError(NumericalError):
    """An iterative procedure did not settle within its budget."""


class FeasibilityError(FricIdError):
    """No trajectory satisfying the motion limits was found."""


class FormatError(FricIdError):
    """Corrupt, truncated or foreign file contents."""


class ConfigError(FricIdError, ValueError):
    """Invalid or incomplete run configuration."""
