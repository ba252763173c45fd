"""Exception hierarchy for the control lab."""

from typing import Optional


class LabError(Exception):
    """Base class for every error raised by the lab"""

    category = "numerical"


class DimensionError(LabError, ValueError):
    """Shapes of matrices/vectors do not agree"""

    category = "config"


class NonFiniteValueError(LabError, ValueError):
    """A NaN or infinity reached a place that requires finite numbers"""


class ConvergenceError(LabError, RuntimeError):
    """An iterative method stopped before meeting its tolerance"""

    def __init__(self, message: str, last_iterate=None, residual: Optional[float] = None, iterations: int = 0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.iterations = iterations


class ControllabilityError(LabError, ValueError):
    """(A, B) is not controllable or no stabilizing initial gain exists"""


class NotPositiveDefiniteError(LabError, ArithmeticError):
    """A matrix that must be positive definite is not"""


class PlantDivergenceError(LabError, ArithmeticError):
    """Plant integration produced a non-finite state"""


class AdaptationDivergenceError(LabError, ArithmeticError):
    """Adaptive weight estimate became non-finite"""


class ErrorBallHypothesisError(LabError, ArithmeticError):
    """c1*lambda - c2*c3*rho*L_R <= 0, the error-ball bound does not apply"""

    def __init__(self, message: str, denominator: float):
        super().__init__(message)
        self.denominator = denominator


class EstimatorUnavailableError(LabError, ValueError):
    """A metric needs residual estimates the controller does not produce"""

    category = "config"


class GpFitError(LabError, ArithmeticError):
    """Cholesky factorization of the GP kernel matrix failed"""


class CheckpointFormatError(LabError, ValueError):
    """Network checkpoint file is malformed or of an unknown version"""

    category = "io"
