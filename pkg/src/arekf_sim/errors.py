"""Exception hierarchy shared by the simulation package."""


class ArekfSimError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ArekfSimError, ValueError):
    """Invalid parameters, dimensions or configuration keys."""


class DynamicsError(ArekfSimError, ArithmeticError):
    """Singular or non positive-definite inertia matrix."""


class NumericError(ArekfSimError, ArithmeticError):
    """A mapping returned non-finite values."""


class FilterDivergenceError(ArekfSimError, ArithmeticError):
    """Filter produced non-finite values or a singular innovation covariance."""


class TuningError(ArekfSimError, ValueError):
    """Robust filter could not produce a positive-definite prior covariance."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class ControllerError(ArekfSimError, ArithmeticError):
    """Controller produced a non-finite torque."""


class TheoremInapplicableError(ArekfSimError, ValueError):
    """Settling bound requested with k_d <= delta."""


class SimulationBlowUp(ArekfSimError, ArithmeticError):
    """Plant state became non-finite or exceeded the divergence cap."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step
