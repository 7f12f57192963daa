"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid scenario configuration or user-supplied parameters."""


class NumericalError(ArithmeticError):
    """A numerical precondition failed (non-PD matrix, singular dynamics...)."""


class NotPositiveDefiniteError(NumericalError):
    pass


class DynamicsNotInvertibleError(NumericalError):
    pass


class IncompatibleMeasurementError(NumericalError):
    pass
