"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Raised when array shapes do not line up."""


class NumericalError(ArithmeticError):
    """Raised when a loss, gradient or parameter becomes non-finite."""


class ConfigError(ValueError):
    """Raised for invalid configuration or usage."""
