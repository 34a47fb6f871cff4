class ShapeError(ValueError):
    """Raised when tensor dimensions are incompatible with an operation."""


class InvalidConfigError(ValueError):
    """Raised when a hyperparameter combination cannot be realized."""
