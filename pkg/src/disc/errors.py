class ConfigError(ValueError):
    """Invalid or inconsistent pipeline configuration."""


class ShapeError(ValueError):
    """Tensor extents do not agree with an operation's contract."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared where finite values are required."""
