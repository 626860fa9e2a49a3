class E2CError(Exception):
    pass


class ConfigError(E2CError, ValueError):
    """Invalid or inconsistent configuration."""


class UsageError(E2CError, RuntimeError):
    """API called out of order or with mismatched shapes."""


class NumericError(E2CError, ArithmeticError):
    """Non-finite values where finite ones are required."""
