"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A configuration value is invalid (bad extent, kernel size, key...)."""


class ContractError(ValueError):
    """A call violates an operation's precondition."""
