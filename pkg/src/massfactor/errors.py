"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes or lengths of inputs do not match what an operation expects."""


class DomainError(ValueError):
    """A numeric input lies outside the mathematical domain of an operation."""


class NumericError(ValueError):
    """A non-finite value appeared where a finite one is required."""


class ConfigError(ValueError):
    """A configuration object violates its invariants."""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class DegenerateInputError(ValueError):
    """Input is formally valid but too degenerate to process (e.g. too few pixels)."""


class InputError(ValueError):
    """A sample is missing data that the current configuration requires."""


class UnknownMaterialError(LookupError):
    """A material id or text has no usable vocabulary entry."""
