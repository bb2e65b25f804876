"""Exception types shared across the package."""


class HaargpError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(HaargpError):
    """Operands have incompatible or invalid dimensions."""


class ContractViolation(HaargpError):
    """An input fails a constructor invariant (hermiticity, trace, PSD, unitarity)."""


class ResourceLimitError(HaargpError):
    """A requested object exceeds the configured dense-matrix resource caps."""


class SingularGramError(HaargpError):
    """Gram matrix on the symmetric group is singular (d < p)."""

    def __init__(self, msg, condition_number=None):
        super().__init__(msg)
        self.condition_number = condition_number


class ConditioningError(HaargpError):
    """A linear solve failed or the system is numerically singular.

    Carries the condition number estimate so callers (and the CLI) can
    report it.
    """

    def __init__(self, msg, condition_number=None):
        super().__init__(msg)
        self.condition_number = condition_number


class UnsupportedOrderError(HaargpError):
    """Moment order outside the implemented range (p > 4)."""


class TrainingDivergence(HaargpError):
    """Gradient descent loss blew past the divergence guard."""


class ConfigError(HaargpError):
    """Bad experiment or CLI configuration."""


class SchemaError(ConfigError):
    """CSV input does not match the expected schema."""

    def __init__(self, msg, row=None, col=None):
        super().__init__(msg)
        self.row = row
        self.col = col
