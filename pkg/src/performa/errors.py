"""Exception types shared across the package.

Config/data problems (exit code 2 at the CLI) are kept distinct from
numeric-contract violations (exit code 1).
"""


class ConfigError(ValueError):
    """Invalid configuration: unknown columns, bad grid, unparsable file."""


class DataError(ValueError):
    """Malformed input data (unparseable cell, empty result, ...)."""


class ShapeError(ValueError):
    """Dimension mismatch between parameters and inputs."""


class DomainError(ValueError):
    """A value left its contractual domain (e.g. prediction outside [0, 1-delta])."""


class SupportError(ValueError):
    """Two distributions that must share an atom support do not."""


class DegenerateNormError(ValueError):
    """A norm ratio was requested for predictors that coincide on the support."""


class DivergenceError(RuntimeError):
    """The inner optimizer produced a non-finite risk (learning rate too large)."""


class ConstructionError(ValueError):
    """The closed-form counterexample update left its valid domain."""
