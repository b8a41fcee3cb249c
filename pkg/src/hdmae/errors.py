"""Exception types shared across the package.

ConfigError maps to CLI exit code 2 (usage/config problems); everything else
is a runtime failure (exit code 1).
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """Invalid configuration value or malformed run config."""


class ContractError(RuntimeError):
    """A documented precondition of an operation was violated."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf; the message names the operation."""


class FormatError(ValueError):
    """Malformed external file (PGM image, region file, ...)."""


class CheckpointError(FormatError):
    """Corrupt, truncated, or version-mismatched checkpoint file."""
