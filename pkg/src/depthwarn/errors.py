"""Exception taxonomy shared across the package.

CLI exit-code mapping: ConfigError/ScenarioError and bad usage exit 2,
ProtocolError/ArchiveError exit 3.
"""


class DepthwarnError(Exception):
    """Base class for all package errors."""


class DimensionError(DepthwarnError):
    """Array shapes do not conform to the operation's contract."""


class NumericError(DepthwarnError):
    """Non-finite values where finite ones are required."""


class StructuralError(DepthwarnError):
    """Graph structure violates an operation precondition."""


class EmptyGraphError(DepthwarnError):
    """An operation that needs at least one valid node got none."""


class ArchiveError(DepthwarnError):
    """Feature archive is missing, malformed, or violates invariants."""


class ScenarioError(DepthwarnError):
    """Synthetic scenario spec is infeasible or malformed."""


class ProtocolError(DepthwarnError):
    """Evaluation protocol precondition violated (e.g. single-class input)."""


class ConfigError(DepthwarnError):
    """Run configuration is missing, unknown, or out of range."""


class TrainingDiverged(DepthwarnError):
    """Training loss became non-finite."""
