"""Exception types shared across the library."""


class GraspLabError(Exception):
    """Base class for all library errors."""


class ShapeError(GraspLabError, ValueError):
    """Operands have incompatible or invalid shapes."""


class DomainError(GraspLabError, ValueError):
    """A numeric argument is outside the operation's domain."""


class ParameterError(GraspLabError, ValueError):
    """An invalid configuration parameter (bad K, bad dims, ...)."""


class ModeError(GraspLabError, ValueError):
    """An operation was called on a layer in the wrong mode."""


class ContractError(GraspLabError, ValueError):
    """A caller violated an API contract (e.g. backward on a non-scalar)."""


class ConfigError(GraspLabError, ValueError):
    """A run configuration is invalid; message names the offending field."""


class CheckpointError(GraspLabError, RuntimeError):
    """A checkpoint file is unreadable, corrupt, or inconsistent."""


class TrainingDivergedError(GraspLabError, RuntimeError):
    """Training produced a non-finite loss; model restored to last good state."""
