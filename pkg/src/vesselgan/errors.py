"""Exception hierarchy shared by every vesselgan module."""


class VesselGanError(Exception):
    """Base class for all library errors."""


class ShapeError(VesselGanError, ValueError):
    """Operand shapes violate an operation's contract."""


class ConfigError(VesselGanError, ValueError):
    """A configuration value is invalid or inconsistent."""


class DomainError(VesselGanError, ValueError):
    """A numeric argument lies outside an operation's domain."""


class GraphError(VesselGanError, RuntimeError):
    """Misuse of the autodiff graph (non-scalar backward, re-used tape, leaked linkage)."""


class DataError(VesselGanError, IOError):
    """Input data is missing, malformed or inconsistent."""


class NetpbmError(DataError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(DataError):
    """Checkpoint file is corrupt, truncated or belongs to another configuration."""


class NumericAbort(VesselGanError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, diagnostic_path=None, last_good=None):
        super().__init__(message)
        self.diagnostic_path = diagnostic_path
        self.last_good = last_good
