"""Exception types shared across the engine."""
from __future__ import annotations


class ArmCollectError(Exception):
    """Base class for all engine errors."""


class ConfigError(ArmCollectError):
    """A chain or scene definition file failed strict validation."""


class DimensionMismatch(ArmCollectError):
    """A joint vector does not match the chain's joint count."""


class NotConverged(ArmCollectError):
    """IK ran out of iterations. Carries the best configuration seen."""

    def __init__(self, best_q, residual_pos: float, residual_ori: float, trace, iters: int):
        super().__init__(
            f"IK did not converge after {iters} iterations "
            f"(pos residual {residual_pos:.3e} m, ori residual {residual_ori:.3e} rad)"
        )
        self.best_q = best_q
        self.residual_pos = residual_pos
        self.residual_ori = residual_ori
        self.trace = trace
        self.iters = iters


class InvalidState(ArmCollectError):
    """Operation not allowed in the session's current state."""


class GateClosed(ArmCollectError):
    """Control gate rejected the command. Carries the gate reason."""

    def __init__(self, reason):
        super().__init__(f"controls disabled: {reason.name}")
        self.reason = reason


class IkFailed(ArmCollectError):
    """Waypoint IK did not converge; the session was left unchanged."""


class NothingToRevert(ArmCollectError):
    """Revert requested with no waypoints on the path history."""


class EmptyStream(ArmCollectError):
    """Follow mode received no usable samples; session unchanged."""


class PointBelowPlane(ArmCollectError):
    """Shadow projection requested for a point below the table plane."""


class NoWaypoints(ArmCollectError):
    """Replay/capture requested on a session without waypoints."""


class CorruptRecord(ArmCollectError):
    """A demonstration record failed checksum or structural validation."""


class UnsupportedVersion(ArmCollectError):
    """The record's format version is not recognized."""


class IoFailure(ArmCollectError):
    """Filesystem error while reading or writing a record."""


class ProtocolError(ArmCollectError):
    """Malformed or out-of-order envelope on the wire."""
