"""Exception hierarchy for csgd_lab."""

from __future__ import annotations


class CsgdLabError(Exception):
    """Base class for all csgd_lab errors."""


class InvalidSpecError(CsgdLabError):
    """A problem or compression specification violates its constraints."""


class DimensionMismatchError(CsgdLabError):
    """Vector dimensions do not agree."""


class DegenerateInputError(CsgdLabError):
    """An input outside the operation's domain, e.g. a zero gradient."""


class SearchFailedError(CsgdLabError):
    """Backtracking exhausted its budget without satisfying the stop test.

    Carries the last candidate step so callers can diagnose whether the
    curvature scale or the backtracking budget is at fault.
    """

    def __init__(self, message: str, last_alpha: float, backtracks: int):
        super().__init__(message)
        self.last_alpha = last_alpha
        self.backtracks = backtracks


class EstimationFailedError(CsgdLabError):
    """A sampled estimate could not be formed (e.g. all gradients vanish)."""


class InfeasibleError(CsgdLabError):
    """A convex program instance has an empty feasible set."""


class ConstructionFailedError(CsgdLabError):
    """A constructive existence argument found no witness numerically."""


class ProtocolError(CsgdLabError):
    """Distributed round received malformed, missing, or duplicate messages."""


class VerificationError(CsgdLabError):
    """An algebraic identity that must hold at runtime was violated."""


class ConfigError(CsgdLabError):
    """An experiment configuration file could not be parsed or validated."""


class RunHaltedError(CsgdLabError):
    """An optimization run stopped before its horizon.

    The partial trace is attached so diagnostics survive the failure.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
