from __future__ import annotations


class NetscalingError(Exception):
    """Base class for all errors raised by this package."""


class ConservationError(NetscalingError, ValueError):
    """A flux network violates Kirchhoff balance or mass balance."""


class GlueError(NetscalingError, ValueError):
    """Two networks cannot be composed in series at the requested nodes."""

    def __init__(self, first_node: int, second_node: int, reason: str):
        self.first_node = int(first_node)
        self.second_node = int(second_node)
        self.reason = reason
        super().__init__(f"cannot glue sink {first_node} to source {second_node}: {reason}")


class ModelError(NetscalingError, ValueError):
    """An operation was requested for a transport model that does not support it."""


class AdmissibilityError(NetscalingError, ValueError):
    """Parameters lie outside the range where a construction is defined."""

    def __init__(self, condition: str, detail: str = ""):
        self.condition = condition
        msg = f"admissibility violated: {condition}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class InfeasiblePlanError(NetscalingError, ValueError):
    """The layer schedule fails K >= 1, H <= 1/4 or alpha > 0."""


class BudgetExceededError(NetscalingError, RuntimeError):
    """Explicit instantiation would create more cells than allowed."""
