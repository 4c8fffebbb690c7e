"""Exception types shared across the package."""


class MiqpError(Exception):
    """Base class for all package errors."""


class DimensionError(MiqpError, ValueError):
    """Array shapes do not agree with the problem dimensions."""


class IndefiniteError(MiqpError, ValueError):
    """The cost matrix has negative curvature beyond tolerance."""


class UnboundedIntegerError(MiqpError, ValueError):
    """An integer variable lacks finite bounds."""


class InfeasibleError(MiqpError):
    """The problem has no feasible point."""


class UnboundedError(MiqpError):
    """The objective is unbounded below on the feasible set."""


class NoIncumbentWithinBudget(MiqpError):
    """Branch-and-bound stopped on a budget before finding a feasible point.

    The partial :class:`~hybrid_miqp.bnb.SolverResult` is attached as
    ``result`` so callers can inspect the bound and telemetry.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class FlowDomainError(MiqpError, ValueError):
    """A flow was requested outside the timer interval [0, dt]."""


class QuadratureError(MiqpError, ArithmeticError):
    """Quadrature self-check disagreed beyond tolerance."""


class HybridContractError(MiqpError, RuntimeError):
    """Jump/flow called outside its jump set or flow set."""


class ControllerStarved(MiqpError):
    """The solver returned no incumbent and the policy is to abort."""

    def __init__(self, message, trajectory=None, sample=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.sample = sample


class ConfigError(MiqpError, ValueError):
    """Scenario configuration is malformed or violates a bound."""

    def __init__(self, message, field=None, line=None):
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        full = f"{message} ({', '.join(where)})" if where else message
        super().__init__(full)
        self.field = field
        self.line = line
