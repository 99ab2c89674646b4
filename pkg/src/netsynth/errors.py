"""Exception types shared across the package."""


class NetsynthError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(NetsynthError):
    """Input vector length does not match the network's input dimension."""


class ArityMismatch(NetsynthError):
    """Composition interfaces (outputs vs. inputs) do not line up."""


class UnsupportedPrecision(NetsynthError):
    """The requested scalar mode cannot evaluate this network exactly
    (e.g. rational mode on a sine unit)."""


class GuardMarginError(NetsynthError):
    """A threshold-gate ramp width violates the guard margin required for
    exact digit extraction."""


class EnclosureError(NetsynthError):
    """Certified bisection failed to produce an enclosure at the requested
    precision."""


class SmoothnessPromiseViolation(NetsynthError):
    """An oracle produced values incompatible with its declared smoothness
    ball membership (a correction digit would exceed its budget)."""


class InfeasibleBudget(NetsynthError):
    """A build request cannot be realized (e.g. scale would round to < 1)."""


class WidthBudgetError(NetsynthError):
    """Internal assertion: a fixed-width construction tried to exceed its
    channel budget.  Must never fire."""
