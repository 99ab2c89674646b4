"""End-to-end network constructors for each approximation mode."""

from .common import deep_scales, gadget_eps_for
from .deep import build_deep_phase, validate_deep_rate
from .shallow import build_shallow

__all__ = [
    "build_shallow",
    "build_deep_phase",
    "validate_deep_rate",
    "deep_scales",
    "gadget_eps_for",
]
