"""Convexification diagnostics for wide kernel-weighted shallow networks."""

__version__ = "0.1.0"

from . import epigraph, geometry, kernel, minimize, network, sgd  # noqa: E402,F401
from .errors import ComputationError, ValidationError, WideConvexError  # noqa: E402,F401
