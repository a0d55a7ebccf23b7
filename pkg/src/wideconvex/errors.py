"""Exception hierarchy.

Two families: :class:`ValidationError` for bad inputs (caught by the CLI
and mapped to exit code 1) and :class:`ComputationError` for failures that
happen while computing (exit code 2).
"""


class WideConvexError(Exception):
    pass


class ValidationError(WideConvexError, ValueError):
    pass


class ComputationError(WideConvexError, ArithmeticError):
    pass


# geometry
class UnsupportedDimension(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class PointOutsideHull(ValidationError):
    def __init__(self, margin, message=None):
        self.margin = float(margin)
        super().__init__(message or f"point lies outside the hull by {self.margin:.3g}")


class CapacityExceeded(ComputationError):
    def __init__(self, estimate, cap):
        self.estimate = estimate
        self.cap = cap
        super().__init__(
            f"exact Minkowski enumeration needs ~{estimate:.3g} points, cap is {cap:.3g}"
        )


# epigraph
class NonFiniteValue(ComputationError):
    def __init__(self, node, value):
        self.node = node
        self.value = value
        super().__init__(f"non-finite value {value!r} at node {node!r}")


class CapTooLow(ValidationError):
    def __init__(self, cap, max_value):
        self.cap = cap
        self.max_value = max_value
        super().__init__(f"cap {cap!r} is not above max(q) = {max_value!r}")


class DegenerateFit(ComputationError):
    pass


# kernel
class AlphaOutOfRange(ValidationError):
    def __init__(self, alpha):
        self.alpha = alpha
        super().__init__(f"alpha must lie in (0, 1), got {alpha!r}")


class CesaroNotConverged(ComputationError):
    def __init__(self, full, half):
        self.full = full
        self.half = half
        super().__init__(
            f"Cesaro means not converged: window N gives {full!r}, N/2 gives {half!r}"
        )


# network
class UnknownFamily(ValidationError):
    pass


class ParameterOutOfDomain(ValidationError):
    def __init__(self, index, beta):
        self.index = index
        self.beta = beta
        super().__init__(f"parameter of unit {index} lies outside the domain: {beta!r}")


class IndexOutOfRange(ValidationError, IndexError):
    pass


# minimize
class EmptyArgmin(ValidationError):
    pass


class SweepCellError(ComputationError):
    def __init__(self, cell, cause):
        self.cell = cell
        self.cause = cause
        super().__init__(f"sweep cell {cell!r} failed: {cause}")


# sgd
class NotRobbinsMonro(ValidationError):
    def __init__(self, gamma, reason):
        self.gamma = gamma
        super().__init__(f"gamma={gamma!r} violates Robbins-Monro: {reason}")


class NonFiniteIterate(ComputationError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite iterate at step {step}")


class InsufficientTrajectories(ValidationError):
    pass


# cli
class ParseError(ValidationError):
    def __init__(self, lineno, line):
        self.lineno = lineno
        self.line = line
        super().__init__(f"line {lineno}: cannot parse {line!r} (expected 'key = value')")


class UnknownKey(ValidationError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"unknown config key {key!r}")
