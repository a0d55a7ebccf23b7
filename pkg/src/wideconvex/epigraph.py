"""
Sampled functions on a box, truncated epigraphs and convex minorants.

Functions are tabulated on a rectangular grid over a parameter box D. The
convex minorant is the lower convex envelope of the tabulated graph, read
back onto the same grid. :func:`verify_corollary` and
:func:`convexification_rate` compare Minkowski averages and hulls of
truncated epigraphs with the epigraph of the minorant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull

from . import geometry
from .errors import (
    CapTooLow,
    DegenerateFit,
    NonFiniteValue,
    UnsupportedDimension,
    ValidationError,
)
from .geometry import PointCloud

MAX_NODES_PER_AXIS = 10**4
VALUE_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class ParamBox:
    """Axis-aligned box ``[lower, upper]`` in R^p with a uniform grid.

    ``lower == upper`` on an axis is allowed and gives a single node there.
    """

    lower: np.ndarray
    upper: np.ndarray
    grid_step: float

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValidationError("lower and upper must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValidationError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValidationError(f"lower {lo} exceeds upper {hi}")
        step = float(self.grid_step)
        if not step > 0:
            raise ValidationError(f"grid_step must be positive, got {self.grid_step!r}")
        counts = []
        for a, b in zip(lo, hi):
            ratio = (b - a) / step
            count = int(round(ratio))
            if count > MAX_NODES_PER_AXIS:
                raise ValidationError(f"{count} intervals per axis exceeds {MAX_NODES_PER_AXIS}")
            if abs(ratio - count) > 1e-6:
                raise ValidationError(f"grid_step {step} does not divide the side [{a}, {b}]")
            counts.append(count)
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "grid_step", step)
        object.__setattr__(self, "_counts", tuple(counts))

    @classmethod
    def interval(cls, lower: float, upper: float, grid_step: float) -> "ParamBox":
        return cls(np.array([lower]), np.array([upper]), grid_step)

    @property
    def p(self) -> int:
        return len(self.lower)

    @property
    def shape(self):
        return tuple(c + 1 for c in self._counts)

    @property
    def axes(self) -> List[np.ndarray]:
        return [np.linspace(a, b, c + 1) for a, b, c in zip(self.lower, self.upper, self._counts)]

    @property
    def nodes(self) -> np.ndarray:
        """Grid nodes in row-major order, shape ``(n_nodes, p)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def contains(self, beta, tol: float = 1e-12) -> bool:
        beta = np.asarray(beta, dtype=float)
        return bool(np.all(beta >= self.lower - tol) and np.all(beta <= self.upper + tol))

    def project(self, beta) -> np.ndarray:
        return np.clip(beta, self.lower, self.upper)


@dataclass(frozen=True, eq=False)
class SampledFunction:
    domain: ParamBox
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if len(v) != self.domain.n_nodes:
            raise ValidationError(f"{len(v)} values for {self.domain.n_nodes} grid nodes")
        bad = np.flatnonzero(~np.isfinite(v))
        if len(bad):
            raise NonFiniteValue(tuple(self.domain.nodes[bad[0]]), v[bad[0]])
        if np.any(np.abs(v) >= VALUE_LIMIT):
            raise ValidationError(f"values must stay below {VALUE_LIMIT:g} in magnitude")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def grid(self) -> np.ndarray:
        return self.values.reshape(self.domain.shape)

    @property
    def nodes(self) -> np.ndarray:
        return self.domain.nodes

    def with_values(self, values) -> "SampledFunction":
        return SampledFunction(self.domain, values)


@dataclass(frozen=True, eq=False)
class TruncatedEpigraph:
    source: SampledFunction
    cap: float
    cloud: PointCloud
    delta: float

    @property
    def margin(self) -> float:
        return self.cap - float(self.source.values.max())


def sample_function(f: Callable, domain: ParamBox) -> SampledFunction:
    """Tabulate ``f`` on the grid of ``domain`` (row-major node order).

    For a one-dimensional box ``f`` receives a float, otherwise a length-p
    array.
    """
    nodes = domain.nodes
    values = np.empty(len(nodes))
    for k, node in enumerate(nodes):
        arg = float(node[0]) if domain.p == 1 else node.copy()
        value = float(f(arg))
        if not math.isfinite(value):
            raise NonFiniteValue(tuple(node), value)
        values[k] = value
    return SampledFunction(domain, values)


def default_cap(sf: SampledFunction, margin: float = 1.0) -> float:
    """Scale-aware cap level ``max q + margin * (max q - min q + 1)``."""
    hi, lo = float(sf.values.max()), float(sf.values.min())
    return hi + margin * (hi - lo + 1.0)


def truncated_epigraph(
    sf: SampledFunction, M: float, delta: float, snap: float = 0.0
) -> TruncatedEpigraph:
    """Columns ``{(beta, y) : q(beta) <= y <= M}`` over grid nodes, y on a delta grid.

    Each column is an arithmetic grid of pitch at most ``delta`` that
    contains both endpoints ``q(beta)`` and ``M``.
    """
    if not delta > 0:
        raise ValidationError(f"delta must be positive, got {delta!r}")
    top = float(sf.values.max())
    if not M >= top + 1e-9:
        raise CapTooLow(M, top)
    columns = []
    for node, q in zip(sf.nodes, sf.values):
        count = max(1, math.ceil((M - q) / delta - 1e-9))
        ys = np.linspace(q, M, count + 1)
        ys[-1] = M
        columns.append(np.column_stack([np.repeat(node[None, :], len(ys), axis=0), ys]))
    cloud = PointCloud(np.concatenate(columns), snap)
    return TruncatedEpigraph(sf, float(M), cloud, float(delta))


def _lower_chain(x: np.ndarray, y: np.ndarray):
    hx, hy = [], []
    for px, py in zip(x, y):
        while len(hx) >= 2 and (
            (hx[-1] - hx[-2]) * (py - hy[-2]) - (hy[-1] - hy[-2]) * (px - hx[-2]) <= 0
        ):
            hx.pop()
            hy.pop()
        hx.append(px)
        hy.append(py)
    return np.array(hx), np.array(hy)


def _minorant_1d(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if len(x) == 1:
        return y.copy()
    hx, hy = _lower_chain(x, y)
    return np.interp(x, hx, hy)


def _minorant_2d(nodes: np.ndarray, values: np.ndarray) -> np.ndarray:
    # An apex above the graph keeps the hull full-dimensional for planar data.
    apex_z = values.max() + (values.max() - values.min()) + 1.0
    apex = np.r_[nodes.mean(axis=0), apex_z]
    pts = np.vstack([np.column_stack([nodes, values]), apex])
    eq = ConvexHull(pts).equations
    lower = eq[eq[:, 2] < -1e-12]
    planes = -(nodes @ lower[:, :2].T + lower[:, 3]) / lower[:, 2]
    return planes.max(axis=1)


def convex_minorant(sf: SampledFunction) -> SampledFunction:
    """Largest grid function that is convex and lies below ``sf``.

    One-dimensional boxes use the lower hull of the graph; two-dimensional
    boxes use the lower facets of the 3-D hull of the graph.
    """
    p = sf.domain.p
    if p > 2:
        raise UnsupportedDimension(f"convex minorants need p <= 2, got {p}")
    shape = sf.domain.shape
    live = [k for k, s in enumerate(shape) if s > 1]
    if len(live) == 0:
        return sf.with_values(sf.values.copy())
    if len(live) == 1:
        x = sf.domain.axes[live[0]]
        out = _minorant_1d(x, sf.values)
    else:
        out = _minorant_2d(sf.nodes, sf.values)
    return sf.with_values(np.minimum(out, sf.values))


def is_grid_convex(sf: SampledFunction, tol: float = 1e-9) -> bool:
    """Nonnegative second differences along every grid line."""
    grid = sf.grid
    for axis in range(grid.ndim):
        if grid.shape[axis] >= 3 and np.diff(grid, n=2, axis=axis).min() < -tol:
            return False
    return True


def nonconvexity_gap(sf: SampledFunction) -> float:
    """Largest vertical gap between ``sf`` and its convex minorant."""
    return max(0.0, float(np.max(sf.values - convex_minorant(sf).values)))


@dataclass(frozen=True)
class CorollaryReport:
    distance: float
    tolerance: float
    passed: bool


def verify_corollary(sf: SampledFunction, M: float, delta: float) -> CorollaryReport:
    """Compare the hull of the truncated epigraph with the minorant's epigraph.

    The distance is taken between a delta-net of ``co(epi~(q))`` and the
    truncated epigraph cloud of ``q*``; it passes when it does not exceed
    ``3 * (delta + grid_step)``.
    """
    if sf.domain.p != 1:
        raise UnsupportedDimension("verify_corollary needs a one-dimensional box")
    epi = truncated_epigraph(sf, M, delta)
    hull_net = geometry.hull_dense_sample(geometry.convex_hull(epi.cloud), delta)
    minorant_epi = truncated_epigraph(convex_minorant(sf), M, delta)
    distance = geometry.hausdorff(hull_net, minorant_epi.cloud)
    tolerance = 3.0 * (delta + sf.domain.grid_step)
    return CorollaryReport(distance, tolerance, distance <= tolerance)


@dataclass
class RateReport:
    """Hausdorff gaps of Minkowski averages, with a log-log slope.

    ``slope`` is ``None`` when the fit is not applicable (nothing left to
    convexify above the net tolerance).
    """

    n: np.ndarray
    distance: np.ndarray
    slope: Optional[float]
    delta: float
    used: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def applicable(self) -> bool:
        return self.slope is not None


def fit_loglog_slope(n: Sequence[float], d: Sequence[float]) -> float:
    n, d = np.asarray(n, dtype=float), np.asarray(d, dtype=float)
    if len(n) < 3:
        raise DegenerateFit(f"need at least 3 usable points to fit a slope, got {len(n)}")
    slope, _ = np.polyfit(np.log(n), np.log(d), 1)
    return float(slope)


def minkowski_rate(
    cloud: PointCloud,
    target: PointCloud,
    n_max: int,
    delta: float,
    capacity: float = geometry.EXACT_CAPACITY,
    force_not_applicable: bool = False,
    fit: bool = True,
) -> RateReport:
    """d_H(minkowski_average(cloud, n), target) for n = 1..n_max plus a slope.

    Only gaps above ``2 * delta`` enter the least-squares fit of
    ``log d_H`` against ``log n``; ``fit=False`` returns the table alone.
    """
    if not 1 <= n_max <= 8:
        raise ValidationError(f"n_max must lie in 1..8, got {n_max}")
    ns = np.arange(1, n_max + 1)
    # fail fast before doing any enumeration
    estimate = geometry.minkowski_capacity_estimate(cloud, n_max)
    if estimate > capacity:
        raise geometry.CapacityExceeded(estimate, capacity)
    dist = np.array(
        [geometry.hausdorff(geometry.minkowski_average(cloud, int(n), capacity=capacity), target) for n in ns]
    )
    used = dist > 2.0 * delta
    if force_not_applicable or not fit or not used.any():
        return RateReport(ns, dist, None, delta, used)
    return RateReport(ns, dist, fit_loglog_slope(ns[used], dist[used]), delta, used)


def convexification_rate(
    sf: SampledFunction,
    M: float,
    delta: float,
    n_max: int,
    snap: Optional[float] = None,
    capacity: float = geometry.EXACT_CAPACITY,
) -> RateReport:
    """Minkowski-average convergence of the truncated epigraph of ``sf``.

    The epigraph cloud is merged on a grid of pitch ``snap`` (default
    ``delta / 10``); the target is a delta-net of the truncated epigraph of
    the convex minorant.
    """
    snap = delta / 10.0 if snap is None else snap
    cloud = truncated_epigraph(sf, M, delta, snap=snap).cloud
    estimate = geometry.minkowski_capacity_estimate(cloud, n_max)
    if estimate > capacity:
        raise geometry.CapacityExceeded(estimate, capacity)
    minorant = convex_minorant(sf)
    target = geometry.hull_dense_sample(
        geometry.convex_hull(truncated_epigraph(minorant, M, delta).cloud), delta
    )
    convex = float(np.max(sf.values - minorant.values)) <= 1e-9
    return minkowski_rate(cloud, target, n_max, delta, capacity, force_not_applicable=convex)


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------


def double_well(x):
    return (x * x - 1.0) ** 2


def square(x):
    return x * x


def neg_abs(x):
    return -abs(x)


def wavy(x):
    return math.sin(3.0 * x) + 0.5 * x * x


BUILTIN_FUNCTIONS = {
    "double_well": double_well,
    "square": square,
    "neg_abs": neg_abs,
    "wavy": wavy,
}


def builtin_function(name: str) -> Callable[[float], float]:
    try:
        return BUILTIN_FUNCTIONS[name]
    except KeyError:
        raise ValidationError(
            f"unknown function {name!r}; choose from {sorted(BUILTIN_FUNCTIONS)}"
        ) from None


def piecewise_smooth_suite(count: int, seed: int, lower: float = -1.5, upper: float = 1.5):
    """Seeded continuous 1-D test functions with kinks and oscillations.

    Each function is ``a sin(w x + phi) + b |x - c| + e x^2 + g max(0, x - h)``
    with random coefficients.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        a, w, phi = rng.uniform(-1, 1), rng.uniform(1, 6), rng.uniform(0, 2 * math.pi)
        b, c = rng.uniform(-1, 1), rng.uniform(lower, upper)
        e = rng.uniform(-0.5, 1.0)
        g, h = rng.uniform(-1, 1), rng.uniform(lower, upper)

        def f(x, a=a, w=w, phi=phi, b=b, c=c, e=e, g=g, h=h):
            return a * math.sin(w * x + phi) + b * abs(x - c) + e * x * x + g * max(0.0, x - h)

        out.append(f)
    return out
