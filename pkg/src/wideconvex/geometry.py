"""
Computational geometry on finite point clouds.

Compact sets are represented by finite point clouds (delta-nets). This module
provides Minkowski averages, convex hulls in dimensions 1 to 3, dense samples
of solid hulls, Hausdorff distances, Caratheodory decompositions and the
block-frequency schedules that realize hull points as limits of running
averages of extreme points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.spatial import ConvexHull, Delaunay, cKDTree
from scipy.spatial import QhullError

from .errors import (
    CapacityExceeded,
    DimensionMismatch,
    PointOutsideHull,
    UnsupportedDimension,
    ValidationError,
)

EXACT_CAPACITY = 10**7
DENSE_SAMPLE_CAPACITY = 10**7
ORIENTATION_TOL = 1e-12
INSIDE_TOL = 1e-9

# rows handled per block when forming pairwise sums
_CHUNK = 2_000_000


def _cell_keys(points: np.ndarray, snap: float) -> np.ndarray:
    """One sortable key per row; rows share a key iff they share a snap cell."""
    if snap > 0:
        cells = np.floor(points / snap + 0.5).astype(np.int64)
        cells -= cells.min(axis=0)
        spans = cells.max(axis=0) + 1
        if float(np.prod(spans.astype(float))) < 2.0**62:
            strides = np.cumprod(np.r_[1, spans[:0:-1]])[::-1]
            return cells @ strides
        keys = cells
    else:
        keys = points + 0.0  # folds -0.0 into 0.0
    keys = np.ascontiguousarray(keys)
    return keys.view(np.dtype((np.void, keys.dtype.itemsize * keys.shape[1]))).ravel()


def _dedup(points: np.ndarray, snap: float) -> np.ndarray:
    """Drop points sharing a snap cell (exact duplicates when snap == 0).

    The first point seen in each cell is kept unchanged, so coordinates never
    drift; every dropped point lies within ``snap * sqrt(dim)`` of a kept one.
    """
    if len(points) <= 1:
        return points
    _, first = np.unique(_cell_keys(points, snap), return_index=True)
    return points[np.sort(first)]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """A nonempty finite set of points in R^dim.

    ``points`` is stored as a read-only ``(m, dim)`` float array. Points that
    fall in the same ``snap`` cell are merged on construction.
    """

    points: np.ndarray
    snap: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ValidationError("a point cloud needs at least one point of dimension >= 1")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("point coordinates must be finite")
        if not (self.snap >= 0 and math.isfinite(self.snap)):
            raise ValidationError(f"snap must be a nonnegative real, got {self.snap!r}")
        pts = _dedup(pts, float(self.snap))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "snap", float(self.snap))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def __repr__(self):
        return f"PointCloud(dim={self.dim}, size={len(self)}, snap={self.snap:g})"


@dataclass(frozen=True, eq=False)
class Hull:
    """Extreme points of the convex hull of a cloud.

    In dimension 2 the vertices are ordered counterclockwise.
    """

    dim: int
    vertices: PointCloud

    @property
    def points(self) -> np.ndarray:
        return self.vertices.points

    def __len__(self):
        return len(self.vertices)


@dataclass(frozen=True, eq=False)
class WeightedVertices:
    vertices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if len(v) != len(w) or len(w) == 0:
            raise ValidationError("need one weight per vertex")
        if np.any(w < 0) or abs(math.fsum(w) - 1.0) > 1e-12:
            raise ValidationError("weights must be nonnegative and sum to one")
        if len(w) > v.shape[1] + 1:
            raise ValidationError("at most dim + 1 vertices are allowed")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "weights", w)

    def point(self) -> np.ndarray:
        return self.weights @ self.vertices


@dataclass(frozen=True)
class MonteCarlo:
    """Sampling mode for :func:`minkowski_average`."""

    samples: int
    seed: int


CloudLike = Union[PointCloud, np.ndarray, Sequence]


def as_cloud(a: CloudLike, snap: float = 0.0) -> PointCloud:
    return a if isinstance(a, PointCloud) else PointCloud(np.asarray(a, dtype=float), snap)


# ---------------------------------------------------------------------------
# Minkowski averages
# ---------------------------------------------------------------------------


def minkowski_capacity_estimate(a: PointCloud, n: int) -> float:
    """Upper estimate of the size of the n-fold Minkowski sum of ``a``.

    The tuple count ``|a|**n`` is capped by the number of snap cells covering
    the bounding box of ``a`` when ``a.snap > 0``.
    """
    tuples = float(len(a)) ** n
    if a.snap <= 0:
        return tuples
    extent = a.points.max(axis=0) - a.points.min(axis=0)
    cells = float(np.prod(np.floor(extent / a.snap) + 1.0))
    return min(tuples, cells)


def _average_with(avgs: np.ndarray, k: int, pts: np.ndarray, snap: float) -> np.ndarray:
    """Merge ``{(k * t + p) / (k + 1)}`` over t in avgs, p in pts on the snap grid."""
    block = max(1, _CHUNK // len(pts))
    parts = []
    for start in range(0, len(avgs), block):
        chunk = (k * avgs[start:start + block, None, :] + pts[None, :, :]) / (k + 1)
        parts.append(_dedup(chunk.reshape(-1, pts.shape[1]), snap))
    return _dedup(np.concatenate(parts), snap)


def minkowski_average(
    a: PointCloud,
    n: int,
    mode: Union[str, MonteCarlo] = "exact",
    capacity: float = EXACT_CAPACITY,
) -> PointCloud:
    """Return ``{(p_1 + ... + p_n) / n : p_i in a}``.

    In exact mode the average is built one summand at a time and merged on
    the snap grid after each stage. Every exact average then lies within
    ``((n + 1) / 2 - 1 / n) * a.snap * sqrt(dim)`` of a returned point and
    vice versa (no error when ``a.snap == 0``). A :class:`MonteCarlo` mode
    draws ``mode.samples`` uniform tuples instead; the result is a subset
    (under-approximation) of the true set.
    """
    if int(n) != n or n < 1:
        raise ValidationError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    pts = a.points
    if isinstance(mode, MonteCarlo):
        if mode.samples < 1:
            raise ValidationError("monte carlo mode needs samples >= 1")
        rng = np.random.default_rng(mode.seed)
        out = []
        block = max(1, _CHUNK // n)
        remaining = int(mode.samples)
        while remaining > 0:
            size = min(block, remaining)
            idx = rng.integers(0, len(pts), size=(size, n))
            out.append(_dedup(pts[idx].sum(axis=1) / n, a.snap))
            remaining -= size
        return PointCloud(np.concatenate(out), a.snap)
    if mode != "exact":
        raise ValidationError(f"unknown mode {mode!r}")

    estimate = minkowski_capacity_estimate(a, n)
    if estimate > capacity:
        raise CapacityExceeded(estimate, capacity)
    avgs = pts
    for k in range(1, n):
        avgs = _average_with(avgs, k, pts, a.snap)
    return PointCloud(avgs, a.snap)


# ---------------------------------------------------------------------------
# Hulls
# ---------------------------------------------------------------------------


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _hull_2d(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain, then removal of near-collinear vertices.

    The chain pops on non-left turns of the floating-point orientation test.
    A second pass on the closed polygon drops any vertex lying within
    ``ORIENTATION_TOL * scale`` of the segment joining its neighbours.
    """
    pts = sorted(map(tuple, np.unique(points, axis=0)))
    if len(pts) <= 2:
        return np.array(pts, dtype=float)

    def half(seq):
        chain = []
        for p in seq:
            while len(chain) >= 2 and _cross(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(reversed(pts))
    hull = [np.array(p) for p in lower[:-1] + upper[:-1]]
    scale = max(float(np.ptp(points, axis=0).max()), 1.0)
    tol = ORIENTATION_TOL * scale
    changed = True
    while changed and len(hull) > 2:
        changed = False
        for k in range(len(hull)):
            a, b, c = hull[k - 1], hull[k], hull[(k + 1) % len(hull)]
            base = np.linalg.norm(c - a)
            between = np.dot(b - a, c - b) >= 0
            if base > 0 and between and abs(_cross(a, b, c)) / base <= tol:
                del hull[k]
                changed = True
                break
    return np.array(hull, dtype=float)


def _affine_frame(points: np.ndarray, tol: float = 1e-12):
    """Origin and orthonormal basis (rows) of the affine hull of ``points``."""
    origin = points[0]
    centered = points - origin
    if len(points) == 1:
        return origin, np.zeros((0, points.shape[1]))
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    scale = max(s[0], 1.0) if len(s) else 1.0
    rank = int(np.sum(s > tol * scale))
    return origin, vt[:rank]


def _hull_vertices(points: np.ndarray) -> np.ndarray:
    dim = points.shape[1]
    if dim == 1:
        lo, hi = points.min(), points.max()
        return np.array([[lo]]) if lo == hi else np.array([[lo], [hi]])
    if dim == 2:
        return _hull_2d(points)
    origin, basis = _affine_frame(points)
    rank = len(basis)
    if rank == 3:
        try:
            h = ConvexHull(points)
            return points[np.sort(h.vertices)]
        except QhullError:
            pass
    if rank == 0:
        return points[:1].copy()
    local = (points - origin) @ basis.T
    if rank == 1:
        i, j = np.argmin(local[:, 0]), np.argmax(local[:, 0])
        return points[[i, j]]
    verts = _hull_2d(local)
    return origin + verts @ basis


def convex_hull(a: CloudLike) -> Hull:
    """Extreme points of ``co(a)`` for clouds of dimension 1, 2 or 3."""
    a = as_cloud(a)
    if a.dim > 3:
        raise UnsupportedDimension(f"convex hulls are implemented for dim <= 3, got {a.dim}")
    return Hull(a.dim, PointCloud(_hull_vertices(a.points)))


def _segment_net(v0: np.ndarray, v1: np.ndarray, delta: float) -> np.ndarray:
    length = float(np.linalg.norm(v1 - v0))
    m = max(1, math.ceil(length / delta))
    t = np.linspace(0.0, 1.0, m + 1)[:, None]
    out = v0 + t * (v1 - v0)
    out[0], out[-1] = v0, v1
    return out


def _triangle_net(v0, v1, v2, delta: float) -> np.ndarray:
    longest = max(np.linalg.norm(v1 - v0), np.linalg.norm(v2 - v0), np.linalg.norm(v2 - v1))
    m = max(1, math.ceil(longest / delta))
    a, b = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    keep = a + b <= m
    a, b = a[keep] / m, b[keep] / m
    return v0 + a[:, None] * (v1 - v0) + b[:, None] * (v2 - v0)


def _tetra_net(v, delta: float) -> np.ndarray:
    edges = [np.linalg.norm(v[i] - v[j]) for i in range(4) for j in range(i + 1, 4)]
    m = max(1, math.ceil(max(edges) / delta))
    g = np.arange(m + 1)
    a, b, c = np.meshgrid(g, g, g, indexing="ij")
    keep = a + b + c <= m
    a, b, c = a[keep] / m, b[keep] / m, c[keep] / m
    return v[0] + a[:, None] * (v[1] - v[0]) + b[:, None] * (v[2] - v[0]) + c[:, None] * (v[3] - v[0])


def _polygon_net(ccw: np.ndarray, delta: float) -> np.ndarray:
    size = 0.0
    for j in range(1, len(ccw) - 1):
        tri = (ccw[0], ccw[j], ccw[j + 1])
        longest = max(np.linalg.norm(tri[a] - tri[b]) for a, b in ((0, 1), (0, 2), (1, 2)))
        m = max(1, math.ceil(longest / delta))
        size += (m + 1) * (m + 2) / 2
    if size > DENSE_SAMPLE_CAPACITY:
        raise CapacityExceeded(size, DENSE_SAMPLE_CAPACITY)
    parts = [_triangle_net(ccw[0], ccw[j], ccw[j + 1], delta) for j in range(1, len(ccw) - 1)]
    return np.concatenate(parts)


def hull_dense_sample(h: Hull, delta: float) -> PointCloud:
    """A delta-net of the solid hull: every hull point is within ``delta`` of a sample.

    Segments get an arithmetic grid of pitch at most ``delta``; polygons are
    fan-triangulated from the first vertex and each triangle is gridded
    barycentrically with sub-edges no longer than ``delta``.
    """
    if not delta > 0:
        raise ValidationError(f"delta must be positive, got {delta!r}")
    v = h.points
    if len(v) == 1:
        return PointCloud(v.copy())
    if len(v) == 2:
        return PointCloud(_segment_net(v[0], v[1], delta))
    if h.dim == 2:
        return PointCloud(_polygon_net(v, delta))

    origin, basis = _affine_frame(v)
    if len(basis) < 3:
        local = (v - origin) @ basis.T
        if len(basis) == 1:
            net = _segment_net(local[np.argmin(local[:, 0])], local[np.argmax(local[:, 0])], delta)
        else:
            net = _polygon_net(_hull_2d(local), delta)
        return PointCloud(origin + net @ basis)
    tets = Delaunay(v).simplices
    size = 0.0
    for t in tets:
        edges = [np.linalg.norm(v[t[i]] - v[t[j]]) for i in range(4) for j in range(i + 1, 4)]
        m = max(1, math.ceil(max(edges) / delta))
        size += (m + 1) * (m + 2) * (m + 3) / 6
    if size > DENSE_SAMPLE_CAPACITY:
        raise UnsupportedDimension(
            f"a dim-3 delta-net would hold ~{size:.3g} points (cap {DENSE_SAMPLE_CAPACITY:g})"
        )
    return PointCloud(np.concatenate([_tetra_net(v[t], delta) for t in tets]))


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def directed_hausdorff(a: CloudLike, b: CloudLike) -> float:
    """max over p in a of the distance from p to b."""
    a, b = as_cloud(a), as_cloud(b)
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimensions differ: {a.dim} vs {b.dim}")
    dist, _ = cKDTree(b.points).query(a.points, k=1)
    return float(np.max(dist))


def hausdorff(a: CloudLike, b: CloudLike) -> float:
    """Hausdorff distance between two finite point sets (Euclidean norm)."""
    return max(directed_hausdorff(a, b), directed_hausdorff(b, a))


# ---------------------------------------------------------------------------
# Caratheodory decomposition and frequency schedules
# ---------------------------------------------------------------------------


def _clean_weights(vertices: np.ndarray, lam: np.ndarray) -> WeightedVertices:
    lam = np.where(lam < 1e-14, 0.0, lam)
    lam = lam / lam.sum()
    keep = lam > 0
    return WeightedVertices(vertices[keep], lam[keep] / math.fsum(lam[keep]))


def _segment_weights(v0, v1, p, tol):
    d = v1 - v0
    length2 = float(d @ d)
    t = float((p - v0) @ d / length2)
    foot = v0 + min(max(t, 0.0), 1.0) * d
    margin = float(np.linalg.norm(p - foot))
    if margin > tol:
        raise PointOutsideHull(margin)
    t = min(max(t, 0.0), 1.0)
    return _clean_weights(np.array([v0, v1]), np.array([1.0 - t, t]))


def caratheodory_decompose(h: Hull, p, tol: float = INSIDE_TOL) -> WeightedVertices:
    """Write ``p`` as a convex combination of at most dim + 1 hull vertices.

    Raises :class:`PointOutsideHull` with the distance by which ``p`` misses
    the hull when it is farther out than ``tol``.
    """
    if h.dim > 2:
        raise UnsupportedDimension("Caratheodory decomposition is implemented for dim <= 2")
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != (h.dim,):
        raise DimensionMismatch(f"point has shape {p.shape}, hull dim is {h.dim}")
    v = h.points
    if len(v) == 1:
        margin = float(np.linalg.norm(p - v[0]))
        if margin > tol:
            raise PointOutsideHull(margin)
        return WeightedVertices(v.copy(), np.ones(1))
    if len(v) == 2:
        return _segment_weights(v[0], v[1], p, tol)

    # signed distance to each CCW edge; negative means outside
    edges = np.roll(v, -1, axis=0) - v
    lengths = np.linalg.norm(edges, axis=1)
    signed = (edges[:, 0] * (p[1] - v[:, 1]) - edges[:, 1] * (p[0] - v[:, 0])) / lengths
    if signed.min() < -tol:
        raise PointOutsideHull(-float(signed.min()))

    best = None
    for j in range(1, len(v) - 1):
        tri = np.array([v[0], v[j], v[j + 1]])
        system = np.vstack([tri.T, np.ones(3)])
        lam = np.linalg.solve(system, np.append(p, 1.0))
        if best is None or lam.min() > best[1].min():
            best = (tri, lam)
    tri, lam = best
    return _clean_weights(tri, lam)


def frequency_schedule(w: WeightedVertices, horizon: int) -> np.ndarray:
    """Largest-remainder selection of vertex indices.

    At step t the vertex with the largest deficit ``weight * t - count`` is
    chosen (lowest index on ties), so every count stays within one of its
    target and the running average of the chosen vertices tends to the
    weighted point.
    """
    k = len(w.weights)
    if horizon < k:
        raise ValidationError(f"horizon {horizon} is shorter than the {k} vertices")
    weights = [float(x) for x in w.weights]
    counts = [0] * k
    out = np.empty(horizon, dtype=np.int64)
    for t in range(1, horizon + 1):
        best, best_deficit = 0, -math.inf
        for j in range(k):
            deficit = weights[j] * t - counts[j]
            if deficit > best_deficit:
                best, best_deficit = j, deficit
        counts[best] += 1
        out[t - 1] = best
    return out


def running_averages(w: WeightedVertices, schedule: np.ndarray) -> np.ndarray:
    """Running means of the vertices picked by ``schedule``, shape (horizon, dim)."""
    picked = w.vertices[np.asarray(schedule)]
    return np.cumsum(picked, axis=0) / np.arange(1, len(picked) + 1)[:, None]


def schedule_error_bound(w: WeightedVertices, horizon: int) -> float:
    """The guaranteed terminal gap ``dim * max|vertex| / horizon``."""
    dim = w.vertices.shape[1]
    return dim * float(np.max(np.linalg.norm(w.vertices, axis=1))) / horizon


def interleave_index(i: int) -> int:
    """Enumerate Z as 0, 1, -1, 2, -2, ... -> 1, 2, 3, 4, 5, ..."""
    i = int(i)
    return 2 * i if i > 0 else 2 * -i + 1


def deinterleave_index(k: int) -> int:
    k = int(k)
    if k < 1:
        raise ValidationError(f"positions start at 1, got {k}")
    return k // 2 if k % 2 == 0 else -(k // 2)
