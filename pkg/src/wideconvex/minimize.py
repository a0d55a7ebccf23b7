"""
Grid minimization over the parameter box and the width/alpha sweep.

The network loss at one sample is separable across units, so its minimum
over the product box is found one unit at a time. The sweep compares the
kernel-weighted minimum with the plain window average of the per-unit
minima and with the convex minorant of the unit-averaged loss landscape.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .epigraph import ParamBox, SampledFunction, convex_minorant
from .errors import (
    ComputationError,
    EmptyArgmin,
    SweepCellError,
    UnsupportedDimension,
    ValidationError,
)
from .kernel import kernel_weights
from .network import DataConfig, SampleBatch, generate_batch

SWEEP_HEADER = ("alpha", "N", "seed", "min_phi", "mean_per_unit_min", "minorant_min", "argmin_distance")

LossTransform = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class ArgminSet:
    minimizers: np.ndarray
    min_value: float
    value_tol: float

    def __len__(self):
        return len(self.minimizers)


def grid_argmin(sf: SampledFunction, value_tol: float) -> ArgminSet:
    """Exact grid minimum and every node within ``value_tol`` of it; ties are kept."""
    if not value_tol >= 0:
        raise ValidationError(f"value_tol must be nonnegative, got {value_tol!r}")
    v = sf.values
    lo = float(v.min())
    keep = v <= lo + value_tol
    return ArgminSet(sf.nodes[keep], lo, float(value_tol))


def argmin_set_distance(point, target: ArgminSet) -> float:
    if len(target) == 0:
        raise EmptyArgmin("argmin set is empty")
    point = np.atleast_1d(np.asarray(point, dtype=float))
    return float(np.min(np.linalg.norm(target.minimizers - point, axis=1)))


def unit_grid_losses(batch: SampleBatch, n: int, grid: ParamBox) -> np.ndarray:
    """``||Y^i_n - f_b(X_n)||^2`` for every unit and grid node, shape ``(2N+1, nodes)``."""
    if int(n) != n or not 0 <= n < batch.n_samples:
        raise ValidationError(f"sample index {n!r} outside 0..{batch.n_samples - 1}")
    nodes = grid.nodes
    outputs = batch.family.eval(nodes, batch.X[int(n)][None, :])
    r = batch.Y[:, int(n), None, :] - outputs[None, :, :]
    return np.sum(r * r, axis=-1)


@dataclass(frozen=True, eq=False)
class PerUnitArgmin:
    betas: np.ndarray
    min_phi: float
    unit_minima: np.ndarray
    weights: np.ndarray

    @property
    def mean_per_unit_min(self) -> float:
        return math.fsum(self.unit_minima) / len(self.unit_minima)

    @property
    def weighted_beta(self) -> np.ndarray:
        return self.weights @ self.betas


def per_unit_argmin(
    batch: SampleBatch,
    alpha: float,
    n: int = 0,
    grid: Optional[ParamBox] = None,
    loss_transform: Optional[LossTransform] = None,
) -> PerUnitArgmin:
    """Minimize the kernel-weighted loss over the product of grids, unit by unit.

    ``loss_transform(units, losses)`` may replace the ``(2N+1, nodes)`` loss
    table before minimization; it exists for synthetic-loss experiments.
    Ties go to the lexicographically smallest node.
    """
    grid = grid or batch.family.domain
    losses = unit_grid_losses(batch, n, grid)
    if loss_transform is not None:
        losses = np.asarray(loss_transform(batch.units, losses), dtype=float)
    # row-major nodes with increasing axes: the first minimum is lexicographically smallest
    best = np.argmin(losses, axis=1)
    minima = losses[np.arange(len(best)), best]
    weights = np.asarray(kernel_weights(alpha, batch.N).weights)
    min_phi = math.fsum(weights * minima)
    return PerUnitArgmin(grid.nodes[best], min_phi, minima, weights)


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    N: int
    seed: int
    min_phi: float
    mean_per_unit_min: float
    minorant_min: float
    argmin_distance: float

    def as_list(self):
        return [self.alpha, self.N, self.seed, self.min_phi, self.mean_per_unit_min, self.minorant_min, self.argmin_distance]


@dataclass
class SweepReport:
    rows: List[SweepRow]
    metadata: Dict[str, object]

    def gap_summary(self) -> Dict[Tuple[float, int], float]:
        """Seed mean of ``|min_phi - mean_per_unit_min|`` per ``(alpha, N)``."""
        acc: Dict[Tuple[float, int], List[float]] = {}
        for r in self.rows:
            acc.setdefault((r.alpha, r.N), []).append(abs(r.min_phi - r.mean_per_unit_min))
        return {key: math.fsum(v) / len(v) for key, v in sorted(acc.items())}

    def gaps_along_alpha(self, N: int) -> List[Tuple[float, float]]:
        return [(a, g) for (a, n), g in self.gap_summary().items() if n == N]


def _sweep_cell(cfg, alpha, N, seed, n, grid, value_tol, loss_transform) -> SweepRow:
    batch = generate_batch(dataclasses.replace(cfg, seed=seed), N, n + 1)
    fit = per_unit_argmin(batch, alpha, n, grid, loss_transform)
    losses = unit_grid_losses(batch, n, grid)
    if loss_transform is not None:
        losses = np.asarray(loss_transform(batch.units, losses), dtype=float)
    landscape = SampledFunction(grid, losses.mean(axis=0))
    minorant = convex_minorant(landscape)
    target = grid_argmin(minorant, value_tol)
    distance = argmin_set_distance(fit.weighted_beta, target)
    return SweepRow(float(alpha), int(N), int(seed), fit.min_phi, fit.mean_per_unit_min, target.min_value, distance)


def theorem_sweep(
    cfg: DataConfig,
    alphas: Sequence[float],
    Ns: Sequence[int],
    seeds: Sequence[int],
    n: int = 0,
    grid: Optional[ParamBox] = None,
    value_tol: Optional[float] = None,
    loss_transform: Optional[LossTransform] = None,
    threads: int = 1,
) -> SweepReport:
    """Run every ``(alpha, N, seed)`` cell; rows come back sorted by that key.

    ``value_tol`` defaults to one grid cell of Lipschitz slack,
    ``grid_step * lipschitz_beta``.
    """
    grid = grid or cfg.family.domain
    if grid.p > 2:
        raise UnsupportedDimension(f"sweep landscapes need p <= 2, got {grid.p}")
    for a in alphas:
        kernel_weights(a, 0)
    for N in Ns:
        if int(N) != N or N < 0:
            raise ValidationError(f"N must be a nonnegative integer, got {N!r}")
    if not len(alphas) or not len(Ns) or not len(seeds):
        raise ValidationError("alphas, Ns and seeds must be nonempty")
    if value_tol is None:
        value_tol = grid.grid_step * cfg.family.lipschitz_beta
    cells = sorted({(float(a), int(N), int(s)) for a in alphas for N in Ns for s in seeds})

    def run(cell):
        try:
            return _sweep_cell(cfg, *cell, n, grid, value_tol, loss_transform)
        except ValidationError:
            raise
        except (ComputationError, ArithmeticError, FloatingPointError) as exc:
            raise SweepCellError(cell, exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, cells))
    else:
        rows = [run(c) for c in cells]
    metadata = {
        "family": cfg.family.name,
        "grid_lower": list(grid.lower),
        "grid_upper": list(grid.upper),
        "grid_step": grid.grid_step,
        "noise": cfg.noise,
        "noise_scale": cfg.noise_scale,
        "sample_index": n,
        "value_tol": value_tol,
    }
    return SweepReport(rows, metadata)
