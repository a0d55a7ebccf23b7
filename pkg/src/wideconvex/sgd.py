"""
Projected stochastic gradient descent on the aggregated squared error.

``single_beta`` mode fits one parameter to the kernel-aggregated target
``Ybar_n = sum_i K(i) Y^i_n``; ``full_stack`` mode updates all ``2N + 1``
unit parameters of ``||sum_i K(i) (Y^i_n - f_{beta_i}(X_n))||^2``. Step ``n``
uses the fresh sample ``n + 1`` and is followed by projection onto the box.

Diagnostics estimate expectations by averaging over independent seeds.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .epigraph import ParamBox, SampledFunction
from .errors import (
    InsufficientTrajectories,
    NonFiniteIterate,
    NotRobbinsMonro,
    ValidationError,
)
from .kernel import kernel_weights
from .minimize import ArgminSet, argmin_set_distance
from .network import DataConfig, generate_batch

MODES = ("single_beta", "full_stack")
MIN_TRAJECTORIES = 20
# held-out batches use seeds offset past the 32-bit range used for runs
HOLDOUT_OFFSET = 2**32


@dataclass(frozen=True)
class StepSchedule:
    """``a(n) = a0 / (n + 1)**gamma``.

    Build through :func:`make_schedule` to get the Robbins-Monro check;
    direct construction is allowed for control experiments.
    """

    a0: float
    gamma: float

    def __call__(self, n):
        return self.a0 / (np.asarray(n, dtype=float) + 1.0) ** self.gamma

    @property
    def robbins_monro(self) -> bool:
        return 0.5 < self.gamma <= 1.0

    @property
    def certificate(self) -> str:
        return (
            f"sum a(n) ~ sum n^-{self.gamma:g} diverges (p <= 1); "
            f"sum a(n)^2 ~ sum n^-{2 * self.gamma:g} converges (p > 1)"
        )


def make_schedule(a0: float, gamma: float) -> StepSchedule:
    a0, gamma = float(a0), float(gamma)
    if not (math.isfinite(a0) and a0 > 0):
        raise ValidationError(f"a0 must be positive, got {a0!r}")
    if not math.isfinite(gamma) or gamma <= 0.5:
        raise NotRobbinsMonro(gamma, f"sum a(n)^2 ~ sum n^-{2 * gamma:g} diverges")
    if gamma > 1.0:
        raise NotRobbinsMonro(gamma, f"sum a(n) ~ sum n^-{gamma:g} converges")
    return StepSchedule(a0, gamma)


@dataclass(frozen=True, eq=False)
class SgdTrajectory:
    """Per-step records for ``n = 0..steps-1``; ``iterates[n]`` is the pre-step parameter.

    In ``full_stack`` mode ``iterates`` holds the kernel-weighted average of
    the unit parameters and ``stacks`` the unit parameters themselves.
    """

    iterates: np.ndarray
    final: np.ndarray
    losses: np.ndarray
    grad_sq_norms: np.ndarray
    step_sizes: np.ndarray
    schedule: StepSchedule
    seed: int
    projection_count: int
    mode: str
    cfg: DataConfig
    alpha: float
    N: int
    stacks: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.losses)

    @property
    def path(self) -> np.ndarray:
        """All iterates including the final one, shape ``(steps + 1, p)``."""
        return np.vstack([self.iterates, self.final[None, :]])

    def header(self):
        p = self.iterates.shape[1]
        return ["n", "a_n"] + [f"beta_{k + 1}" for k in range(p)] + ["F_n", "grad_sq_norm"]

    def rows(self):
        for n in range(len(self)):
            yield [n, self.step_sizes[n], *self.iterates[n], self.losses[n], self.grad_sq_norms[n]]


def _check_run_args(alpha, N, steps, mode):
    kernel_weights(alpha, 0)
    if int(N) != N or N < 0:
        raise ValidationError(f"N must be a nonnegative integer, got {N!r}")
    if int(steps) != steps or steps < 1:
        raise ValidationError(f"steps must be a positive integer, got {steps!r}")
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")


def sgd_run(
    cfg: DataConfig,
    alpha: float,
    N: int,
    schedule: StepSchedule,
    steps: int,
    mode: str = "single_beta",
    init=None,
) -> SgdTrajectory:
    """Run projected SGD from ``init`` (default: the domain center)."""
    _check_run_args(alpha, N, steps, mode)
    N, steps = int(N), int(steps)
    fam = cfg.family
    box = fam.domain
    batch = generate_batch(cfg, N, steps + 1)
    weights = np.asarray(kernel_weights(alpha, N).weights)
    a = schedule(np.arange(steps))
    start = (box.lower + box.upper) / 2 if init is None else np.asarray(init, dtype=float)
    start = np.broadcast_to(start, (fam.p,)) if mode == "single_beta" or np.ndim(start) <= 1 else start
    if mode == "single_beta":
        beta = np.array(start, dtype=float).reshape(fam.p)
        target = _aggregate(weights, batch.Y)
    else:
        beta = np.array(np.broadcast_to(start, (2 * N + 1, fam.p)), dtype=float)
    if not box.contains(beta):
        raise ValidationError(f"initial parameter {beta!r} outside the domain")

    iterates = np.empty((steps, fam.p))
    stacks = np.empty((steps, 2 * N + 1, fam.p)) if mode == "full_stack" else None
    losses = np.empty(steps)
    grads = np.empty(steps)
    projections = 0
    for n in range(steps):
        x = batch.X[n + 1]
        if mode == "single_beta":
            iterates[n] = beta
            r = target[n + 1] - fam.eval(beta, x)
            g = fam.subgrad(beta, x, r)
        else:
            stacks[n] = beta
            iterates[n] = weights @ beta
            r = np.einsum("i,is->s", weights, batch.Y[:, n + 1, :] - fam.eval(beta, x[None, :]))
            jac = fam.jacobian(beta, x[None, :])
            g = -2.0 * weights[:, None] * np.einsum("isp,s->ip", jac, r)
        losses[n] = float(r @ r)
        grads[n] = float(np.sum(g * g))
        stepped = beta - a[n] * g
        beta = box.project(stepped)
        if not np.array_equal(beta, stepped):
            projections += 1
        if not np.all(np.isfinite(beta)):
            raise NonFiniteIterate(n)
    final = beta.copy() if mode == "single_beta" else weights @ beta
    return SgdTrajectory(
        iterates, final, losses, grads, a, schedule, cfg.seed, projections, mode, cfg, float(alpha), N, stacks
    )


def sgd_suite(
    cfg: DataConfig,
    alpha: float,
    N: int,
    schedule: StepSchedule,
    steps: int,
    seeds: Sequence[int],
    mode: str = "single_beta",
    init=None,
    threads: int = 1,
) -> List[SgdTrajectory]:
    """Independent runs, one per seed, returned in seed order."""
    _check_run_args(alpha, N, steps, mode)

    def run(seed):
        return sgd_run(dataclasses.replace(cfg, seed=int(seed)), alpha, N, schedule, steps, mode, init)

    ordered = sorted(int(s) for s in seeds)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, ordered))
    return [run(s) for s in ordered]


def _aggregate(weights, Y):
    # centered on the middle unit so identical unit targets aggregate exactly
    center = Y[len(weights) // 2]
    return center + np.einsum("i,ins->ns", weights, Y - center)


def aggregated_target(cfg: DataConfig, alpha: float, N: int, n_samples: int):
    """Inputs and kernel-aggregated targets of a fresh batch."""
    batch = generate_batch(cfg, N, n_samples)
    weights = np.asarray(kernel_weights(alpha, N).weights)
    return batch.X, _aggregate(weights, batch.Y)


def holdout_config(cfg: DataConfig) -> DataConfig:
    return dataclasses.replace(cfg, seed=(cfg.seed + HOLDOUT_OFFSET) % 2**64)


def least_squares_beta(cfg: DataConfig, alpha: float, N: int, n_samples: int = 100_000) -> np.ndarray:
    """Least-squares fit of the aggregated target on a held-out batch (affine family only)."""
    if cfg.family.name != "affine":
        raise ValidationError("a closed-form least-squares fit exists only for the affine family")
    X, ybar = aggregated_target(holdout_config(cfg), alpha, N, n_samples)
    X = cfg.family.clip(X)
    return np.linalg.solve(X.T @ X, X.T @ ybar[:, 0])


def expected_loss(cfg: DataConfig, alpha: float, N: int, betas, n_ref: int = 2000, seed: Optional[int] = None):
    """Reference-sample estimate of ``E ||Ybar - f_beta(X)||^2`` for each row of ``betas``."""
    ref = cfg if seed is None else dataclasses.replace(cfg, seed=seed)
    X, ybar = aggregated_target(holdout_config(ref), alpha, N, n_ref)
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    r = ybar[None, :, :] - cfg.family.eval(betas[:, None, :], X[None, :, :])
    return np.mean(np.sum(r * r, axis=-1), axis=1)


def expected_landscape(cfg: DataConfig, alpha: float, N: int, grid: Optional[ParamBox] = None, n_ref: int = 2000):
    grid = grid or cfg.family.domain
    return SampledFunction(grid, expected_loss(cfg, alpha, N, grid.nodes, n_ref))


def local_minimizers(sf: SampledFunction, interior: bool = False) -> ArgminSet:
    """Local minima of a one-dimensional grid function; ``interior`` drops the two endpoints."""
    if sf.domain.p != 1:
        raise ValidationError("local minimizers are computed on one-dimensional grids only")
    v = sf.values
    left = np.r_[np.inf, v[:-1]]
    right = np.r_[v[1:], np.inf]
    keep = (v <= left) & (v <= right)
    if interior:
        keep[[0, -1]] = False
    return ArgminSet(sf.nodes[keep], float(v[keep].min()) if keep.any() else math.nan, 0.0)


def local_maximizers(sf: SampledFunction) -> np.ndarray:
    """Interior grid nodes that are local maxima of a one-dimensional grid function."""
    if sf.domain.p != 1:
        raise ValidationError("local maximizers are computed on one-dimensional grids only")
    v = sf.values
    keep = np.zeros(len(v), dtype=bool)
    keep[1:-1] = (v[1:-1] >= v[:-2]) & (v[1:-1] >= v[2:])
    return sf.nodes[keep]


@dataclass(frozen=True)
class DescentReport:
    window: int
    constant: float
    pass_fraction: float
    n_windows: int
    increments: np.ndarray
    bounds: np.ndarray
    calibration_seeds: tuple
    evaluation_seeds: tuple


def _window_terms(trajs, window, n_ref):
    t0 = trajs[0]
    starts = np.arange(0, len(t0) - window + 1, window)
    bounds = np.array([np.sum(t0.step_sizes[s : s + window] ** 2) for s in starts])
    ends = starts + window
    idx = np.r_[starts, ends[-1:]] if len(starts) else starts
    losses = []
    for t in trajs:
        path = t.path
        losses.append(expected_loss(t.cfg, t.alpha, t.N, path[idx], n_ref, seed=0))
    f_bar = np.mean(losses, axis=0)
    gsum = np.mean([t.step_sizes * t.grad_sq_norms for t in trajs], axis=0)
    decrease = np.array([np.sum(gsum[s : s + window]) for s in starts])
    increments = f_bar[1:] - f_bar[:-1] + decrease
    return increments, bounds


def descent_inequality_check(
    trajs: Sequence[SgdTrajectory], window: int = 100, n_ref: int = 2000
) -> DescentReport:
    """Check ``E F(n+w) <= E F(n) - sum a E||g||^2 + C sum a^2`` over windows.

    ``E F`` is estimated per trajectory on a common reference sample and
    averaged over seeds; the gradient term averages the recorded squared
    gradient norms. ``C`` is fitted on the even-position trajectories (the
    smallest constant satisfying every one of their windows) and the pass
    fraction is measured on the odd-position trajectories, so the fit is
    not judged on the data it came from. In the single-parameter mode the
    quantities are those of the aggregated target.
    """
    trajs = sorted(trajs, key=lambda t: t.seed)
    if len(trajs) < MIN_TRAJECTORIES:
        raise InsufficientTrajectories(f"need at least {MIN_TRAJECTORIES} trajectories, got {len(trajs)}")
    if len({len(t) for t in trajs}) != 1:
        raise ValidationError("trajectories must have equal length")
    if int(window) != window or not 1 <= window <= len(trajs[0]):
        raise ValidationError(f"window must lie in 1..{len(trajs[0])}, got {window!r}")
    calibration, evaluation = trajs[0::2], trajs[1::2]
    cal_inc, bounds = _window_terms(calibration, window, n_ref)
    eval_inc, _ = _window_terms(evaluation, window, n_ref)
    ratios = np.where(bounds > 0, cal_inc / np.where(bounds > 0, bounds, 1.0), 0.0)
    constant = max(0.0, float(ratios.max()))
    passed = eval_inc <= constant * bounds + 1e-12
    return DescentReport(
        int(window),
        constant,
        float(np.mean(passed)),
        len(bounds),
        eval_inc,
        constant * bounds,
        tuple(t.seed for t in calibration),
        tuple(t.seed for t in evaluation),
    )


@dataclass(frozen=True)
class DecayReport:
    status: str
    slope: float
    ratio: float
    initial: float
    final: float

    @property
    def stationary(self) -> bool:
        return self.status == "AlreadyStationary"


def moving_average(x, width: int) -> np.ndarray:
    return np.convolve(np.asarray(x, dtype=float), np.ones(width) / width, mode="valid")


def gradient_decay_report(traj: SgdTrajectory, width: int = 100) -> DecayReport:
    """Log-log trend of the moving-average squared gradient norm and its final/initial ratio."""
    if len(traj) < width:
        raise ValidationError(f"trajectory of length {len(traj)} is shorter than the window {width}")
    ma = moving_average(traj.grad_sq_norms, width)
    initial, final = float(ma[0]), float(ma[-1])
    if initial == 0.0:
        return DecayReport("AlreadyStationary", math.nan, math.nan, initial, final)
    n = np.arange(len(ma)) + width / 2.0
    keep = ma > 0
    slope = float(np.polyfit(np.log(n[keep]), np.log(ma[keep]), 1)[0]) if keep.sum() >= 2 else math.nan
    return DecayReport("ok", slope, final / initial, initial, final)


@dataclass(frozen=True)
class DistanceSeries:
    distances: np.ndarray
    epsilon: float

    @property
    def final_fraction(self) -> float:
        """Share of the last 10% of steps closer than ``epsilon`` to the target."""
        tail = self.distances[-max(1, len(self.distances) // 10) :]
        return float(np.mean(tail < self.epsilon))


def distance_to_argmin_series(traj: SgdTrajectory, target: ArgminSet, epsilon: float = 0.1) -> DistanceSeries:
    path = traj.path
    if len(target) == 0:
        argmin_set_distance(path[0], target)
    diffs = path[:, None, :] - target.minimizers[None, :, :]
    return DistanceSeries(np.min(np.linalg.norm(diffs, axis=-1), axis=1), float(epsilon))


def escape_step(traj: SgdTrajectory, center, radius: float = 1e-3) -> Optional[int]:
    """First step at which the iterate is farther than ``radius`` from ``center``."""
    d = np.linalg.norm(traj.path - np.asarray(center, dtype=float), axis=1)
    hit = np.flatnonzero(d > radius)
    return int(hit[0]) if len(hit) else None
