"""
Two-sided geometric kernel weights and the means built from them.

``K_N(i) = C_N * alpha**|i|`` for ``|i| <= N`` are the fixed last-layer
weights of a width ``2N + 1`` network, and ``K_inf(i) = C * alpha**|i|`` is
their infinite-width counterpart with ``C = (1 - alpha) / (1 + alpha)``.
Kernel (Abel-type) means are compared with symmetric Cesaro means to
exhibit the Tauberian agreement of the two as ``alpha -> 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from .errors import AlphaOutOfRange, CesaroNotConverged, ValidationError


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise AlphaOutOfRange(alpha)
    return alpha


def _check_width(N) -> int:
    if int(N) != N or N < 0:
        raise ValidationError(f"N must be a nonnegative integer, got {N!r}")
    return int(N)


@dataclass(frozen=True, eq=False)
class KernelWeights:
    """Normalized weights over unit indices ``-N..N`` (stored left to right)."""

    alpha: float
    N: int
    weights: np.ndarray
    normalizer: float

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1)

    def __getitem__(self, i: int) -> float:
        if abs(i) > self.N:
            raise IndexError(f"unit index {i} outside -{self.N}..{self.N}")
        return float(self.weights[i + self.N])

    def __len__(self):
        return len(self.weights)


def _powers(alpha: float, N: int) -> np.ndarray:
    """alpha**j for j = 0..N."""
    return alpha ** np.arange(N + 1, dtype=float)


def kernel_weights(alpha: float, N: int) -> KernelWeights:
    """K_N weights with ``C_N = 1 / (1 + 2 sum_{j=1..N} alpha**j)``.

    The normalizer is summed directly, smallest terms first.
    """
    alpha = _check_alpha(alpha)
    N = _check_width(N)
    powers = _powers(alpha, N)
    tail = 0.0
    for term in powers[:0:-1]:
        tail += term
    c_n = 1.0 / (1.0 + 2.0 * tail)
    half = c_n * powers
    weights = np.concatenate([half[:0:-1], half])
    weights.setflags(write=False)
    return KernelWeights(alpha, N, weights, c_n)


def closed_form_normalizer(alpha: float, N: int) -> float:
    """``(1 - a) / (1 + a - 2 a**(N + 1))``, kept as a cross-check only."""
    return (1.0 - alpha) / (1.0 + alpha - 2.0 * alpha ** (N + 1))


def infinite_normalizer(alpha: float) -> float:
    alpha = _check_alpha(alpha)
    return (1.0 - alpha) / (1.0 + alpha)


def tail_mass(alpha: float, N: int) -> float:
    """K_inf mass outside ``-N..N``: ``2 C alpha**(N+1) / (1 - alpha)``."""
    return 2.0 * infinite_normalizer(alpha) * alpha ** (N + 1) / (1.0 - alpha)


def infinite_tail_cutoff(alpha: float, tol: float) -> int:
    """Smallest N whose discarded K_inf tail mass is below ``tol``."""
    alpha = _check_alpha(alpha)
    if not tol > 0:
        raise ValidationError(f"tol must be positive, got {tol!r}")
    if tail_mass(alpha, 0) < tol:
        return 0
    # tail(N) = 2 alpha**(N+1) / (1 + alpha); start from the log solution and adjust
    guess = math.log(tol * (1.0 + alpha) / 2.0) / math.log(alpha) - 1.0
    N = max(0, int(math.floor(guess)) - 1)
    while tail_mass(alpha, N) >= tol:
        N += 1
    while N > 0 and tail_mass(alpha, N - 1) < tol:
        N -= 1
    return N


@dataclass(frozen=True, eq=False)
class TwoSidedSequence:
    """A bounded sequence indexed by all integers.

    ``generator`` maps an integer index to a real. With ``vectorized=True``
    it receives an integer array and must return an array of equal shape.
    Generators must be reentrant.
    """

    generator: Callable
    bound: float
    vectorized: bool = False

    def take(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        if self.vectorized:
            values = np.asarray(self.generator(idx), dtype=float)
        else:
            values = np.fromiter((self.generator(int(i)) for i in idx), dtype=float, count=len(idx))
        if np.any(np.abs(values) > self.bound * (1 + 1e-12)):
            raise ValidationError(f"sequence exceeds its declared bound {self.bound}")
        return values

    def window(self, N: int) -> np.ndarray:
        """Values at ``-N..N``."""
        return self.take(np.arange(-N, N + 1))


def even_indicator() -> TwoSidedSequence:
    return TwoSidedSequence(lambda i: (np.asarray(i) % 2 == 0).astype(float), 1.0, vectorized=True)


def period_three() -> TwoSidedSequence:
    """The repeating pattern 1, 0, 0 (value 1 on multiples of three)."""
    return TwoSidedSequence(lambda i: (np.asarray(i) % 3 == 0).astype(float), 1.0, vectorized=True)


def constant_sequence(c: float) -> TwoSidedSequence:
    return TwoSidedSequence(lambda i: np.full(np.shape(i), float(c)), abs(float(c)), vectorized=True)


def _ascending_sum(values: np.ndarray, weights: np.ndarray) -> float:
    # both arrays are laid out over -N..N; fold into |i| order and add from the far end
    N = (len(values) - 1) // 2
    terms = weights[N:] * values[N:]
    terms[1:] += weights[N - 1::-1] * values[N - 1::-1] if N else 0.0
    return math.fsum(terms[::-1])


def weighted_mean(s: TwoSidedSequence, kw: KernelWeights) -> float:
    """``sum_i K_N(i) s(i)`` over the window of ``kw``."""
    return _ascending_sum(s.window(kw.N), np.asarray(kw.weights))


def cesaro_mean(s: TwoSidedSequence, N: int) -> float:
    """Symmetric window average ``(2N+1)^-1 sum_{|i|<=N} s(i)``."""
    N = _check_width(N)
    return math.fsum(s.window(N)) / (2 * N + 1)


def abel_kernel_mean(s: TwoSidedSequence, alpha: float, tol: float = 1e-9) -> float:
    """Certified truncation of ``sum_i K_inf(i) s(i)``; the error is below ``tol``."""
    alpha = _check_alpha(alpha)
    if s.bound == 0:
        return 0.0
    N = infinite_tail_cutoff(alpha, tol / s.bound)
    weights = infinite_normalizer(alpha) * np.abs(_powers(alpha, N))
    weights = np.concatenate([weights[:0:-1], weights])
    return _ascending_sum(s.window(N), weights)


@dataclass(frozen=True)
class TauberRow:
    alpha: float
    abel: float
    cesaro: float
    gap: float
    tolerance: float


@dataclass
class TauberTable:
    rows: List[TauberRow]
    N_cesaro: int

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.rows])

    @property
    def monotone(self) -> bool:
        """Gaps nonincreasing along increasing alpha, up to 1e-6 jitter."""
        order = np.argsort([r.alpha for r in self.rows])
        return bool(np.all(np.diff(self.gaps[order]) <= 1e-6))


def tauberian_gap(
    s: TwoSidedSequence,
    alphas: Sequence[float],
    N_cesaro: int,
    tol: float = 1e-9,
    converged_tol: float = 1e-4,
) -> TauberTable:
    """Compare kernel means with the Cesaro limit estimate for each alpha.

    The Cesaro mean at ``N_cesaro`` stands in for its limit; it must agree
    with the mean at ``N_cesaro // 2`` to ``converged_tol``. Each row's
    ``tolerance`` is ``tol + 2 |cesaro(N) - cesaro(N/2)|``, which covers both
    truncations.
    """
    N_cesaro = _check_width(N_cesaro)
    full = cesaro_mean(s, N_cesaro)
    half = cesaro_mean(s, N_cesaro // 2)
    if not abs(full - half) < converged_tol:
        raise CesaroNotConverged(full, half)
    slack = tol + 2.0 * abs(full - half)
    rows = []
    for alpha in alphas:
        abel = abel_kernel_mean(s, alpha, tol)
        rows.append(TauberRow(float(alpha), abel, full, abs(abel - full), slack))
    return TauberTable(rows, N_cesaro)


def finite_width_gap(s: TwoSidedSequence, alpha: float, N: int) -> float:
    """Bound on ``sup |sum K_N q - sum K_inf q|`` over sequences bounded like ``s``.

    Equals ``bound * (sum_{|i|<=N} |K_N(i) - K_inf(i)| + K_inf tail mass)``.
    """
    if s.bound == 0:
        return 0.0
    kw = kernel_weights(alpha, N)
    inf_weights = infinite_normalizer(alpha) * _powers(alpha, N)
    inf_weights = np.concatenate([inf_weights[:0:-1], inf_weights])
    diff = math.fsum(np.abs(np.asarray(kw.weights) - inf_weights))
    return s.bound * (diff + tail_mass(alpha, N))


# the operation name used in the experiment tables
finiteN_uniformity_gap = finite_width_gap
