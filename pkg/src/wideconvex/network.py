"""
Parametric unit families, noisy data generation and the wide network losses.

A width ``2N + 1`` network averages unit outputs ``f_{beta_i}(x)`` with the
fixed kernel weights ``K_N(i)``. Every unit sees the same input ``X_n`` and
its own noisy target ``Y^i_n = f_{beta_i}(X_n) + xi^i_n``.

Shapes follow one convention throughout: parameters ``(..., p)``, inputs
``(..., d)``, outputs ``(..., s)``; unit arrays are indexed by ``i + N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .epigraph import ParamBox
from .errors import (
    IndexOutOfRange,
    ParameterOutOfDomain,
    UnknownFamily,
    ValidationError,
)
from .geometry import interleave_index
from .kernel import kernel_weights

FAMILY_NAMES = ("affine", "sin_feature", "tanh_neuron")
NOISE_LAWS = ("gaussian", "uniform")


@dataclass(frozen=True, eq=False)
class ParametricFamily:
    """A map ``(beta, x) -> R^s`` with its Jacobian in ``beta``.

    Inputs are clipped to ``[input_lower, input_upper]`` before evaluation,
    which keeps ``lipschitz_beta`` uniform in ``x``.
    """

    name: str
    p: int
    d: int
    s: int
    domain: ParamBox
    input_lower: np.ndarray
    input_upper: np.ndarray
    lipschitz_beta: float
    _value: Callable = field(repr=False)
    _jac: Callable = field(repr=False)

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.input_lower, self.input_upper)

    def eval(self, beta, x) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        return self._value(beta, self.clip(x))

    def jacobian(self, beta, x) -> np.ndarray:
        """Derivative of ``eval`` in ``beta``, shape ``(..., s, p)``."""
        beta = np.asarray(beta, dtype=float)
        return self._jac(beta, self.clip(x))

    def subgrad(self, beta, x, residual) -> np.ndarray:
        """Gradient in ``beta`` of ``||residual||^2`` where ``residual = y - f_beta(x)``.

        Equals ``-2 J^T residual``. All builtin families are smooth, so this
        is the ordinary gradient.
        """
        jac = self.jacobian(beta, x)
        r = np.asarray(residual, dtype=float)
        return -2.0 * np.einsum("...sp,...s->...p", jac, r)

    def loss(self, beta, x, y) -> np.ndarray:
        r = np.asarray(y, dtype=float) - self.eval(beta, x)
        return np.sum(r * r, axis=-1)

    @property
    def input_norm_bound(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.input_lower), np.abs(self.input_upper))))


def _input_box(d, lower, upper):
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (d,)).copy()
    hi = np.broadcast_to(np.asarray(upper, dtype=float), (d,)).copy()
    if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValidationError(f"bad input box [{lo}, {hi}]")
    lo.setflags(write=False)
    hi.setflags(write=False)
    return lo, hi


def _affine(d, domain, lo, hi):
    def value(beta, x):
        return np.sum(beta * x, axis=-1, keepdims=True)

    def jac(beta, x):
        shape = np.broadcast_shapes(beta.shape[:-1], x.shape[:-1])
        return np.broadcast_to(x, shape + (d,))[..., None, :].copy()

    domain = domain or ParamBox(np.full(d, -2.0), np.full(d, 2.0), 0.2)
    fam = ParametricFamily("affine", d, d, 1, domain, lo, hi, 0.0, value, jac)
    return fam


def _sin_feature(d, domain, lo, hi):
    span = np.where(hi > lo, hi - lo, 1.0)

    def features(x):
        return 2.0 * (x - lo) / span - 1.0

    def value(beta, x):
        return np.sin(np.sum(beta * features(x), axis=-1, keepdims=True))

    def jac(beta, x):
        phi = features(x)
        t = np.sum(beta * phi, axis=-1, keepdims=True)
        return (np.cos(t) * phi)[..., None, :]

    domain = domain or ParamBox(np.full(d, -3.0), np.full(d, 3.0), 0.1)
    return ParametricFamily("sin_feature", d, d, 1, domain, lo, hi, 0.0, value, jac)


def _tanh_neuron(d, domain, lo, hi):
    def value(beta, x):
        c, w, b = beta[..., :1], beta[..., 1 : d + 1], beta[..., d + 1 :]
        return c * np.tanh(np.sum(w * x, axis=-1, keepdims=True) + b)

    def jac(beta, x):
        c, w, b = beta[..., :1], beta[..., 1 : d + 1], beta[..., d + 1 :]
        t = np.tanh(np.sum(w * x, axis=-1, keepdims=True) + b)
        sech2 = 1.0 - t * t
        shape = np.broadcast_shapes(beta.shape[:-1], x.shape[:-1])
        xb = np.broadcast_to(x, shape + (d,))
        grad = np.concatenate(
            [np.broadcast_to(t, shape + (1,)), c * sech2 * xb, np.broadcast_to(c * sech2, shape + (1,))], axis=-1
        )
        return grad[..., None, :]

    p = d + 2
    domain = domain or ParamBox(np.full(p, -2.0), np.full(p, 2.0), 0.5)
    return ParametricFamily("tanh_neuron", p, d, 1, domain, lo, hi, 0.0, value, jac)


def builtin_family(name: str, d: int = 1, input_lower=-1.0, input_upper=1.0, domain: Optional[ParamBox] = None):
    """One of ``affine``, ``sin_feature``, ``tanh_neuron`` on a bounded input box.

    ``lipschitz_beta`` is a uniform-in-``x`` bound on ``||J||`` over the
    domain and input box.
    """
    if name not in FAMILY_NAMES:
        raise UnknownFamily(f"unknown family {name!r}; choose from {', '.join(FAMILY_NAMES)}")
    if int(d) != d or d < 1:
        raise ValidationError(f"input dimension must be a positive integer, got {d!r}")
    d = int(d)
    lo, hi = _input_box(d, input_lower, input_upper)
    fam = {"affine": _affine, "sin_feature": _sin_feature, "tanh_neuron": _tanh_neuron}[name](d, domain, lo, hi)
    if fam.domain.p != fam.p:
        raise ValidationError(f"{name} needs a {fam.p}-dimensional domain, got {fam.domain.p}")
    x_bound = fam.input_norm_bound
    if name == "affine":
        lip = x_bound
    elif name == "sin_feature":
        lip = math.sqrt(d)
    else:
        c_max = float(np.max(np.maximum(np.abs(fam.domain.lower[:1]), np.abs(fam.domain.upper[:1]))))
        lip = math.sqrt(1.0 + c_max**2 * (x_bound**2 + 1.0))
    object.__setattr__(fam, "lipschitz_beta", float(lip))
    return fam


@dataclass(frozen=True, eq=False)
class DataConfig:
    """Data law for a family.

    Shared-truth mode uses ``beta_star`` for every unit. Heterogeneous mode
    takes ``unit_beta``, a function of the unit index returning a parameter
    in the domain. ``input_lower``/``input_upper`` give the uniform input
    law and default to the family's input box.
    """

    family: ParametricFamily
    beta_star: Optional[np.ndarray] = None
    unit_beta: Optional[Callable[[int], np.ndarray]] = None
    input_lower: Optional[np.ndarray] = None
    input_upper: Optional[np.ndarray] = None
    noise: str = "gaussian"
    noise_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fam = self.family
        if self.unit_beta is None:
            beta = fam.domain.project(fam.domain.lower * 0.0) if self.beta_star is None else self.beta_star
            beta = np.atleast_1d(np.asarray(beta, dtype=float))
            if beta.shape != (fam.p,):
                raise ValidationError(f"beta_star must have {fam.p} entries, got shape {beta.shape}")
            if not fam.domain.contains(beta):
                raise ParameterOutOfDomain(0, beta)
            beta.setflags(write=False)
            object.__setattr__(self, "beta_star", beta)
        lo = fam.input_lower if self.input_lower is None else self.input_lower
        hi = fam.input_upper if self.input_upper is None else self.input_upper
        lo, hi = _input_box(fam.d, lo, hi)
        object.__setattr__(self, "input_lower", lo)
        object.__setattr__(self, "input_upper", hi)
        if self.noise not in NOISE_LAWS:
            raise ValidationError(f"noise must be one of {NOISE_LAWS}, got {self.noise!r}")
        scale = float(self.noise_scale)
        if not (math.isfinite(scale) and scale >= 0):
            raise ValidationError(f"noise scale must be finite and nonnegative, got {self.noise_scale!r}")
        object.__setattr__(self, "noise_scale", scale)
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must be an integer in [0, 2**64), got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))

    def beta_for(self, i: int) -> np.ndarray:
        if self.unit_beta is None:
            return self.beta_star
        beta = np.atleast_1d(np.asarray(self.unit_beta(i), dtype=float))
        if beta.shape != (self.family.p,) or not self.family.domain.contains(beta):
            raise ParameterOutOfDomain(i, beta)
        return beta


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Inputs ``X`` of shape ``(n, d)``; ``Y`` and ``xi`` of shape ``(2N+1, n, s)``."""

    family: ParametricFamily
    N: int
    X: np.ndarray
    Y: np.ndarray
    xi: np.ndarray
    betas: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def units(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1)

    def unit_Y(self, i: int) -> np.ndarray:
        return self.Y[i + self.N]

    def rows(self):
        """Rows ``n, i, x..., y..., xi...`` in sample-major order."""
        for n in range(self.n_samples):
            for j, i in enumerate(self.units):
                yield [n, int(i), *self.X[n], *self.Y[j, n], *self.xi[j, n]]

    def header(self):
        d, s = self.X.shape[1], self.Y.shape[2]
        return (
            ["n", "i"]
            + [f"x_{k + 1}" for k in range(d)]
            + [f"y_{k + 1}" for k in range(s)]
            + [f"xi_{k + 1}" for k in range(s)]
        )


def input_stream(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))


def unit_stream(seed: int, i: int) -> np.random.Generator:
    """Noise stream of unit ``i``; keyed by its interleaved position so no two units share one."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(interleave_index(i),)))


def _draw_noise(cfg: DataConfig, rng, shape):
    if cfg.noise_scale == 0:
        return np.zeros(shape)
    if cfg.noise == "gaussian":
        return rng.normal(0.0, cfg.noise_scale, shape)
    return rng.uniform(-cfg.noise_scale, cfg.noise_scale, shape)


def generate_batch(cfg: DataConfig, N: int, n_samples: int) -> SampleBatch:
    if int(N) != N or N < 0:
        raise ValidationError(f"N must be a nonnegative integer, got {N!r}")
    if int(n_samples) != n_samples or n_samples < 1:
        raise ValidationError(f"n_samples must be a positive integer, got {n_samples!r}")
    N, n_samples = int(N), int(n_samples)
    fam = cfg.family
    X = input_stream(cfg.seed).uniform(cfg.input_lower, cfg.input_upper, (n_samples, fam.d))
    units = range(-N, N + 1)
    betas = np.stack([cfg.beta_for(i) for i in units])
    xi = np.stack([_draw_noise(cfg, unit_stream(cfg.seed, i), (n_samples, fam.s)) for i in units])
    clean = fam.eval(betas[:, None, :], X[None, :, :])
    Y = clean + xi
    for arr in (X, Y, xi, betas):
        arr.setflags(write=False)
    return SampleBatch(fam, N, X, Y, xi, betas)


def _check_stack(B, family: ParametricFamily) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim == 1 and family.p == 1:
        B = B[:, None]
    if B.ndim != 2 or B.shape[1] != family.p or B.shape[0] % 2 != 1:
        raise ValidationError(f"expected an odd number of {family.p}-vectors, got shape {B.shape}")
    N = (B.shape[0] - 1) // 2
    for j, beta in enumerate(B):
        if not family.domain.contains(beta):
            raise ParameterOutOfDomain(j - N, beta)
    return B


def wide_output(B, alpha: float, x, family: ParametricFamily) -> np.ndarray:
    """Kernel-weighted network output ``sum_i K_N(i) f_{beta_i}(x)``."""
    B = _check_stack(B, family)
    N = (B.shape[0] - 1) // 2
    weights = np.asarray(kernel_weights(alpha, N).weights)
    outputs = family.eval(B, np.asarray(x, dtype=float)[None, :])
    return np.einsum("i,is->s", weights, outputs)


def _check_sample(batch: SampleBatch, n: int) -> int:
    if int(n) != n or not 0 <= n < batch.n_samples:
        raise IndexOutOfRange(f"sample index {n!r} outside 0..{batch.n_samples - 1}")
    return int(n)


def unit_residuals(B, batch: SampleBatch, n: int) -> np.ndarray:
    """``Y^i_n - f_{beta_i}(X_n)`` for every unit, shape ``(2N+1, s)``."""
    n = _check_sample(batch, n)
    B = _check_stack(B, batch.family)
    if B.shape[0] != 2 * batch.N + 1:
        raise ValidationError(f"batch has {2 * batch.N + 1} units, got {B.shape[0]} parameters")
    return batch.Y[:, n, :] - batch.family.eval(B, batch.X[n][None, :])


def unit_losses(B, batch: SampleBatch, n: int) -> np.ndarray:
    r = unit_residuals(B, batch, n)
    return np.sum(r * r, axis=-1)


def phi_loss(B, alpha: float, batch: SampleBatch, n: int) -> float:
    """Kernel-weighted sum of per-unit squared residuals at sample ``n``."""
    terms = unit_losses(B, batch, n)
    weights = np.asarray(kernel_weights(alpha, batch.N).weights)
    return math.fsum(weights * terms)


def lms_risk_estimate(B, alpha: float, batch: SampleBatch) -> float:
    """Sample mean of ``||sum_i K(i) (Y^i_n - f_{beta_i}(X_n))||^2``; residuals are aggregated first."""
    B = _check_stack(B, batch.family)
    if B.shape[0] != 2 * batch.N + 1:
        raise ValidationError(f"batch has {2 * batch.N + 1} units, got {B.shape[0]} parameters")
    weights = np.asarray(kernel_weights(alpha, batch.N).weights)
    outputs = batch.family.eval(B[:, None, :], batch.X[None, :, :])
    aggregate = np.einsum("i,ins->ns", weights, batch.Y - outputs)
    return float(np.mean(np.sum(aggregate * aggregate, axis=-1)))


@dataclass(frozen=True)
class AuditReport:
    family: str
    n_points: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def random_points(family: ParametricFamily, n: int, seed: int):
    """Seeded ``(beta, x)`` pairs drawn uniformly from the domain and input box."""
    rng = np.random.default_rng(seed)
    beta = rng.uniform(family.domain.lower, family.domain.upper, (n, family.p))
    x = rng.uniform(family.input_lower, family.input_upper, (n, family.d))
    return beta, x


def subgradient_audit(
    family: ParametricFamily, n_points: int = 100, seed: int = 0, h: float = 1e-5, rtol: float = 1e-4
) -> AuditReport:
    """Compare ``subgrad`` with central differences of the squared residual.

    Targets are ``y = f_beta(x) + 0.5`` plus a seeded perturbation so the
    residual never vanishes. Error is ``||analytic - fd|| / max(||fd||, 1e-6)``.
    """
    beta, x = random_points(family, n_points, seed)
    rng = np.random.default_rng([seed, 1])
    y = family.eval(beta, x) + 0.5 + rng.uniform(-0.25, 0.25, (n_points, family.s))
    analytic = family.subgrad(beta, x, y - family.eval(beta, x))
    fd = np.empty_like(analytic)
    for k in range(family.p):
        step = np.zeros(family.p)
        step[k] = h
        fd[:, k] = (family.loss(beta + step, x, y) - family.loss(beta - step, x, y)) / (2 * h)
    err = np.linalg.norm(analytic - fd, axis=1) / np.maximum(np.linalg.norm(fd, axis=1), 1e-6)
    return AuditReport(family.name, n_points, float(err.max()), rtol)


def lipschitz_audit(family: ParametricFamily, n_triples: int = 10_000, seed: int = 0) -> float:
    """Largest observed ``||f_b(x) - f_b'(x)|| / ||b - b'||`` over seeded triples."""
    b1, x = random_points(family, n_triples, seed)
    b2, _ = random_points(family, n_triples, seed + 1)
    num = np.linalg.norm(family.eval(b1, x) - family.eval(b2, x), axis=1)
    den = np.linalg.norm(b1 - b2, axis=1)
    keep = den > 0
    return float(np.max(num[keep] / den[keep]))
