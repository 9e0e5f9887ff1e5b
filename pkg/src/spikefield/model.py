"""Shared domain types: firing-rate functions, weight laws, network config,
initial conditions and seeded random streams.

Every rate function in the closed family is written as

    b(x) = coef * x**exponent + floor

with ``coef >= 0``, ``exponent > 0`` and ``floor >= 0``.  Constant rates use
``coef = 0``; affine rates use ``exponent = 1``.  The numba kernels in the
simulation modules consume exactly this triple (see :meth:`RateFunction.params`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

INF = math.inf

# integer codes for the weight laws inside numba kernels
WEIGHT_CONSTANT = 0
WEIGHT_UNIFORM = 1


class DomainError(ValueError):
    """Raised when a potential or parameter lies outside its domain."""


# ---------------------------------------------------------------------------
# firing rates

@dataclass(frozen=True)
class RateFunction:
    """Base class; use :class:`Constant`, :class:`Affine` or :class:`Power`."""

    def params(self) -> tuple[float, float, float]:
        """(coef, exponent, floor) such that b(x) = coef*x**exponent + floor."""
        raise NotImplementedError

    @property
    def b0(self) -> float:
        """Rate at zero potential."""
        return self.params()[2]

    def __call__(self, x):
        coef, expo, floor = self.params()
        x = np.asarray(x, dtype=float)
        if coef == 0.0:
            out = np.full_like(x, floor)
        elif expo == 1.0:
            out = coef * x + floor
        else:
            out = coef * np.power(x, expo) + floor
        return out if out.ndim else float(out)

    def slope_at_zero(self) -> float:
        """lim_{x->0} b(x)/x, possibly infinite."""
        coef, expo, floor = self.params()
        if floor > 0:
            return INF
        if coef == 0.0:
            return 0.0
        if expo > 1:
            return 0.0
        if expo == 1:
            return coef
        return INF

    def hazard_to_zero(self, x: float) -> float:
        """Total hazard of an isolated neuron decaying from ``x``: int_0^x b(s)/s ds."""
        if x < 0:
            raise DomainError(f"potential must be >= 0, got {x}")
        if x == 0:
            return 0.0
        coef, expo, floor = self.params()
        if floor > 0:
            return INF
        return coef * x**expo / expo

    def flow_hazard(self, x0: float, s: float) -> float:
        """int_0^s b(x0 e^{-u}) du."""
        coef, expo, floor = self.params()
        decay = coef * x0**expo / expo * -math.expm1(-expo * s) if coef > 0 and x0 > 0 else 0.0
        return decay + (floor * s if floor > 0 else 0.0)

    def check_monotone(self, grid=None) -> bool:
        grid = np.arange(0.0, 10.0 + 1e-12, 0.01) if grid is None else np.asarray(grid)
        vals = np.asarray(self(grid))
        return bool(np.all(vals >= 0) and np.all(np.diff(vals) >= 0))


@dataclass(frozen=True)
class Constant(RateFunction):
    rate0: float

    def __post_init__(self):
        if not self.rate0 >= 0:
            raise DomainError(f"constant rate must be >= 0, got {self.rate0}")

    def params(self):
        return 0.0, 1.0, float(self.rate0)


@dataclass(frozen=True)
class Affine(RateFunction):
    """b(x) = slope*x + intercept."""

    slope: float
    intercept: float = 0.0

    def __post_init__(self):
        if not (self.slope >= 0 and self.intercept >= 0):
            raise DomainError("affine rate needs slope >= 0 and intercept >= 0")

    def params(self):
        return float(self.slope), 1.0, float(self.intercept)


@dataclass(frozen=True)
class Power(RateFunction):
    """b(x) = coef*x**exponent + intercept."""

    coef: float
    exponent: float
    intercept: float = 0.0

    def __post_init__(self):
        if not (self.coef > 0 and self.exponent > 0 and self.intercept >= 0):
            raise DomainError("power rate needs coef > 0, exponent > 0, intercept >= 0")

    def params(self):
        return float(self.coef), float(self.exponent), float(self.intercept)


def eval_rate(b: RateFunction, x: float) -> float:
    if np.any(np.asarray(x) < 0):
        raise DomainError(f"potential must be >= 0, got {x}")
    return b(x)


def rate_slope_at_zero(b: RateFunction) -> float:
    return b.slope_at_zero()


def remaining_hazard_to_zero(b: RateFunction, x: float) -> float:
    return b.hazard_to_zero(x)


# ---------------------------------------------------------------------------
# synaptic weights

@dataclass(frozen=True)
class WeightDistribution:
    def params(self) -> tuple[int, float, float]:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def support_bound(self) -> float:
        raise NotImplementedError

    def laplace(self, xi):
        """E(exp(-xi*W))."""
        raise NotImplementedError

    def sample(self, rng: "RngStream", size=None):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantWeight(WeightDistribution):
    w: float

    def __post_init__(self):
        if not self.w >= 0:
            raise DomainError("weight must be >= 0")

    def params(self):
        return WEIGHT_CONSTANT, float(self.w), float(self.w)

    @property
    def mean(self):
        return float(self.w)

    @property
    def support_bound(self):
        return float(self.w)

    def laplace(self, xi):
        return np.exp(-np.asarray(xi, dtype=float) * self.w)

    def sample(self, rng, size=None):
        return self.w if size is None else np.full(size, float(self.w))


@dataclass(frozen=True)
class UniformWeight(WeightDistribution):
    lo: float
    hi: float

    def __post_init__(self):
        if not (0 <= self.lo <= self.hi < INF):
            raise DomainError("uniform weights need 0 <= lo <= hi < inf")

    def params(self):
        return WEIGHT_UNIFORM, float(self.lo), float(self.hi)

    @property
    def mean(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def support_bound(self):
        return float(self.hi)

    def laplace(self, xi):
        xi = np.asarray(xi, dtype=float)
        width = self.hi - self.lo
        if width == 0:
            return np.exp(-xi * self.lo)
        y = xi * width
        # (1 - e^{-y})/y, with the y -> 0 limit
        ratio = np.where(y > 1e-12, -np.expm1(-y) / np.where(y > 1e-12, y, 1.0), 1.0 - 0.5 * y)
        return np.exp(-xi * self.lo) * ratio

    def sample(self, rng, size=None):
        return self.lo + (self.hi - self.lo) * rng.uniform(size)


def sample_weight(dist: WeightDistribution, rng: "RngStream"):
    return dist.sample(rng)


# ---------------------------------------------------------------------------
# randomness

class RngStream:
    """Seeded random stream with deterministic, order-independent substreams.

    ``split(k)`` derives child ``k`` from the seed alone, so substreams do not
    depend on how many draws the parent has already made.
    """

    def __init__(self, seed: Union[int, np.random.SeedSequence] = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._entropy, self._key = seed.entropy, tuple(seed.spawn_key)
        else:
            if seed < 0 or seed >= 2**64:
                raise DomainError("seed must be an unsigned 64-bit integer")
            self._entropy, self._key = int(seed), ()
        self._seq = None
        self._generator = None

    @property
    def seed_seq(self) -> np.random.SeedSequence:
        # hashing is deferred: most substreams of a short run are never drawn from
        if self._seq is None:
            self._seq = np.random.SeedSequence(entropy=self._entropy, spawn_key=self._key)
        return self._seq

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            self._generator = np.random.Generator(np.random.PCG64(self.seed_seq))
        return self._generator

    def uniform(self, size=None):
        return self.generator.random(size)

    def exponential(self, rate: float = 1.0, size=None):
        return self.generator.exponential(1.0 / rate, size)

    def split(self, child_id: int) -> "RngStream":
        child = RngStream.__new__(RngStream)
        child._entropy, child._key = self._entropy, self._key + (int(child_id),)
        child._seq = None
        child._generator = None
        return child

    def __repr__(self):
        return f"RngStream(entropy={self._entropy}, key={self._key})"


# ---------------------------------------------------------------------------
# network configuration and initial conditions

RAW = "raw"
MEAN_FIELD = "mean_field"


@dataclass(frozen=True)
class NetworkConfig:
    n: int
    rate: RateFunction
    weights: WeightDistribution
    scaling: str = RAW
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("network needs at least one neuron")
        if self.scaling not in (RAW, MEAN_FIELD):
            raise DomainError(f"unknown scaling {self.scaling!r}")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")

    @property
    def kick_scale(self) -> float:
        return 1.0 / self.n if self.scaling == MEAN_FIELD else 1.0

    def kernel_args(self):
        """Flat tuple consumed by the numba kernels."""
        coef, expo, floor = self.rate.params()
        kind, lo, hi = self.weights.params()
        return coef, expo, floor, kind, lo, hi, self.kick_scale


@dataclass(frozen=True)
class InitialCondition:
    def draw(self, n: int, rng: RngStream) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Dirac(InitialCondition):
    x: float

    def __post_init__(self):
        if self.x < 0:
            raise DomainError("initial potential must be >= 0")

    def draw(self, n, rng):
        return np.full(n, float(self.x))


@dataclass(frozen=True)
class UniformInterval(InitialCondition):
    lo: float
    hi: float

    def draw(self, n, rng):
        return np.clip(self.lo + (self.hi - self.lo) * rng.uniform(n), 0.0, None)


@dataclass(frozen=True)
class UniformAround(InitialCondition):
    """Uniform law centred at ``center`` with standard deviation ``std``, clipped at 0."""

    center: float
    std: float = 0.2

    def draw(self, n, rng):
        half = self.std * math.sqrt(3.0)
        return np.clip(self.center - half + 2 * half * rng.uniform(n), 0.0, None)


@dataclass(frozen=True)
class Explicit(InitialCondition):
    values: Sequence[float] = field(default_factory=tuple)

    def draw(self, n, rng):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (n,):
            raise DomainError(f"explicit initial condition has {vals.size} values, need {n}")
        if np.any(vals < 0):
            raise DomainError("initial potentials must be >= 0")
        return vals.copy()
