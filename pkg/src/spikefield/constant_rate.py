"""Equilibrium of a network whose neurons fire at a constant rate.

When b is constant the spike trains are independent Poisson processes, so
the stationary state can be built exactly by looking backwards in time:
neuron i was last reset at its most recent spike, and its potential is the
decayed sum of the kicks received since then.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy import integrate

from . import _kernels as K
from .model import RngStream, WeightDistribution


@njit(cache=True)
def _backward_samples(n, rate, wkind, wlo, whi, scale, count, rng, out):
    first = np.empty(n)
    # flat store of (time, source) for every point on [0, T]
    cap = 4 * n + 16
    pt = np.empty(cap)
    src = np.empty(cap, dtype=np.int64)
    for m in range(count):
        horizon = 0.0
        for j in range(n):
            first[j] = rng.exponential(1.0 / rate)
            if first[j] > horizon:
                horizon = first[j]
        npts = 0
        for j in range(n):
            extra = rng.poisson(rate * (horizon - first[j]))
            need = npts + 1 + extra
            if need > cap:
                while cap < need:
                    cap *= 2
                pt2 = np.empty(cap)
                src2 = np.empty(cap, dtype=np.int64)
                pt2[:npts] = pt[:npts]
                src2[:npts] = src[:npts]
                pt = pt2
                src = src2
            pt[npts] = first[j]
            src[npts] = j
            npts += 1
            for _ in range(extra):
                pt[npts] = first[j] + (horizon - first[j]) * rng.random()
                src[npts] = j
                npts += 1
        order = np.argsort(pt[:npts])
        decay = np.empty(npts)
        for q in range(npts):
            decay[q] = scale * math.exp(-pt[order[q]])
        for i in range(n):
            acc = 0.0
            for q in range(npts):
                p = order[q]
                if pt[p] > first[i]:
                    break
                if src[p] != i:
                    acc += K.draw_weight(rng, wkind, wlo, whi) * decay[q]
            out[m, i] = acc


def backward_coupling_samples(n: int, rate: float, weights: WeightDistribution, rng: RngStream,
                              count: int, scale: float = 1.0) -> np.ndarray:
    """``count`` independent exact draws of the stationary potential vector.

    ``scale`` multiplies every kick (1/n for mean-field scaling).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not rate > 0:
        raise ValueError("rate must be positive")
    kind, lo, hi = weights.params()
    out = np.empty((count, n))
    _backward_samples(n, float(rate), kind, lo, hi, float(scale), count, rng.generator, out)
    return out


def backward_coupling_sample(n: int, rate: float, weights: WeightDistribution, rng: RngStream,
                             scale: float = 1.0) -> np.ndarray:
    """One exact draw of the stationary potential vector."""
    return backward_coupling_samples(n, rate, weights, rng, 1, scale)[0]


def equilibrium_mean(n: int, rate: float, mean_weight: float) -> float:
    """Stationary mean potential (n - 1) E(W) rate / (rate + 1)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return (n - 1) * mean_weight * rate / (rate + 1.0)


def atom_at_zero(n: int) -> float:
    """Probability that a neuron is the most recent to have fired."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return 1.0 / n


def _ramp(z):
    """z - 1 + e^{-z}, by series where the closed form cancels."""
    if z < 1e-3:
        return z * z * (0.5 - z * (1 / 6 - z * (1 / 24 - z / 120)))
    return z + math.expm1(-z)


def _complement(weights: WeightDistribution):
    """Scalar y -> 1 - E(exp(-y W)), accurate for small y."""
    kind, lo, hi = weights.params()
    if kind == 0 or hi == lo:
        return lambda y: -math.expm1(-y * lo)
    width = hi - lo
    # raw moments of the uniform law, for the series in y (avoids squaring tiny y)
    m = [(hi**(k + 1) - lo**(k + 1)) / ((k + 1) * width) for k in range(1, 6)]

    def comp(y):
        if y * hi < 1e-3:
            return y * (m[0] - y * (m[1] / 2 - y * (m[2] / 6 - y * (m[3] / 24 - y * m[4] / 120))))
        return (_ramp(y * hi) - _ramp(y * lo)) / (y * width)

    return comp


def laplace_transform(n: int, rate: float, weights: WeightDistribution, xi: float,
                      tol: float = 1e-8, scale: float = 1.0) -> float:
    """E(exp(-xi X_1)) at equilibrium by nested quadrature."""
    if xi < 0:
        raise ValueError("xi must be non-negative")
    if n == 1 or xi == 0:
        return 1.0
    comp = _complement(weights)
    y0 = scale * xi
    inner_tol = max(tol * 1e-2, 1e-13)

    def inner(x):
        val, _ = integrate.quad(lambda u: comp(y0 * math.exp(-u)), 0.0, x, epsabs=0.0,
                                epsrel=inner_tol, limit=200)
        return val

    def outer(x):
        return math.exp(-rate * (n - 1) * inner(x)) * rate * math.exp(-rate * x)

    # the integrand is bounded by rate*e^{-rate x}
    x_max = -math.log(tol * 1e-3) / rate
    val, _ = integrate.quad(outer, 0.0, x_max, epsabs=0.0, epsrel=max(tol, 1e-13), limit=200)
    return float(val)


def limit_density(rate: float, mean_weight: float, u):
    """Large-network stationary density (1/E)(1 - u/(rate E))^(rate - 1) on [0, rate E)."""
    if not rate > 0:
        raise ValueError("rate must be positive")
    u = np.asarray(u, dtype=float)
    top = rate * mean_weight
    inside = (u >= 0) & (u < top)
    ratio = np.where(inside, u / top, 0.0)
    out = np.where(inside, np.exp((rate - 1.0) * np.log1p(-ratio)) / mean_weight, 0.0)
    return out if out.ndim else float(out)


def limit_cdf(rate: float, mean_weight: float, u):
    u = np.asarray(u, dtype=float)
    top = rate * mean_weight
    ratio = np.clip(u / top, 0.0, 1.0)
    out = 1.0 - (1.0 - ratio) ** rate
    return out if out.ndim else float(out)
