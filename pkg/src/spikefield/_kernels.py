"""Numba primitives shared by the simulators.

Rates arrive as (coef, expo, floor) with b(x) = coef*x**expo + floor, weights
as (kind, lo, hi) with kind 0 = constant lo, kind 1 = uniform on [lo, hi].
"""
import math

import numpy as np
from numba import njit

INV_TOL = 1e-12
INV_MAX_ITER = 60


@njit(cache=True)
def rate(x, coef, expo, floor):
    if coef == 0.0:
        return floor
    if expo == 1.0:
        return coef * x + floor
    if expo == 2.0:
        return coef * x * x + floor
    return coef * x**expo + floor


@njit(cache=True)
def decay_hazard(x0, s, coef, expo, floor):
    """int_0^s b(x0 e^{-u}) du."""
    out = floor * s
    if coef > 0.0 and x0 > 0.0:
        out += coef * x0**expo / expo * -math.expm1(-expo * s)
    return out


@njit(cache=True)
def invert_decay_hazard(x0, target, coef, expo, floor):
    """Duration s with decay_hazard(x0, s) == target, or inf when never reached."""
    total = 0.0
    if coef > 0.0 and x0 > 0.0:
        total = coef * x0**expo / expo
    if floor == 0.0:
        if target >= total:
            return math.inf
        return -math.log1p(-target / total) / expo
    if total == 0.0:
        return target / floor
    hi = target / floor
    if target < total:
        hi = min(hi, -math.log1p(-target / total) / expo)
    lo = 0.0
    s = 0.0
    for _ in range(INV_MAX_ITER):
        f = total * -math.expm1(-expo * s) + floor * s - target
        if abs(f) <= INV_TOL:
            break
        if f > 0.0:
            hi = s
        else:
            lo = s
        d = total * expo * math.exp(-expo * s) + floor
        s_new = s - f / d
        if not (lo < s_new < hi):
            s_new = 0.5 * (lo + hi)
        s = s_new
    return s


@njit(cache=True)
def draw_weight(rng, kind, lo, hi):
    if kind == 0:
        return lo
    return lo + (hi - lo) * rng.random()


# Gauss-Legendre nodes on [0, 1]
_x, _w = np.polynomial.legendre.leggauss(16)
GL_NODES = 0.5 * (_x + 1.0)
GL_WEIGHTS = 0.5 * _w
