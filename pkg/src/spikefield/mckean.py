"""Picard iteration for the nonlinear limit equation of one neuron.

Given a guess u(t) for the population rate E(b(Z(t))), a neuron follows

    dZ = (-Z + E(V) * min(u(t), C)) dt,   reset to 0 at rate b(Z),

and averaging b(Z) over many such neurons yields the next guess.  The input
is piecewise constant on a uniform grid, so within a cell the potential is
Z(t+s) = A + (Z - A) e^{-s} and jumps are simulated exactly against Exp(1)
hazard budgets.  Budgets and initial draws are shared across iterations
(common random numbers), which makes the empirical Picard map nearly
deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from . import _kernels as K
from .discrete import DiscreteRunOutput
from .model import InitialCondition, RateFunction, RngStream

_SUBDIV_TOL = 1e-10
_MAX_INT_EXPO = 8
_MAX_DEPTH = 60


@njit(cache=True)
def _binom(k, j):
    out = 1.0
    for q in range(j):
        out = out * (k - q) / (q + 1)
    return out


@njit(cache=True)
def _gl(z0, target, lo, hi, coef, expo):
    c = z0 - target
    acc = 0.0
    for q in range(K.GL_NODES.size):
        w = lo + (hi - lo) * K.GL_NODES[q]
        acc += K.GL_WEIGHTS[q] * (target + c * math.exp(-w)) ** expo
    return coef * (hi - lo) * acc


@njit(cache=True)
def cell_hazard(z0, target, s, coef, expo, floor):
    """int_0^s b(target + (z0 - target) e^{-w}) dw."""
    out = floor * s
    if coef == 0.0:
        return out
    c = z0 - target
    ke = int(expo)
    if ke == expo and 1 <= ke <= _MAX_INT_EXPO:
        # binomial expansion of (target + c e^{-w})^k
        acc = target**ke * s
        for j in range(1, ke + 1):
            acc += _binom(ke, j) * target ** (ke - j) * c**j * (-math.expm1(-j * s)) / j
        return out + coef * max(acc, 0.0)
    # non-integer exponent: adaptive Gauss-Legendre bisection, which refines
    # only near w=0 where b(Z) has an endpoint singularity if z0 or target is 0
    return out + _adaptive_gl(z0, target, s, coef, expo)


@njit(cache=True)
def _adaptive_gl(z0, target, s, coef, expo):
    los = np.empty(_MAX_DEPTH + 1)
    his = np.empty(_MAX_DEPTH + 1)
    vals = np.empty(_MAX_DEPTH + 1)
    depth = np.empty(_MAX_DEPTH + 1, dtype=np.int64)
    los[0], his[0], depth[0] = 0.0, s, 0
    vals[0] = _gl(z0, target, 0.0, s, coef, expo)
    top = 1
    total = 0.0
    while top > 0:
        top -= 1
        lo, hi, whole, d = los[top], his[top], vals[top], depth[top]
        mid = 0.5 * (lo + hi)
        left = _gl(z0, target, lo, mid, coef, expo)
        right = _gl(z0, target, mid, hi, coef, expo)
        if abs(left + right - whole) <= _SUBDIV_TOL * (hi - lo) / s or d >= _MAX_DEPTH - 1:
            total += left + right
            continue
        # right half is pushed first so the left half is refined first
        los[top], his[top], vals[top], depth[top] = mid, hi, right, d + 1
        los[top + 1], his[top + 1], vals[top + 1], depth[top + 1] = lo, mid, left, d + 1
        top += 2
    return total


@njit(cache=True)
def _invert_cell(z0, target, budget, s_max, coef, expo, floor):
    """s in (0, s_max] where the cell hazard reaches ``budget``."""
    lo = 0.0
    hi = s_max
    s = 0.5 * s_max
    for _ in range(K.INV_MAX_ITER):
        f = cell_hazard(z0, target, s, coef, expo, floor) - budget
        if abs(f) <= K.INV_TOL:
            break
        if f > 0.0:
            hi = s
        else:
            lo = s
        z = target + (z0 - target) * math.exp(-s)
        d = K.rate(z, coef, expo, floor)
        s_new = s - f / d if d > 0.0 else -1.0
        if not (lo < s_new < hi):
            s_new = 0.5 * (lo + hi)
        s = s_new
    return s


@njit(cache=True)
def _frozen_pass(z0, budgets, inputs, h, coef, expo, floor, rate_sum, jumps_out, pot_out,
                 record):
    """Advance every particle across all cells; returns -1 or the index of a
    particle that ran out of budgets."""
    n_part = z0.size
    n_cells = inputs.size
    kmax = budgets.shape[1]
    for p in range(n_part):
        z = z0[p]
        k = 0
        left = budgets[p, 0]
        rate_sum[0] += K.rate(z, coef, expo, floor)
        if record:
            pot_out[0] = z
        for m in range(n_cells):
            a = inputs[m]
            rem = h
            t_cell = m * h
            while True:
                hz = cell_hazard(z, a, rem, coef, expo, floor)
                if hz < left:
                    left -= hz
                    z = a + (z - a) * math.exp(-rem)
                    break
                s = _invert_cell(z, a, left, rem, coef, expo, floor)
                if record:
                    jumps_out[k] = t_cell + (h - rem) + s
                z = 0.0
                k += 1
                if k >= kmax:
                    return p
                left = budgets[p, k]
                rem -= s
                if rem <= 0.0:
                    break
            rate_sum[m + 1] += K.rate(z, coef, expo, floor)
            if record:
                pot_out[m + 1] = z
    return -1


# ---------------------------------------------------------------------------

@dataclass
class MeanRateTrajectory:
    h: float
    values: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.values.size)

    @property
    def horizon(self) -> float:
        return self.h * (self.values.size - 1)


@dataclass
class PicardReport:
    gaps: list
    converged: bool
    trajectory: MeanRateTrajectory
    particles: int
    cutoff: float
    iterations: int
    first: Optional[MeanRateTrajectory] = field(default=None, repr=False)


@dataclass
class FrozenPath:
    times: np.ndarray
    rates: np.ndarray
    potentials: np.ndarray
    jump_times: np.ndarray


def _grid_steps(h, horizon):
    steps = int(round(horizon / h))
    if abs(steps * h - horizon) > 1e-9 * horizon:
        raise ValueError("horizon must be a multiple of the grid step")
    return steps


def _inputs(u_prev: MeanRateTrajectory, mean_weight, cutoff):
    # input on cell m is taken from the left grid point
    return mean_weight * np.minimum(u_prev.values[:-1], cutoff)


def frozen_input_trajectory(b: RateFunction, mean_weight: float, u_prev: MeanRateTrajectory,
                            init_draw: float, cutoff: float, rng: RngStream,
                            max_jumps: int = 1 << 16) -> FrozenPath:
    """One exact path of a neuron driven by the frozen input E(V) min(u_prev, C)."""
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    budgets = rng.exponential(1.0, max_jumps)[None, :]
    jumps = np.full(max_jumps, np.nan)
    rate_sum = np.zeros(u_prev.values.size)
    potentials = np.zeros(u_prev.values.size)
    coef, expo, floor = b.params()
    lost = _frozen_pass(np.array([float(init_draw)]), budgets,
                        _inputs(u_prev, mean_weight, cutoff), u_prev.h,
                        coef, expo, floor, rate_sum, jumps, potentials, True)
    if lost >= 0:
        raise RuntimeError("path needs more than max_jumps budgets")
    n_jumps = int(np.count_nonzero(~np.isnan(jumps)))
    return FrozenPath(u_prev.times, rate_sum, potentials, jumps[:n_jumps].copy())


class _ParticleEnsemble:
    """Initial draws and shared budget table, grown on demand."""

    def __init__(self, init: InitialCondition, particles: int, rng: RngStream):
        self.z0 = np.asarray(init.draw(particles, rng.split(0)), dtype=float)
        self.stream = rng.split(5)
        self.kmax = 0
        self.budgets = None
        self._grow(64)

    def _grow(self, kmax):
        # row-major draws of shape (kmax, P): a larger table keeps the prefix
        gen = RngStream(self.stream.seed_seq).generator
        draws = gen.exponential(1.0, (kmax, self.z0.size))
        self.budgets = np.ascontiguousarray(draws.T)
        self.kmax = kmax

    def mean_rate(self, b: RateFunction, inputs, h):
        coef, expo, floor = b.params()
        dummy = np.empty(0)
        while True:
            rate_sum = np.zeros(inputs.size + 1)
            lost = _frozen_pass(self.z0, self.budgets, inputs, h, coef, expo, floor,
                                rate_sum, dummy, dummy, False)
            if lost < 0:
                return rate_sum / self.z0.size
            self._grow(2 * self.kmax)


def picard_iterate(b: RateFunction, mean_weight: float, init: InitialCondition, h: float = 0.01,
                   horizon: float = 100.0, particles: int = 1000, cutoff: Optional[float] = None,
                   tol: float = 1e-3, max_iter: int = 30,
                   rng: Optional[RngStream] = None) -> PicardReport:
    """Iterate u_n = E(b(Z_n)) from the free-decay guess until the sup gap is below tol."""
    if not 0 < h <= 0.05:
        raise ValueError("grid step must lie in (0, 0.05]")
    if particles < 1000:
        raise ValueError("need at least 1000 particles")
    rng = RngStream(0) if rng is None else rng
    steps = _grid_steps(h, horizon)
    ens = _ParticleEnsemble(init, particles, rng)
    times = h * np.arange(steps + 1)
    u = np.asarray(b(np.outer(np.exp(-times), ens.z0)).mean(axis=1), dtype=float)
    first = MeanRateTrajectory(h, u)
    if cutoff is None:
        cutoff = 10.0 * (u.max() + b.b0)
        if not cutoff > 0:
            cutoff = 1.0
    gaps = []
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        new = ens.mean_rate(b, _inputs(MeanRateTrajectory(h, u), mean_weight, cutoff), h)
        gaps.append(float(np.max(np.abs(new - u))))
        u = new
        if gaps[-1] <= tol:
            converged = True
            break
    return PicardReport(gaps, converged, MeanRateTrajectory(h, u), particles, float(cutoff), it,
                        first)


def compare_with_particles(picard: MeanRateTrajectory, particle_run: DiscreteRunOutput) -> float:
    """Largest gap between the limit rate and the particle rate on the shared time range."""
    t = particle_run.times
    keep = t <= picard.horizon + 1e-9
    ref = np.interp(t[keep], picard.times, picard.values)
    return float(np.max(np.abs(ref - particle_run.mean_rate[keep])))
