"""Invariant distributions of the mean-field limit.

A stationary state is parameterized by its mean firing rate ``beta``.  Its
support is [0, alpha) with ``alpha = beta * E(V)`` and every singular
u-space integral is taken after the substitution u = alpha*(1 - e^{-s}),
which turns the density into exp(-I(s)) ds / C with

    I(s) = int_0^s b(alpha*(1 - e^{-w})) dw
         = coef * alpha**a * G_a(s) + floor * s,
    G_a(s) = int_0^s (1 - e^{-w})**a dw.

``C(beta) = int_0^inf exp(-I(s)) ds`` is the mean time to the first spike
along the flow, and a nontrivial stationary state solves beta*C(beta) = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from ._kernels import GL_NODES, GL_WEIGHTS
from .model import INF, Power, RateFunction, RngStream

TRIVIAL = "trivial"
NONTRIVIAL = "nontrivial"

STABLE = "stable"
UNSTABLE = "unstable"
UNDETERMINED = "undetermined"
NOT_APPLICABLE = "not_applicable"


class Divergent(ArithmeticError):
    """C(beta) is infinite: the rate vanishes on the whole support."""


class BracketError(RuntimeError):
    """A minimization or root bracket could not be established."""


# ---------------------------------------------------------------------------
# G_a on a fixed geometric panel grid

_S_MIN, _S_MAX, _PANELS = 1e-10, 1e8, 720


@dataclass(frozen=True)
class _Quadrature:
    nodes: np.ndarray    # GL nodes on all panels, increasing
    weights: np.ndarray
    g_nodes: np.ndarray  # G_a at the nodes
    pts: np.ndarray      # panel edges merged with nodes
    g_pts: np.ndarray    # G_a at pts
    s_end: float
    g_end: float


def _g_integrand(w, a):
    return (-np.expm1(-w)) ** a


def _gl_between(lo, hi, a):
    """int_lo^hi (1 - e^{-w})^a dw for arrays of interval ends."""
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    w = lo + (hi - lo) * GL_NODES
    return ((hi - lo)[..., 0]) * (_g_integrand(w, a) @ GL_WEIGHTS)


def _g_affine(s):
    s = np.asarray(s, dtype=float)
    small = s < 1e-4
    ss = np.where(small, s, 0.0)
    series = ss * ss * (0.5 - ss / 6.0 + ss * ss / 24.0)
    return np.where(small, series, s + np.expm1(-np.where(small, 1.0, s)))


@lru_cache(maxsize=16)
def _quadrature(a: float) -> _Quadrature:
    edges = np.concatenate([[0.0], np.geomspace(_S_MIN, _S_MAX, _PANELS + 1)])
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = (lo + (hi - lo) * GL_NODES).ravel()
    weights = ((hi - lo) * GL_WEIGHTS).ravel()
    pts = np.sort(np.concatenate([edges, nodes]))
    if a == 1.0:
        g_pts = _g_affine(pts)
    else:
        g_pts = np.concatenate([[0.0], np.cumsum(_gl_between(pts[:-1], pts[1:], a))])
    g_nodes = np.interp(nodes, pts, g_pts)  # nodes are members of pts: exact lookup
    return _Quadrature(nodes, weights, g_nodes, pts, g_pts, float(pts[-1]), float(g_pts[-1]))


def g_power(a: float, s):
    """G_a(s) = int_0^s (1 - e^{-w})^a dw, vectorized over s >= 0."""
    s = np.asarray(s, dtype=float)
    if a == 1.0:
        return _g_affine(s)
    q = _quadrature(float(a))
    inside = np.minimum(s, q.s_end)
    k = np.clip(np.searchsorted(q.pts, inside, side="right") - 1, 0, q.pts.size - 1)
    out = q.g_pts[k] + _gl_between(q.pts[k], inside, a)
    # beyond s_end the integrand equals 1 in double precision
    return out + np.maximum(s - q.s_end, 0.0)


def _survival_integral(scale: float, a: float, floor: float) -> float:
    """int_0^inf exp(-scale*G_a(s) - floor*s) ds."""
    slope_end = scale + floor
    if not slope_end > 0:
        raise Divergent("rate vanishes on the support, C(beta) is infinite")
    if scale == 0.0:
        return 1.0 / floor
    q = _quadrature(float(a))
    body = q.weights @ np.exp(-scale * q.g_nodes - floor * q.nodes)
    # hazard is linear past s_end, so the tail is exact
    tail = math.exp(-(scale * q.g_end + floor * q.s_end)) / slope_end
    return float(body + tail)


def _flow_params(b: RateFunction, alpha: float):
    coef, a, floor = b.params()
    scale = coef * alpha**a if (coef > 0 and alpha > 0) else 0.0
    return scale, a, floor


def hazard_along_flow(b: RateFunction, alpha: float, s):
    """I(s) = int_0^s b(alpha*(1 - e^{-w})) dw."""
    scale, a, floor = _flow_params(b, alpha)
    s = np.asarray(s, dtype=float)
    out = floor * s
    if scale > 0:
        out = out + scale * g_power(a, s)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# C(beta) and the fixed-point equation

def survival_along_flow(b: RateFunction, alpha: float, t):
    """P(no spike before t) for a neuron climbing from 0 towards alpha."""
    if alpha < 0 or np.any(np.asarray(t) < 0):
        raise ValueError("alpha and t must be non-negative")
    return np.exp(-hazard_along_flow(b, alpha, t))


def psi_function(x: float, a: float) -> float:
    """Psi(x) = int_0^inf exp(-x*G_a(s)) ds, strictly decreasing in x > 0."""
    if not x > 0:
        return INF
    return _survival_integral(float(x), float(a), 0.0)


def c_of_beta(b: RateFunction, mean_weight: float, beta: float, tol: float = 1e-8) -> float:
    """Mean first-spike time along the flow towards alpha = beta*E(V).

    The fixed panel rule is accurate to about 1e-12 relative, well inside
    any ``tol`` down to that level.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    if tol < 1e-12:
        raise ValueError("tolerance below the quadrature accuracy (1e-12)")
    return _survival_integral(*_flow_params(b, beta * mean_weight))


def fixed_point_residual(b: RateFunction, mean_weight: float, beta: float) -> float:
    """beta*C(beta) - 1.

    The right-hand side is 1 because b(alpha) > 0 for every rate in the
    family once alpha > 0; a rate vanishing on [0, alpha] raises Divergent.
    """
    return beta * c_of_beta(b, mean_weight, beta) - 1.0


def classify_trivial_stability(b: RateFunction, mean_weight: float) -> str:
    """Stability of the dead state from rho = b'(0) * E(V)."""
    if b.b0 > 0:
        return NOT_APPLICABLE
    slope = b.slope_at_zero()
    rho = 0.0 if mean_weight == 0 else slope * mean_weight
    if rho < 1:
        return STABLE
    if rho > 1:
        return UNSTABLE
    return UNDETERMINED


@dataclass(frozen=True)
class StationarySolution:
    beta: float
    alpha: float
    c: float
    kind: str
    stability: str


def _log_grid_roots(fun, lo, hi, points, xtol=1e-15):
    """Sign-change bracketing on a log grid, then Brent refinement."""
    betas = np.geomspace(lo, hi, points)
    vals = np.array([fun(x) for x in betas])
    roots = []
    for k in range(points - 1):
        v0, v1 = vals[k], vals[k + 1]
        if v0 == 0.0:
            roots.append(float(betas[k]))
        elif v0 * v1 < 0:
            roots.append(optimize.brentq(fun, betas[k], betas[k + 1], xtol=xtol * betas[k],
                                         rtol=4 * np.finfo(float).eps, maxiter=200))
    if vals[-1] == 0.0:
        roots.append(float(betas[-1]))
    return roots


def find_stationary(b: RateFunction, mean_weight: float, beta_range=(1e-4, 1e2),
                    grid_points: int = 512, tol: float = 1e-10) -> list[StationarySolution]:
    """All stationary states: the dead state (if b(0)=0) plus scanned roots."""
    if grid_points < 64:
        raise ValueError("grid_points must be at least 64")
    lo, hi = beta_range
    if not 0 < lo < hi:
        raise ValueError("beta_range must be positive and increasing")
    out = []
    if b.b0 == 0:
        out.append(StationarySolution(0.0, 0.0, INF, TRIVIAL,
                                      classify_trivial_stability(b, mean_weight)))
    if mean_weight == 0 and b.b0 == 0:
        return out  # no input, so the support collapses and C diverges

    def resid(beta):
        return fixed_point_residual(b, mean_weight, beta)

    for beta in _log_grid_roots(resid, lo, hi, grid_points):
        if abs(resid(beta)) > tol:
            raise ArithmeticError(f"root refinement stalled at beta={beta}")
        out.append(StationarySolution(beta, beta * mean_weight, c_of_beta(b, mean_weight, beta),
                                      NONTRIVIAL, UNDETERMINED))
    return out


# ---------------------------------------------------------------------------
# invariant density

@dataclass
class DensityTable:
    """Tabulated invariant density on [0, alpha).

    ``dist`` holds alpha - u at each node so that nodes close to alpha keep
    full relative precision.
    """

    alpha: float
    c: float
    s: np.ndarray
    nodes: np.ndarray
    dist: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    rate: Optional[RateFunction] = field(default=None, repr=False)

    def integral(self) -> float:
        """int f(u) du by Simpson's rule in the flow-time coordinate."""
        return float(integrate.simpson(self.density * self.dist, x=self.s))

    def pdf(self, u):
        """Density at arbitrary points, zero outside [0, alpha)."""
        u = np.asarray(u, dtype=float)
        inside = (u >= 0) & (u < self.alpha)
        uu = np.where(inside, u, 0.0)
        s = -np.log1p(-uu / self.alpha)
        f = np.exp(s - hazard_along_flow(self.rate, self.alpha, s)) / (self.c * self.alpha)
        out = np.where(inside, f, 0.0)
        return out if out.ndim else float(out)

    def mean(self) -> float:
        return float(integrate.simpson(self.nodes * self.density * self.dist, x=self.s))


def invariant_density(b: RateFunction, mean_weight: float, beta: float,
                      nodes: int = 20001) -> DensityTable:
    """Tabulate f(u) = exp(-int_0^u b(v)/(alpha-v) dv) / (C (alpha - u))."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    alpha = beta * mean_weight
    if not alpha > 0:
        raise Divergent("support collapses to a point when E(V) = 0")
    c = c_of_beta(b, mean_weight, beta)
    s_end = 1.0
    while hazard_along_flow(b, alpha, s_end) < 40.0:
        s_end *= 2.0
    if s_end > 10.0:
        # keep resolution near u = 0 when the flow is slow
        half = nodes // 2
        s = np.concatenate([np.linspace(0.0, 10.0, half + 1)[:-1],
                            np.linspace(10.0, s_end, nodes - half)])
    else:
        s = np.linspace(0.0, s_end, nodes)
    dist = alpha * np.exp(-s)
    u = -alpha * np.expm1(-s)
    hazard = hazard_along_flow(b, alpha, s)
    density = np.exp(s - hazard - math.log(c * alpha))
    mass = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(s) *
                                            (np.exp(-hazard[1:]) + np.exp(-hazard[:-1])))])
    cdf = mass / mass[-1]
    return DensityTable(alpha, c, s, u, dist, density, cdf, b)


def sample_invariant(table: DensityTable, rng: RngStream, size=None):
    """Inverse-CDF draws from the tabulated density."""
    q = rng.uniform(size)
    d = np.interp(q, table.cdf, table.dist)
    below = np.nextafter(table.alpha, 0.0)
    out = np.minimum(table.alpha - d, below)
    out = np.maximum(out, 0.0)
    return out if np.ndim(out) else float(out)


def self_consistency_rate(table: DensityTable, b: RateFunction) -> float:
    """int b(u) f(u) du, the stationary firing rate implied by the table."""
    return float(integrate.simpson(b(table.nodes) * table.density * table.dist, x=table.s))


# ---------------------------------------------------------------------------
# superlinear power rates

def superlinear_residual(a: float, rho: float, beta: float) -> float:
    """beta*Psi(rho*beta**a) - 1, the fixed-point equation in reduced form."""
    return beta * psi_function(rho * beta**a, a) - 1.0


def _invert_psi(target: float, a: float) -> float:
    """x > 0 with Psi(x) = target."""
    def f(logx):
        return math.log(psi_function(math.exp(logx), a)) - math.log(target)

    # Psi(x) ~ 1/x for small x
    lo = hi = -math.log(target)
    while f(lo) <= 0:
        lo -= 2.0
    while f(hi) >= 0:
        hi += 2.0
    return math.exp(optimize.brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps))


def superlinear_rho_of_beta(a: float, mean_weight: float, beta: float, tol: float = 1e-12) -> float:
    """Coupling rho = lambda*E(V)^a at which beta is a stationary rate.

    ``mean_weight`` does not enter the reduced equation; it is accepted so
    that callers can pass the same arguments as to the C-form routines.
    """
    if not a > 1:
        raise ValueError("superlinear exponent must exceed 1")
    if not beta > 0:
        raise ValueError("beta must be positive")
    return _invert_psi(1.0 / beta, a) / beta**a


@dataclass(frozen=True)
class SuperlinearDiagram:
    exponent: float
    rho_c: float
    beta_c: float
    betas: np.ndarray = field(repr=False)
    rhos: np.ndarray = field(repr=False)


def superlinear_critical(a: float, mean_weight: float = 1.0, beta_range=(1e-3, 1e3),
                         grid_points: int = 64) -> SuperlinearDiagram:
    """Minimum of beta -> rho(beta): below rho_c only the dead state exists."""
    lo, hi = beta_range
    betas = np.geomspace(lo, hi, grid_points)
    rhos = np.array([superlinear_rho_of_beta(a, mean_weight, x) for x in betas])
    k = int(np.argmin(rhos))
    if k == 0 or k == grid_points - 1:
        raise BracketError("rho(beta) has no interior minimum on the scanned range")
    logs = np.log(betas)

    def f(logb):
        return superlinear_rho_of_beta(a, mean_weight, math.exp(logb))

    res = optimize.minimize_scalar(f, bracket=(logs[k - 1], logs[k], logs[k + 1]),
                                   method="golden", tol=1e-10)
    beta_c = math.exp(res.x)
    rho_c = float(res.fun)
    if rho_c > rhos[k]:
        beta_c, rho_c = float(betas[k]), float(rhos[k])
    return SuperlinearDiagram(float(a), rho_c, beta_c, betas, rhos)


@dataclass(frozen=True)
class Branches:
    beta_minus: float
    beta_plus: float


def superlinear_branches(a: float, mean_weight: float, rho: float, tol: float = 1e-9,
                         diagram: Optional[SuperlinearDiagram] = None):
    """Stationary rates for coupling rho: None, the critical point, or two branches."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    diagram = superlinear_critical(a, mean_weight) if diagram is None else diagram
    rho_c, beta_c = diagram.rho_c, diagram.beta_c
    if abs(rho - rho_c) <= tol * rho_c:
        return Branches(beta_c, beta_c)
    if rho < rho_c:
        return None

    def g(logb):
        return math.log(superlinear_rho_of_beta(a, mean_weight, math.exp(logb)) / rho)

    mid = math.log(beta_c)
    lo = mid - 1.0
    while g(lo) <= 0:
        lo -= 1.0
    hi = mid + 1.0
    while g(hi) <= 0:
        hi += 1.0
    kw = dict(xtol=1e-14, rtol=4 * np.finfo(float).eps)
    return Branches(math.exp(optimize.brentq(g, lo, mid, **kw)),
                    math.exp(optimize.brentq(g, mid, hi, **kw)))


def power_rate_for_rho(a: float, mean_weight: float, rho: float) -> Power:
    """The rate lambda*x^a whose coupling lambda*E(V)^a equals rho."""
    return Power(rho / mean_weight**a, a)
