"""Statistically exact event-driven simulation of the finite network.

Each neuron carries an Exp(1) hazard budget.  Between events potentials
decay as x*e^{-t}, so the hazard accrued over a gap has a closed form and
the next spike of every neuron is found by inverting it.  The neuron whose
budget runs out first spikes; every other neuron keeps its (decremented)
budget, which is exact by memorylessness.

Randomness layout for a run seeded by ``rng``:

* ``rng.split(0)``: initial potentials,
* ``rng.split(1)``: synaptic kicks,
* ``rng.split(2).split(i)``: hazard budgets of neuron ``i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from . import _kernels as K
from .model import InitialCondition, NetworkConfig, RateFunction, RngStream

NEVER_REACHED = math.inf

_HORIZON, _QUIET, _REFILL, _MAX_EVENTS, _LOG_FULL, _REFILL_KICKS = 0, 1, 2, 3, 4, 5
_BUDGET_BLOCK = 64
_KICK_BLOCK = 1024
_EMPTY = np.empty(0)


def flow_hazard(b: RateFunction, x0: float, s: float) -> float:
    """Hazard accrued by an isolated neuron decaying from ``x0`` during ``s``."""
    return b.flow_hazard(x0, s)


def invert_flow_hazard(b: RateFunction, x0: float, target: float) -> float:
    """Time at which the decaying neuron has accrued ``target`` hazard.

    Returns ``NEVER_REACHED`` (inf) if the total hazard stays below target.
    """
    if not target > 0:
        raise ValueError("target hazard must be positive")
    return K.invert_decay_hazard(float(x0), float(target), *b.params())


# ---------------------------------------------------------------------------
# state

@dataclass
class NetworkState:
    t: float
    x: np.ndarray
    budget: np.ndarray
    spike_count: np.ndarray
    # per-neuron budget streams and their pre-drawn blocks
    streams: list = field(repr=False, default_factory=list)
    block: Optional[np.ndarray] = field(repr=False, default=None)
    ptr: Optional[np.ndarray] = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.x.size

    def refill(self, i: int):
        self.block[i] = self.streams[i].exponential(1.0, _BUDGET_BLOCK)
        self.ptr[i] = 0

    def potentials_at(self, t: float) -> np.ndarray:
        """Potentials at a time after the last event, assuming no new spike."""
        return self.x * math.exp(-(t - self.t))


def init_state(config: NetworkConfig, init: InitialCondition, rng: RngStream) -> NetworkState:
    n = config.n
    x = np.asarray(init.draw(n, rng.split(0)), dtype=float)
    budget_root = rng.split(2)
    streams = [budget_root.split(i) for i in range(n)]
    block = np.empty((n, _BUDGET_BLOCK))
    for i, s in enumerate(streams):
        block[i] = s.exponential(1.0, _BUDGET_BLOCK)
    return NetworkState(0.0, x, block[:, 0].copy(), np.zeros(n, dtype=np.int64), streams, block,
                        np.ones(n, dtype=np.int64))


@dataclass
class EventLog:
    times: np.ndarray
    ids: np.ndarray
    sample_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    snapshots: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class SpikeEvent:
    time: float
    id: int


@dataclass(frozen=True)
class NoFurtherEvents:
    time: float


# ---------------------------------------------------------------------------
# kernel

@njit(cache=True)
def _fill_snapshots(t, x, sample_times, snaps, snap_pos, upto):
    """Record decaying potentials for sample times in [t, upto)."""
    k = snap_pos[0]
    while k < sample_times.size and sample_times[k] < upto:
        f = math.exp(-(sample_times[k] - t))
        for i in range(x.size):
            snaps[k, i] = x[i] * f
        k += 1
    snap_pos[0] = k


@njit(cache=True)
def _event_loop(tbox, x, budget, counts, block, ptr, refill_box,
                coef, expo, floor, wkind, wlo, whi, scale, kicks, kick_ptr,
                horizon, max_events, sample_times, snaps, snap_pos,
                ev_t, ev_id, ev_n, record):
    n = x.size
    total = np.empty(n)  # hazard left on each neuron's decay path
    done = 0
    while True:
        if done >= max_events:
            return _MAX_EVENTS
        for i in range(n):
            total[i] = coef * K.rate(x[i], 1.0, expo, 0.0) / expo if coef > 0.0 else 0.0
        best = math.inf
        j = -1
        if floor == 0.0:
            # without a floor the spike time is monotone in budget/total
            ratio = 1.0
            for i in range(n):
                if budget[i] < total[i]:
                    r = budget[i] / total[i]
                    if r < ratio:
                        ratio = r
                        j = i
            if j >= 0:
                best = -math.log1p(-ratio) / expo
        else:
            for i in range(n):
                s = K.invert_decay_hazard(x[i], budget[i], coef, expo, floor)
                if s < best:
                    best = s
                    j = i
        t = tbox[0]
        if j < 0:
            _fill_snapshots(t, x, sample_times, snaps, snap_pos, _next_up(horizon))
            return _QUIET
        t_next = t + best
        if t_next > horizon:
            _fill_snapshots(t, x, sample_times, snaps, snap_pos, _next_up(horizon))
            dt = horizon - t
            f = math.exp(-dt)
            g = -math.expm1(-expo * dt)
            for i in range(n):
                budget[i] -= total[i] * g + floor * dt
                x[i] *= f
            tbox[0] = horizon
            return _HORIZON
        if ptr[j] >= block.shape[1]:
            refill_box[0] = j
            return _REFILL
        if record and ev_n[0] >= ev_t.size:
            return _LOG_FULL
        if wkind != 0 and kick_ptr[0] + n - 1 > kicks.size:
            return _REFILL_KICKS
        _fill_snapshots(t, x, sample_times, snaps, snap_pos, t_next)
        f = math.exp(-best)
        g = -math.expm1(-expo * best)
        for i in range(n):
            if i == j:
                continue
            left = budget[i] - (total[i] * g + floor * best)
            budget[i] = left if left > 0.0 else 5e-324
            w = wlo
            if wkind != 0:
                w = wlo + (whi - wlo) * kicks[kick_ptr[0]]
                kick_ptr[0] += 1
            x[i] = x[i] * f + scale * w
        x[j] = 0.0
        budget[j] = block[j, ptr[j]]
        ptr[j] += 1
        counts[j] += 1
        tbox[0] = t_next
        if record:
            ev_t[ev_n[0]] = t_next
            ev_id[ev_n[0]] = j
            ev_n[0] += 1
        done += 1


@njit(cache=True)
def _next_up(v):
    return np.nextafter(v, math.inf)


class _Runner:
    """Drives the kernel, refilling budget blocks and growing the log."""

    def __init__(self, config: NetworkConfig, state: NetworkState, rng_kicks: RngStream,
                 sample_times=(), record=True, log_capacity=1024, kick_block=_KICK_BLOCK):
        self.config = config
        self.state = state
        # kicks come from a block of uniforms, drawn in the order the kernel consumes them
        self.rng_kicks = rng_kicks
        self.kicks = _EMPTY
        # counters shared with the kernel: kicks used, snapshots taken, events logged
        self.kick_ptr, self.snap_pos, self.ev_n = np.zeros((3, 1), dtype=np.int64)
        self.kick_block = kick_block
        if len(sample_times):
            self.sample_times = np.asarray(sorted(sample_times), dtype=float)
        else:
            self.sample_times = _EMPTY
        self.snaps = np.zeros((self.sample_times.size, state.n))
        self.record = record
        self.ev_t = np.empty(log_capacity) if record else _EMPTY
        self.ev_id = np.empty(log_capacity if record else 0, dtype=np.int64)

    def run(self, horizon: float, max_events: int = 2**62) -> int:
        st = self.state
        tbox = np.array([st.t])
        refill_box = np.zeros(1, dtype=np.int64)
        args = self.config.kernel_args()
        target = max_events
        bounded = max_events < 2**62
        while True:
            before = int(st.spike_count.sum()) if bounded else 0
            status = _event_loop(tbox, st.x, st.budget, st.spike_count, st.block, st.ptr,
                                 refill_box, *args, self.kicks, self.kick_ptr,
                                 float(horizon), target,
                                 self.sample_times, self.snaps, self.snap_pos,
                                 self.ev_t, self.ev_id, self.ev_n, self.record)
            st.t = float(tbox[0])
            if bounded:
                target -= int(st.spike_count.sum()) - before
            if status == _REFILL:
                st.refill(int(refill_box[0]))
            elif status == _REFILL_KICKS:
                fresh = self.rng_kicks.uniform(max(self.kick_block, st.n - 1))
                self.kicks = np.concatenate([self.kicks[self.kick_ptr[0]:], fresh])
                self.kick_ptr[0] = 0
            elif status == _LOG_FULL:
                grow = max(1024, self.ev_t.size)
                self.ev_t = np.concatenate([self.ev_t, np.empty(grow)])
                self.ev_id = np.concatenate([self.ev_id, np.empty(grow, dtype=np.int64)])
            else:
                return status

    def log(self) -> EventLog:
        n = int(self.ev_n[0])
        return EventLog(self.ev_t[:n].copy(), self.ev_id[:n].copy(),
                        self.sample_times.copy(), self.snaps.copy())


# ---------------------------------------------------------------------------
# public operations

def step(state: NetworkState, config: NetworkConfig, rng: RngStream):
    """Apply exactly one spike to ``state`` (in place) and return it."""
    # draw only the kicks this spike uses so repeated steps continue one stream
    runner = _Runner(config, state, rng, record=True, log_capacity=1, kick_block=0)
    status = runner.run(math.inf, max_events=1)
    if status == _QUIET:
        return NoFurtherEvents(state.t)
    return SpikeEvent(float(runner.ev_t[0]), int(runner.ev_id[0]))


def run_exact(config: NetworkConfig, init: InitialCondition, horizon: float,
              sample_times=(), rng: Optional[RngStream] = None):
    """Simulate up to ``horizon``; returns (EventLog, snapshots)."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    rng = RngStream(config.seed) if rng is None else rng
    state = init_state(config, init, rng)
    runner = _Runner(config, state, rng.split(1), sample_times)
    runner.run(horizon)
    log = runner.log()
    return log, log.snapshots


EXTINCT = "extinct"
HORIZON_EXCEEDED = "horizon_exceeded"
NEVER_EXTINGUISHES = "never_extinguishes"


@dataclass
class ExtinctionReport:
    outcome: str
    last_spike_time: float = math.nan
    total_spikes: int = 0
    horizon: float = math.nan
    state: Optional[NetworkState] = field(default=None, repr=False)
    rate: Optional[RateFunction] = field(default=None, repr=False)

    @property
    def extinct(self) -> bool:
        return self.outcome == EXTINCT

    @property
    def never_fire(self) -> Optional[np.ndarray]:
        """Per neuron: the remaining budget exceeds the hazard left before decaying to 0."""
        if self.state is None:
            return None
        return _never_fire_flags(self.state, self.rate)


def _never_fire_flags(state: NetworkState, b: RateFunction) -> np.ndarray:
    coef, expo, floor = b.params()
    if floor > 0:
        return np.zeros(state.n, dtype=bool)
    return state.budget > coef * state.x**expo / expo


def extinction_time(config: NetworkConfig, init: InitialCondition, horizon: float,
                    rng: Optional[RngStream] = None) -> ExtinctionReport:
    """Run until no neuron can ever fire again, or until ``horizon``."""
    if config.rate.b0 > 0:
        return ExtinctionReport(NEVER_EXTINGUISHES, horizon=horizon)
    rng = RngStream(config.seed) if rng is None else rng
    state = init_state(config, init, rng)
    runner = _Runner(config, state, rng.split(1), record=False)
    status = runner.run(horizon)
    total = int(state.spike_count.sum())
    if status == _QUIET:
        # a quiet kernel leaves the clock on the last spike
        return ExtinctionReport(EXTINCT, state.t, total, horizon, state, config.rate)
    return ExtinctionReport(HORIZON_EXCEEDED, math.nan, total, horizon, state, config.rate)


# ---------------------------------------------------------------------------
# thinning cross-check

@njit(cache=True)
def _thinning_loop(x, coef, expo, floor, wkind, wlo, whi, scale, rng, horizon,
                   ev_t, ev_id, ev_n, stats):
    n = x.size
    t = 0.0
    rates = np.empty(n)
    while True:
        bound = 0.0
        for i in range(n):
            bound += K.rate(x[i], coef, expo, floor)
        if bound <= 0.0:
            return 0
        dt = rng.exponential(1.0 / bound)
        if t + dt > horizon:
            return 0
        t += dt
        f = math.exp(-dt)
        total = 0.0
        for i in range(n):
            x[i] *= f
            rates[i] = K.rate(x[i], coef, expo, floor)
            total += rates[i]
        stats[0] += 1
        u = rng.random() * bound
        if u >= total:
            continue
        stats[1] += 1
        acc = 0.0
        j = n - 1
        for i in range(n):
            acc += rates[i]
            if u < acc:
                j = i
                break
        if ev_n[0] >= ev_t.size:
            return 1
        for i in range(n):
            if i != j:
                x[i] += scale * K.draw_weight(rng, wkind, wlo, whi)
        x[j] = 0.0
        ev_t[ev_n[0]] = t
        ev_id[ev_n[0]] = j
        ev_n[0] += 1


@dataclass
class ThinningLog(EventLog):
    candidates: int = 0
    accepted: int = 0


def run_thinning(config: NetworkConfig, init: InitialCondition, horizon: float,
                 rng: Optional[RngStream] = None) -> ThinningLog:
    """Ogata-style simulation: propose at the current total rate, accept by ratio.

    Valid because b is non-decreasing and potentials only decay between
    events, so the rate at the proposal time never exceeds the bound.
    """
    rng = RngStream(config.seed) if rng is None else rng
    x = np.asarray(init.draw(config.n, rng.split(0)), dtype=float)
    gen = rng.split(3).generator
    coef, expo, floor, wkind, wlo, whi, scale = config.kernel_args()
    ev_t = np.empty(1024)
    ev_id = np.empty(1024, dtype=np.int64)
    ev_n = np.zeros(1, dtype=np.int64)
    stats = np.zeros(2, dtype=np.int64)
    # restartable only from scratch, so grow and rerun from the same seed
    while _thinning_loop(x, coef, expo, floor, wkind, wlo, whi, scale, gen, float(horizon),
                         ev_t, ev_id, ev_n, stats):
        ev_t = np.empty(2 * ev_t.size)
        ev_id = np.empty(2 * ev_id.size, dtype=np.int64)
        ev_n[0] = 0
        stats[:] = 0
        x = np.asarray(init.draw(config.n, rng.split(0)), dtype=float)
        gen = rng.split(3).generator
    n = int(ev_n[0])
    return ThinningLog(ev_t[:n].copy(), ev_id[:n].copy(), candidates=int(stats[0]),
                       accepted=int(stats[1]))
