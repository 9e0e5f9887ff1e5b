import math

import numpy as np
import pytest
from hypothesis import given, strategies as hst
from scipy import stats

from spikefield.exact import (
    EXTINCT, NEVER_EXTINGUISHES, NoFurtherEvents, SpikeEvent, extinction_time, flow_hazard,
    init_state, invert_flow_hazard, run_exact, run_thinning, step,
)
from spikefield.experiments import censored_quantile
from spikefield.model import (
    Affine, Constant, ConstantWeight, Dirac, Explicit, MEAN_FIELD, NetworkConfig, Power,
    RngStream, UniformInterval, UniformWeight,
)


def ks_critical(n, m=None, alpha=0.01):
    """Asymptotic Kolmogorov-Smirnov critical value (one or two samples)."""
    c = math.sqrt(-0.5 * math.log(alpha / 2))
    eff = n if m is None else n * m / (n + m)
    return c / math.sqrt(eff)


# ---------------------------------------------------------------------------
# flow hazard and its inverse

def test_flow_hazard_examples():
    assert flow_hazard(Affine(1, 0), 1.0, math.inf) == 1.0
    for b in (Affine(1, 0.3), Power(2, 3, 1), Constant(4)):
        assert flow_hazard(b, 1.7, 0.0) == 0.0
    assert flow_hazard(Constant(2), 5.0, 0.5) == 1.0


def test_flow_hazard_matches_quadrature():
    from scipy.integrate import quad
    b = Power(1.3, 2.5, 0.4)
    ref, _ = quad(lambda u: b(1.9 * math.exp(-u)), 0, 3.0, epsabs=1e-13)
    assert flow_hazard(b, 1.9, 3.0) == pytest.approx(ref, abs=1e-11)


def test_invert_flow_hazard_examples():
    assert invert_flow_hazard(Affine(1, 0), 1.0, 0.5) == pytest.approx(math.log(2), abs=1e-12)
    assert invert_flow_hazard(Affine(1, 0), 1.0, 1.5) == math.inf
    assert invert_flow_hazard(Constant(2), 3.0, 1.0) == pytest.approx(0.5, abs=1e-12)


def test_invert_rejects_nonpositive_target():
    with pytest.raises(ValueError):
        invert_flow_hazard(Affine(1, 0), 1.0, 0.0)


# subnormal floors push inversion times past the float range
floors = hst.one_of(hst.just(0.0), hst.floats(1e-9, 5))
rate_family = hst.one_of(
    hst.builds(Constant, hst.floats(0.01, 5)),
    hst.builds(Affine, hst.floats(0.01, 5), floors),
    hst.builds(Power, hst.floats(0.05, 5), hst.floats(0.2, 4), floors),
)


@given(rate_family, hst.floats(0, 5), hst.floats(1e-6, 1 - 1e-6))
def test_hazard_round_trip(b, x0, frac):
    total = flow_hazard(b, x0, math.inf)
    target = frac * total if math.isfinite(total) else frac * 20
    if not target > 1e-12:
        return
    s = invert_flow_hazard(b, x0, target)
    assert math.isfinite(s)
    assert flow_hazard(b, x0, s) == pytest.approx(target, abs=1e-10)


@given(rate_family, hst.floats(0, 5), hst.floats(0, 10), hst.floats(0, 10))
def test_flow_hazard_monotone_in_duration(b, x0, s1, s2):
    lo, hi = sorted((s1, s2))
    assert 0 <= flow_hazard(b, x0, lo) <= flow_hazard(b, x0, hi) + 1e-15


# ---------------------------------------------------------------------------
# single events

def test_step_resets_spiker_and_keeps_budgets_positive():
    cfg = NetworkConfig(6, Affine(1, 0.2), UniformWeight(0, 0.5))
    rng = RngStream(11)
    state = init_state(cfg, UniformInterval(0, 2), rng)
    kicks = rng.split(1)
    last = 0.0
    for _ in range(200):
        ev = step(state, cfg, kicks)
        assert isinstance(ev, SpikeEvent)
        assert ev.time > last
        last = ev.time
        assert state.x[ev.id] == 0.0
        assert np.all(state.budget > 0)
        assert np.all(state.x >= 0)


def test_step_reports_no_further_events_when_quiet():
    cfg = NetworkConfig(3, Affine(1, 0), ConstantWeight(0.0))
    state = init_state(cfg, Dirac(0.0), RngStream(0))
    assert isinstance(step(state, cfg, RngStream(1)), NoFurtherEvents)


def test_constant_rate_inter_spike_times_are_exponential():
    cfg = NetworkConfig(1, Constant(1.0), ConstantWeight(0.0), seed=5)
    log, _ = run_exact(cfg, Dirac(0.0), 1.02e5)
    gaps = np.diff(np.concatenate([[0.0], log.times]))[:100_000]
    assert gaps.size == 100_000
    res = stats.kstest(gaps, "expon")
    assert res.statistic < ks_critical(gaps.size)


def test_zero_spike_fraction_matches_total_hazard():
    cfg = NetworkConfig(1, Affine(1, 0), ConstantWeight(0.0))
    root = RngStream(21)
    runs = 20_000
    quiet = sum(extinction_time(cfg, Dirac(2.0), 1e9, root.split(i)).total_spikes == 0
                for i in range(runs))
    p = math.exp(-2)
    assert abs(quiet / runs - p) < 3 * math.sqrt(p * (1 - p) / runs)


def test_uncoupled_neurons_follow_their_own_budgets():
    # oracle: invert each neuron's own budget sequence in isolation
    b = Affine(1.0, 0.5)
    cfg = NetworkConfig(2, b, ConstantWeight(0.0), seed=9)
    x0 = [1.5, 0.3]
    log, _ = run_exact(cfg, Explicit(x0), 20.0)
    root = RngStream(9)
    for i in range(2):
        budgets = root.split(2).split(i).exponential(1.0, 64)
        t, x, k, expected = 0.0, x0[i], 0, []
        while True:
            s = invert_flow_hazard(b, x, budgets[k])
            if t + s > 20.0:
                break
            t += s
            x = 0.0
            k += 1
            expected.append(t)
        got = log.times[log.ids == i]
        assert got.size == len(expected) > 3
        np.testing.assert_allclose(got, expected, rtol=1e-9)


# ---------------------------------------------------------------------------
# whole runs

def test_silent_network_only_decays():
    cfg = NetworkConfig(4, Constant(0.0), ConstantWeight(1.0))
    x0 = np.array([0.0, 0.5, 1.0, 3.0])
    times = [0.0, 0.5, 2.0, 7.0]
    log, snaps = run_exact(cfg, Explicit(x0), 10.0, sample_times=times)
    assert len(log) == 0
    np.testing.assert_allclose(snaps, np.outer(np.exp(-np.array(times)), x0), rtol=1e-15)


def test_poisson_count_mean():
    cfg = NetworkConfig(1, Constant(1.0), ConstantWeight(0.0))
    root = RngStream(4)
    counts = [len(run_exact(cfg, Dirac(0.0), 10.0, rng=root.split(i))[0]) for i in range(1000)]
    assert abs(np.mean(counts) - 10.0) < 0.1


def test_same_seed_is_bit_identical():
    cfg = NetworkConfig(10, Affine(1, 0.1), UniformWeight(0, 2), MEAN_FIELD, seed=77)
    a, sa = run_exact(cfg, UniformInterval(0, 1), 30.0, sample_times=[3.0, 17.5])
    b, sb = run_exact(cfg, UniformInterval(0, 1), 30.0, sample_times=[3.0, 17.5])
    assert a.times.tobytes() == b.times.tobytes()
    assert a.ids.tobytes() == b.ids.tobytes()
    assert sa.tobytes() == sb.tobytes()


def test_event_log_ordering():
    cfg = NetworkConfig(8, Power(1, 2, 0.1), UniformWeight(0, 1), MEAN_FIELD, seed=3)
    log, _ = run_exact(cfg, UniformInterval(0, 2), 50.0)
    assert len(log) > 20
    assert np.all(np.diff(log.times) > 0)
    assert log.times[-1] <= 50.0
    assert log.ids.min() >= 0 and log.ids.max() < 8


def test_snapshots_are_closed_form_decay_between_events():
    cfg = NetworkConfig(5, Affine(1, 0.3), UniformWeight(0, 1), seed=12)
    init = UniformInterval(0, 1)
    rng = RngStream(12)
    state = init_state(cfg, init, rng)
    kicks = rng.split(1)
    history = [(state.t, state.x.copy())]
    for _ in range(40):
        step(state, cfg, kicks)
        history.append((state.t, state.x.copy()))
    starts = [t for t, _ in history]
    probes = [0.5 * (starts[k] + starts[k + 1]) for k in range(len(starts) - 1)]
    _, snaps = run_exact(cfg, init, probes[-1] + 1e-9, sample_times=probes)
    for k, tau in enumerate(probes):
        t_last, x_last = history[k]
        np.testing.assert_allclose(snaps[k], x_last * math.exp(-(tau - t_last)), rtol=1e-13)


def test_run_exact_rejects_bad_horizon():
    with pytest.raises(ValueError):
        run_exact(NetworkConfig(1, Constant(1), ConstantWeight(0)), Dirac(0), 0.0)


# ---------------------------------------------------------------------------
# extinction

def test_extinction_from_rest_is_immediate():
    rep = extinction_time(NetworkConfig(1, Affine(1, 0), ConstantWeight(1.0)), Dirac(0.0), 10.0)
    assert rep.outcome == EXTINCT
    assert rep.last_spike_time == 0.0 and rep.total_spikes == 0


def test_positive_floor_never_extinguishes():
    rep = extinction_time(NetworkConfig(3, Constant(0.5), ConstantWeight(1.0)), Dirac(1.0), 10.0)
    assert rep.outcome == NEVER_EXTINGUISHES


def test_extinction_predicate_is_sound():
    cfg = NetworkConfig(10, Affine(1, 0), ConstantWeight(1.5), MEAN_FIELD)
    root = RngStream(8)
    seen = 0
    for i in range(30):
        rep = extinction_time(cfg, UniformInterval(0, 1), 1e4, root.split(i))
        if rep.outcome != EXTINCT:
            continue
        seen += 1
        assert rep.never_fire.all()
        st = rep.state
        x_left = st.x.copy()
        ev = step(st, cfg, root.split(10_000 + i))
        assert isinstance(ev, NoFurtherEvents)
        np.testing.assert_array_equal(st.x, x_left)
    assert seen > 20


def test_weaker_coupling_dies_sooner():
    init = UniformInterval(0, 1)
    medians = []
    for mean_w in (0.5, 2.0):
        cfg = NetworkConfig(20, Affine(1, 0), ConstantWeight(mean_w), MEAN_FIELD)
        root = RngStream(31)
        times = []
        for i in range(200):
            rep = extinction_time(cfg, init, 1e5, root.split(i))
            times.append(rep.last_spike_time if rep.extinct else math.inf)
        medians.append(censored_quantile(times, 0.5))
    assert math.isfinite(medians[0])
    assert medians[0] < medians[1]


# ---------------------------------------------------------------------------
# thinning cross-check

def test_thinning_silent_network():
    log = run_thinning(NetworkConfig(3, Constant(0.0), ConstantWeight(1.0)), Dirac(1.0), 10.0)
    assert len(log) == 0


def test_thinning_tight_bound_accepts_everything():
    log = run_thinning(NetworkConfig(1, Constant(1.0), ConstantWeight(0.0)), Dirac(0.0), 200.0)
    assert log.candidates == log.accepted == len(log) > 100


def _first_and_count(sim, cfg, init, horizon, seeds):
    first, counts = [], []
    root = RngStream(seeds)
    for i in range(2000):
        out = sim(cfg, init, horizon, rng=root.split(i))
        log = out[0] if isinstance(out, tuple) else out
        first.append(log.times[0] if len(log) else math.inf)
        counts.append(len(log))
    return np.array(first), np.array(counts)


def test_exact_and_thinning_agree_in_law():
    cfg = NetworkConfig(5, Affine(1, 0.2), UniformWeight(0, 0.5))
    init = UniformInterval(0, 1)
    f_exact, c_exact = _first_and_count(run_exact, cfg, init, 2.0, 101)
    f_thin, c_thin = _first_and_count(run_thinning, cfg, init, 2.0, 202)
    crit = ks_critical(2000, 2000)
    assert stats.ks_2samp(f_exact, f_thin).statistic < crit
    assert stats.ks_2samp(c_exact, c_thin).statistic < crit
