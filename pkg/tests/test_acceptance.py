"""Desk-scale acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is repeated in the terminal summary.
Criteria known to be out of reach are marked strict xfail with the target
left unchanged, so they still print FAIL and an unexpected pass is reported.
"""
import json
import math
import os
import time

import numpy as np
import pytest

from spikefield.constant_rate import (
    atom_at_zero, backward_coupling_samples, equilibrium_mean, limit_density,
)
from spikefield.exact import extinction_time, run_exact, run_thinning
from spikefield.experiments import (
    SUSTAINED, TRIVIAL_CLASS, parse_spec, run_experiment,
)
from spikefield.model import (
    Affine, Constant, ConstantWeight, Dirac, NetworkConfig, Power, RngStream, UniformInterval,
    UniformWeight,
)
from spikefield.stationary import (
    NONTRIVIAL, NOT_APPLICABLE, STABLE, UNSTABLE, c_of_beta, classify_trivial_stability,
    find_stationary, fixed_point_residual, invariant_density, power_rate_for_rho,
    self_consistency_rate, superlinear_critical, superlinear_residual,
)

pytestmark = pytest.mark.slow

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "scripts", "configs")


def shipped(name, **overrides):
    with open(os.path.join(CONFIGS, name)) as fh:
        fields = json.load(fh)
    fields.update(overrides)
    return parse_spec(json.dumps(fields))


def ks_statistic(a, b):
    a, b = np.sort(a), np.sort(b)
    grid = np.concatenate([a, b])
    return float(np.max(np.abs(np.searchsorted(a, grid, "right") / a.size
                               - np.searchsorted(b, grid, "right") / b.size)))


def test_constant_rate_moments(acceptance):
    start = time.perf_counter()
    count = 100_000
    x = backward_coupling_samples(20, 1.0, UniformWeight(0, 1), RngStream(101), count)[:, 0]
    mean, atom = equilibrium_mean(20, 1.0, 0.5), atom_at_zero(20)
    z_mean = (x.mean() - mean) / (x.std(ddof=1) / math.sqrt(count))
    z_atom = (np.mean(x == 0) - atom) / math.sqrt(atom * (1 - atom) / count)
    ok = mean == 4.75 and atom == 0.05 and abs(z_mean) < 3 and abs(z_atom) < 3
    assert acceptance(1, "constant-rate moments", ok,
                      f"mean {x.mean():.4f} (z {z_mean:+.2f}), atom {np.mean(x == 0):.4f} "
                      f"(z {z_atom:+.2f})", time.perf_counter() - start, 30)


def test_never_fire_probability(acceptance):
    start = time.perf_counter()
    runs = 100_000
    cfg = NetworkConfig(1, Affine(1, 0), ConstantWeight(0.0))
    root = RngStream(102)
    silent = sum(extinction_time(cfg, Dirac(2.0), math.inf, root.split(i)).total_spikes == 0
                 for i in range(runs))
    p = math.exp(-2.0)
    z = (silent / runs - p) / math.sqrt(p * (1 - p) / runs)
    assert acceptance(2, "never-fire probability", abs(z) < 3,
                      f"fraction {silent / runs:.4f} vs {p:.4f} (z {z:+.2f})",
                      time.perf_counter() - start, 10)


def test_simulators_agree(acceptance):
    start = time.perf_counter()
    runs, horizon = 10_000, 5.0
    cfg = NetworkConfig(5, Affine(1, 0.2), UniformWeight(0, 1))
    init = UniformInterval(0, 1)
    exact_root, thin_root = RngStream(103).split(0), RngStream(103).split(1)
    first_exact, first_thin = np.empty(runs), np.empty(runs)
    for i in range(runs):
        log, _ = run_exact(cfg, init, horizon, rng=exact_root.split(i))
        first_exact[i] = log.times[0] if log.times.size else horizon
        thin = run_thinning(cfg, init, horizon, thin_root.split(i))
        first_thin[i] = thin.times[0] if thin.times.size else horizon
    stat = ks_statistic(first_exact, first_thin)
    crit = 1.628 * math.sqrt(2 / runs)
    assert acceptance(3, "exact vs thinning first spike", stat < crit,
                      f"KS {stat:.4f} < {crit:.4f}", time.perf_counter() - start, 60)


def test_limit_identities(acceptance):
    start = time.perf_counter()
    worst = {"mass": 0.0, "rate": 0.0, "reduced": 0.0, "constant": 0.0}
    for b, ev in [(Affine(1, 0), 2.0), (Affine(1, 0.5), 1.0), (Power(1, 0.5), 1.0),
                  (Power(1, 2), 3.0), (Constant(0.4), 1.0), (Constant(3.0), 2.0)]:
        for sol in find_stationary(b, ev):
            if sol.kind != NONTRIVIAL:
                continue
            table = invariant_density(b, ev, sol.beta)
            worst["mass"] = max(worst["mass"], abs(table.integral() - 1))
            worst["rate"] = max(worst["rate"], abs(self_consistency_rate(table, b) - sol.beta))
    for a in (1.5, 2.0, 3.0):
        for ev in (0.5, 1.3):
            for rho in (0.1, 2.0, 20.0):
                b = power_rate_for_rho(a, ev, rho)
                for beta in (0.05, 0.7, 4.0):
                    gap = abs(superlinear_residual(a, rho, beta) - fixed_point_residual(b, ev, beta))
                    worst["reduced"] = max(worst["reduced"], gap)
    for rate, ev in [(0.4, 1.0), (1.0, 2.0), (3.0, 0.7)]:
        table = invariant_density(Constant(rate), ev, rate)
        u = np.linspace(0, rate * ev, 2001)[:-1]
        ref = limit_density(rate, ev, u)
        rel = np.abs(table.pdf(u) - ref) / np.maximum(ref, 1e-300)
        worst["constant"] = max(worst["constant"], float(rel.max()))
    ok = (worst["mass"] < 1e-6 and worst["rate"] < 1e-5 and worst["reduced"] < 1e-8
          and worst["constant"] < 1e-10)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert acceptance(4, "limit identities", ok, detail, time.perf_counter() - start, 10)


@pytest.mark.xfail(strict=True, reason="the product stays near 28 at beta=1e3; "
                   "the 1e2 level is first crossed near beta=1.3e4")
def test_product_endpoints(acceptance):
    start = time.perf_counter()
    b = Affine(1, 0)
    small = 1e-4 * c_of_beta(b, 2.0, 1e-4)
    large = 1e3 * c_of_beta(b, 2.0, 1e3)
    ok = abs(small - 0.5) < 0.005 and large > 100
    assert acceptance(5, "product endpoints", ok,
                      f"small-beta {small:.6f} vs 0.5, large-beta {large:.2f} vs > 100",
                      time.perf_counter() - start, 5)


def test_classification_matrix(acceptance):
    start = time.perf_counter()
    diagram = superlinear_critical(2.0)
    ev = 1.5
    counts = {
        "affine rho=0.5": (Affine(1, 0), 0.5, 0),
        "affine rho=2": (Affine(1, 0), 2.0, 1),
        "affine floor=0.5": (Affine(1, 0.5), 1.0, 1),
        "sublinear a=0.5": (Power(1, 0.5), 1.0, 1),
        "quadratic rho_c/2": (power_rate_for_rho(2, ev, diagram.rho_c / 2), ev, 0),
        "quadratic 2 rho_c": (power_rate_for_rho(2, ev, 2 * diagram.rho_c), ev, 2),
    }
    tags = {
        "rho<1": (Affine(1, 0), 0.5, STABLE),
        "rho>1": (Affine(1, 0), 2.0, UNSTABLE),
        "zero slope": (Power(1, 2), 1.0, STABLE),
        "infinite slope": (Power(1, 0.5), 1.0, UNSTABLE),
        "floor": (Affine(1, 0.5), 1.0, NOT_APPLICABLE),
    }
    wrong = [name for name, (b, w, k) in counts.items()
             if sum(s.kind == NONTRIVIAL for s in find_stationary(b, w)) != k]
    wrong += [name for name, (b, w, tag) in tags.items()
              if classify_trivial_stability(b, w) != tag]
    assert acceptance(6, "classification matrix", not wrong,
                      f"{len(counts) + len(tags) - len(wrong)}/{len(counts) + len(tags)} match"
                      + (f", mismatched {wrong}" if wrong else ""),
                      time.perf_counter() - start, 60)


def test_mean_field_agreement(acceptance):
    start = time.perf_counter()
    res = run_experiment(shipped("phase_affine.json", mean_weights=[0.5, 2.0]))
    pts = {p["mean_weight"]: p for p in res.summary["points"]}
    low, high = pts[0.5], pts[2.0]
    rel = abs(high["mean_beta_hat"] - high["beta_star"]) / high["beta_star"]
    ok = rel < 0.1 and low["mean_beta_hat"] < 0.05 and low["beta_star"] == 0.0
    assert acceptance(7, "mean-field agreement", ok,
                      f"E=2 mean {high['mean_beta_hat']:.4f} vs {high['beta_star']:.4f} "
                      f"({100 * rel:.1f}%), E=0.5 mean {low['mean_beta_hat']:.4f}",
                      time.perf_counter() - start, 300)


def test_metastability_scaling(acceptance):
    start = time.perf_counter()
    res = run_experiment(shipped("extinction_scaling.json"))
    med = {(p["n"], p["mean_weight"]): p["median"] for p in res.summary["points"]}
    strong = [med[(n, 2.0)] for n in (10, 20, 40)]
    ok = all(a < b for a, b in zip(strong, strong[1:])) and med[(40, 0.25)] < med[(10, 2.0)]
    assert acceptance(8, "metastability scaling", ok,
                      "E=2 medians " + ", ".join(f"{m:.1f}" for m in strong)
                      + f"; E=0.25 N=40 median {med[(40, 0.25)]:.2f}",
                      time.perf_counter() - start, 600)


def test_quadratic_bistability(acceptance):
    start = time.perf_counter()
    res = run_experiment(shipped("bistability_quadratic.json"))
    (point,) = res.summary["points"]
    ev = point["mean_weight"]
    low_v0 = 0.2 * point["beta_minus"] * ev
    high_v0 = 2.0 * point["beta_plus"] * ev
    scan = [r for r in res.rows if r["stage"] == "scan"]
    at_low = [r["class"] for r in scan if r["v0"] == pytest.approx(low_v0)]
    at_high = [r["class"] for r in scan if r["v0"] == pytest.approx(high_v0)]
    sep = point["separatrix"]
    ok = (len(at_low) == len(at_high) == 10 and all(c == TRIVIAL_CLASS for c in at_low)
          and sum(c == SUSTAINED for c in at_high) >= 9 and sep is not None
          and low_v0 <= sep[0] < sep[1] <= high_v0)
    assert acceptance(9, "quadratic bistability", ok,
                      f"trivial at low {at_low.count(TRIVIAL_CLASS)}/10, sustained at high "
                      f"{at_high.count(SUSTAINED)}/10, separatrix "
                      + (f"[{sep[0]:.4f}, {sep[1]:.4f}]" if sep else "none"),
                      time.perf_counter() - start, 600)


@pytest.mark.xfail(strict=True, reason="particle noise keeps the Picard gap above 1e-3 "
                   "for roughly twice the allowed iterations")
def test_mckean_consistency(acceptance):
    start = time.perf_counter()
    res = run_experiment(shipped("mckean_compare.json"))
    s = res.summary
    gaps = s["picard"]["gaps"]
    ok = s["distance"] < 0.1 * s["stationary_rate"] and gaps[-1] < 1e-3 and len(gaps) <= 30
    assert acceptance(10, "mean-field limit vs particles", ok,
                      f"distance {s['distance']:.4f} vs {0.1 * s['stationary_rate']:.4f}, "
                      f"last gap {gaps[-1]:.1e} after {len(gaps)} iterations",
                      time.perf_counter() - start, 600)
