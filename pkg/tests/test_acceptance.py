"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Every tolerance and ordering is pinned here rather than read back from the
preset files, so editing a preset cannot quietly weaken a criterion. The
preset trend verdicts are checked as well, as a second opinion.
"""
import math

import pytest
from hypothesis import given, settings

from sharedheap.apps import bintree, octree
from sharedheap.experiment import ExperimentConfig, run_experiment
from sharedheap.presets import PresetRunner, preset_configs

from workloads import check_invariants, workloads

FORCE_TOLERANCE = 1e-9
SEEDS = range(5)
INVARIANT_EXAMPLES = 100


@pytest.fixture(scope="module")
def runner():
    return PresetRunner()


@pytest.fixture(scope="module")
def presets(runner):
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = runner.run(name)
        return cache[name]
    return get


def totals(result, metric="total"):
    return {lab: res.report.value(metric) for lab, res in zip(result.labels, result.results)}


def fmt(values):
    return ", ".join(f"{k}={v:.6g}" for k, v in values.items())


# -- 1: functional oracles ------------------------------------------------------------

def pairwise_force(mass, pos, i, g=octree.G, eps=octree.SOFTENING):
    """Plain-Python direct sum, independent of the package's numpy oracle."""
    fx = fy = fz = 0.0
    xi, yi, zi = (float(c) for c in pos[i])
    for j in range(len(mass)):
        if j == i:
            continue
        dx, dy, dz = float(pos[j][0]) - xi, float(pos[j][1]) - yi, float(pos[j][2]) - zi
        r2 = dx * dx + dy * dy + dz * dz + eps * eps
        s = g * float(mass[i]) * float(mass[j]) / (r2 * math.sqrt(r2))
        fx, fy, fz = fx + s * dx, fy + s * dy, fz + s * dz
    return fx, fy, fz


def worst_force_error(config):
    res = run_experiment(config)
    mass, pos, _ = octree.generate_particles(config.particles, config.seed, config.distribution)
    merged = {}
    for part in res.results:
        merged.update(part)
    assert sorted(merged) == list(range(config.updated))
    worst = 0.0
    for i, (f, *_state) in merged.items():
        ref = pairwise_force(mass, pos, i)
        scale = math.sqrt(sum(c * c for c in ref))
        worst = max(worst, math.sqrt(sum((a - b) ** 2 for a, b in zip(f, ref))) / scale)
    return worst, res.oracle_ok


def test_criterion_1_functional_oracles(verdict):
    problems = []
    worst = 0.0
    for seed in SEEDS:
        keys = bintree.generate_keys(6000, seed)
        queries = bintree.generate_queries(6000, 3000, seed)
        sort = run_experiment(ExperimentConfig(app="bintree-sort", seed=seed, depth=2))
        if sort.results[0] != sorted(keys) or not sort.oracle_ok:
            problems.append(f"sort seed {seed}")
        search = run_experiment(ExperimentConfig(app="bintree-search", seed=seed, depth=2))
        present = set(keys)
        if search.results[0] != [q in present for q in queries] or not search.oracle_ok:
            problems.append(f"search seed {seed}")
        for n in (100, 1000):
            cfg = ExperimentConfig(app="octree-nbody", particles=n, updated=100, seed=seed,
                                   depth=1)
            err, ok = worst_force_error(cfg)
            worst = max(worst, err)
            if err > FORCE_TOLERANCE or not ok:
                problems.append(f"octree N={n} seed {seed} error {err:.3g}")
    verdict(1, "sort, search and force oracles over 5 seeds", not problems,
            "; ".join(problems) or f"worst relative force error {worst:.2g} <= {FORCE_TOLERANCE:g}")


# -- 2-6: preset trends -----------------------------------------------------------

def test_criterion_2_table1(presets, verdict):
    for _, cfg in preset_configs("table1"):
        assert (cfg.app, cfg.servers, cfg.clients, cfg.priority, cfg.keys) == \
            ("bintree-sort", 1, 1, "high", 6000)
    res = presets("table1")
    t, f = totals(res), totals(res, "fetch")
    holds = t["d0"] > t["d1"] > t["d2"] and f["d2"] < f["d0"] and res.trends_ok and res.oracles_ok
    verdict(2, "total strictly decreases over depths 0, 1, 2 and fetch(2) < fetch(0)", holds,
            f"total {fmt(t)}; fetch d0={f['d0']:.6g} d2={f['d2']:.6g}")


def test_criterion_3_figure1(presets, verdict):
    res = presets("figure1")
    t = totals(res)
    depths = [f"d{d}" for d in range(9)]
    assert list(t) == depths
    best = min(range(9), key=lambda d: t[depths[d]])
    tail = [t[d] for d in depths[-3:]]
    holds = 1 <= best <= 6 and tail[0] <= tail[1] <= tail[2] and res.trends_ok and res.oracles_ok
    verdict(3, "minimum total at a depth in 1..6, nondecreasing over the last three depths",
            holds, f"argmin d{best}; {fmt(t)}")


def test_criterion_4_table2(presets, verdict):
    res = presets("figure3-table2")
    u = totals(res, "untouched_evicted")
    ample = [u[f"ample-d{d}"] for d in range(3)]
    d3, d5 = u["constrained-d3"], u["constrained-d5"]
    holds = ample == [0, 0, 0] and 0 < d3 < d5 and res.trends_ok and res.oracles_ok
    verdict(4, "untouched evictions zero at depths 0-2 (ample), positive and rising 3 -> 5 "
               "(constrained)", holds, fmt(u))


def test_criterion_5_figure2(presets, verdict):
    res = presets("figure2")
    assert len(res.labels) == 8
    t = totals(res)
    holds = (t["low-c1"] <= t["none-c1"] and t["low-c3"] > t["none-c3"]
             and t["low-c4"] > t["none-c4"] and res.trends_ok and res.oracles_ok)
    verdict(5, "low-priority depth 2 <= none at 1 client, > none at 3 and 4 clients", holds,
            fmt(t))


def test_criterion_6_figures_4_5(presets, verdict):
    high, low = presets("figure4"), presets("figure5")
    h, lo = totals(high), totals(low)
    for cfgs, priority in ((preset_configs("figure4"), "high"), (preset_configs("figure5"), "low")):
        assert all(c.app == "octree-nbody" and c.priority == priority for _, c in cfgs)
    hurts = all(h[f"d{d}"] >= h["d0"] for d in (1, 2, 3))
    poorer = all(lo[f"d{d}"] >= h[f"d{d}"] for d in range(4))
    holds = (hurts and poorer and high.trends_ok and low.trends_ok
             and high.oracles_ok and low.oracles_ok)
    verdict(6, "oct-tree: high depths 1-3 >= depth 0, low >= high at every depth", holds,
            f"high {fmt(h)}; low {fmt(lo)}")


# -- 7: protocol invariants ---------------------------------------------------------

@settings(max_examples=INVARIANT_EXAMPLES, deadline=None)
@given(workloads())
def invariant_property(w):
    check_invariants(w)


def test_criterion_7_protocol_invariants(presets, verdict):
    failures = []
    try:
        invariant_property()
    except Exception as exc:  # hypothesis re-raises the shrunk failure
        failures.append(f"invariant: {(str(exc) or type(exc).__name__).splitlines()[0]}")
    for name in ("table1", "figure2"):
        again = PresetRunner().run(name)
        first = presets(name)
        if again.to_json() != first.to_json() or again.to_csv() != first.to_csv():
            failures.append(f"{name} rerun differs")
    verdict(7, f"capacity, write-back, low-priority dispatch and depth-0 message identity over "
               f"{INVARIANT_EXAMPLES} random configs; byte-identical preset reruns",
            not failures, "; ".join(failures))


# -- 8: partition invariance ---------------------------------------------------------

def test_criterion_8_partition_invariance(verdict):
    base = ExperimentConfig(app="octree-nbody", particles=1000, updated=100)
    one = run_experiment(base)
    two = run_experiment(base.replace(clients=2))
    a, b = one.output["particle_checksum"], two.output["particle_checksum"]
    holds = a == b and one.oracle_ok and two.oracle_ok
    verdict(8, "1 client vs 2 clients x 50 particles give identical final states", holds,
            f"checksums {a[:16]} / {b[:16]}")
