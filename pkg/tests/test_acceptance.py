"""End-to-end acceptance suite; each criterion prints one PASS/FAIL line."""

import itertools
import math
import time

import numpy as np
import pytest
from conftest import BOX, LIMITS, audit_log
from numpy.polynomial import polynomial as P
from scipy.integrate import quad
from scipy.optimize import golden
from scipy.stats import spearmanr

from adaptive_dispersion.adaptive import AdaptiveConfig, AdaptiveState, next_index
from adaptive_dispersion.graph_gen import (
    DispersionMode,
    family_from_counts,
    greedy_min_dispersion,
    pairwise_costs,
    sample_candidates,
)
from adaptive_dispersion.motion_primitives import (
    DynamicsLimits,
    FullState,
    optimize_primitive,
    solve_fixed_time_bvp,
    trajectory_cost,
)
from adaptive_dispersion.search import GoalSpec, Outcome, PlanResult, plan
from adaptive_dispersion.sim import Mission, PlannerSpec, SweepSetup, forest_sweep, run_mission, sweep_summary
from adaptive_dispersion.world import (
    CorridorSpec,
    OccupancyGrid,
    forest_for_corridor,
    inflate,
    make_corridor,
    make_forest,
)

# the two corridor widths of the comparison forest, scaled down together
SPARSE_CORRIDOR, DENSE_CORRIDOR, MAP_SCALE = 8.13, 1.91, 0.67


def report(number, ok, detail, elapsed, limit):
    ok = ok and elapsed < limit
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} ({detail}; {elapsed:.1f} s of {limit:.0f} s)"
    return ok, line


def emit(capsys, line):
    with capsys.disabled():
        print("\n" + line)


@pytest.fixture(scope="session")
def standard_family():
    """Four graphs, coarsest first, all from one greedy run over 800 candidates."""
    return family_from_counts(BOX, LIMITS, [8, 16, 32, 64], 800, 0, beta=1.2)


def comparison_map() -> OccupancyGrid:
    base = OccupancyGrid.empty((0.0, 0.0), (100.0, 24.0), 0.1)
    sparse = forest_for_corridor(SPARSE_CORRIDOR * MAP_SCALE, (50.0, 24.0), seed=21, origin=(0.0, 0.0),
                                 resolution=0.1)
    dense = forest_for_corridor(DENSE_CORRIDOR * MAP_SCALE, (50.0, 24.0), seed=22, origin=(50.0, 0.0),
                                resolution=0.1)
    return make_forest(dense, make_forest(sparse, base))


def comparison_mission(limits) -> Mission:
    return Mission((2.0, 12.0), [(98.0, 12.0)], comparison_map(), limits, window=12.0, window_margin=2.0,
                   max_expansions=120, time_cap=200.0)


def free_mission(limits) -> Mission:
    grid = OccupancyGrid.empty((0.0, 0.0), (24.0, 12.0), 0.1)
    return Mission((2.0, 6.0), [(12.0, 6.0)], grid, limits, window=12.0, window_margin=2.0,
                   max_expansions=120, time_cap=30.0)


@pytest.fixture(scope="module")
def missions(standard_family):
    """Every mission run by the suite, with the wall time it took."""
    t0 = time.perf_counter()
    fam = standard_family
    runs = {}
    for name, mission in (("comparison", comparison_mission(fam.limits)), ("free", free_mission(fam.limits))):
        for kind in ("adaptive", "baseline"):
            spec = PlannerSpec(kind, fam if kind != "baseline" else None)
            runs[name, kind] = (mission, spec, run_mission(mission, spec))
    return runs, time.perf_counter() - t0


def test_criterion_1_bvp(capsys):
    t0 = time.perf_counter()
    checks = []
    # closed form and quadrature for rest-to-rest in 1D
    for d, T in itertools.product((0.5, 1.0, 2.0), (0.5, 1.0, 2.0)):
        tr = solve_fixed_time_bvp(FullState.rest([0.0]), FullState.rest([d]), T)
        jerk = P.polyder(tr.coeffs[0, 0], 3)
        by_quad = quad(lambda t: P.polyval(t, jerk) ** 2, 0.0, T, epsabs=1e-13, epsrel=1e-13)[0]
        exact = 720.0 * d**2 / T**5
        checks.append(math.isclose(tr.jerk_integral(), exact, rel_tol=1e-6))
        checks.append(math.isclose(by_quad, exact, rel_tol=1e-6))
    # boundary conditions on random pairs
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = (FullState.from_array(rng.uniform(-3, 3, (3, 2))) for _ in range(2))
        tr = solve_fixed_time_bvp(a, b, float(rng.uniform(0.2, 5.0)))
        checks.append(tr.start_state.allclose(a, 1e-6) and tr.end_state.allclose(b, 1e-6))
    # time optimum: golden-section on the closed form, then +-1% perturbations
    lim = DynamicsLimits(100.0, 100.0, 1000.0)
    for d in (0.5, 1.0, 2.0):
        a, b = FullState.rest([0.0]), FullState.rest([d])
        prim = optimize_primitive(a, b, lim)
        T_ref = golden(lambda T: lim.rho * T + 720.0 * d**2 / T**5, brack=(0.1, 1.0, 10.0), tol=1e-10)
        checks.append(math.isclose(prim.duration, T_ref, rel_tol=1e-6))
        J = prim.cost
        for f in (0.99, 1.01):
            Jp = trajectory_cost(solve_fixed_time_bvp(a, b, f * prim.duration), lim.rho)
            # a stationary point moves J only to second order, well under a 1e-3 relative change
            checks.append(Jp >= J * (1 - 1e-12) and (Jp - J) / J < 1e-3)
    elapsed = time.perf_counter() - t0
    ok, line = report(1, all(checks), f"{sum(checks)}/{len(checks)} checks", elapsed, 5)
    emit(capsys, line)
    assert ok, line


def test_criterion_2_dispersion_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    checks = []
    for trial in range(20):
        cands = sample_candidates(BOX, int(rng.integers(20, 61)), seed=trial)
        C = cands.states
        n = len(C)
        g = greedy_min_dispersion(cands, DispersionMode.TWO_SIDED, LIMITS, target_vertex_count=n)
        # exhaustive recomputation from the full cost matrix with plain loops
        J, _ = pairwise_costs(C, C, LIMITS)
        for k in range(1, n + 1):
            V = g.order[:k]
            values = [max(min(J[v, x] for v in V), min(J[x, v] for v in V)) for x in range(n)]
            best = max(values)
            checks.append(best == g.trace[k - 1])
            checks.append(values[g.witnesses[k - 1]] == best)
        checks.append(all(b <= a for a, b in zip(g.trace, g.trace[1:])))
        # two-sided never exceeds round trip for the same vertex sets
        for k in (1, max(1, n // 4), max(1, n // 2)):
            V = g.order[:k]
            rt = max(min(max(J[v, x], J[x, v]) for v in V) for x in range(n))
            checks.append(g.trace[k - 1] <= rt)
    elapsed = time.perf_counter() - t0
    ok, line = report(2, all(checks), f"{sum(checks)}/{len(checks)} checks over 20 sets", elapsed, 120)
    emit(capsys, line)
    assert ok, line


def test_criterion_3_sweep_trend(capsys, standard_family):
    t0 = time.perf_counter()
    records = forest_sweep(standard_family, SweepSetup(max_expansions=4000), 20, 0)
    rows = sweep_summary(records)
    d = [r["dispersion"] for r in rows]
    rho_cost = spearmanr(d, [r["mean_cost"] for r in rows])[0]
    rho_checks = spearmanr(d, [r["mean_collision_checks"] for r in rows])[0]
    succ = [r["successes"] for r in rows]
    elapsed = time.perf_counter() - t0
    ok = len(rows) >= 4 and rho_cost >= 0.5 and rho_checks <= -0.5
    ok, line = report(3, ok, f"cost rho {rho_cost:+.2f}, checks rho {rho_checks:+.2f}, successes {succ}",
                      elapsed, 15 * 60)
    emit(capsys, line)
    assert ok, line


CORRIDOR_WIDTHS = (0.45, 0.5, 0.55, 0.6, 0.7, 0.8, 1.0, 1.2, 1.5)
START_OFFSETS = (0.2, 0.5)


def test_criterion_4_completeness_ordering(capsys, standard_family):
    t0 = time.perf_counter()
    graphs = standard_family.graphs  # coarsest first
    solved = [set() for _ in graphs]
    for w in CORRIDOR_WIDTHS:
        raw = make_corridor(CorridorSpec(w, length=6.0), 12.0, 0.1)
        mid = raw.origin[1] + (raw.occupancy.shape[1] // 2 + 0.5) * raw.resolution
        grid = inflate(raw, 0.2)
        for off in START_OFFSETS:
            for i, g in enumerate(graphs):
                r = plan(g, grid, FullState.rest((1.0, mid + off)), GoalSpec((11.0, mid), 1.0), math.inf,
                         max_expansions=20000)
                if r.outcome is Outcome.SUCCESS:
                    solved[i].add((w, off))
    nested = all(solved[i] <= solved[j] for i in range(len(graphs)) for j in range(i + 1, len(graphs)))
    strict = bool(solved[-1] - solved[0])
    elapsed = time.perf_counter() - t0
    counts = [len(s) for s in solved]
    ok, line = report(4, nested and strict, f"solved per graph coarse to fine {counts}, nested {nested}",
                      elapsed, 5 * 60)
    emit(capsys, line)
    assert ok, line


def test_criterion_5_state_machine(capsys):
    t0 = time.perf_counter()
    cfg = AdaptiveConfig(budget=1.0, margin_fraction=0.5, consecutive_successes=3, window=4)
    T, E = PlanResult(Outcome.TIMEOUT, budget_used=1.0), PlanResult(Outcome.EXHAUSTED, budget_used=0.2)
    fast, slow = PlanResult(Outcome.SUCCESS, budget_used=0.3), PlanResult(Outcome.SUCCESS, budget_used=0.8)
    checks = []
    for size in (1, 2, 3, 5):
        top = size - 1
        for index, count in itertools.product(range(size), range(cfg.consecutive_successes)):
            for r in (T, E, fast, slow):
                s = AdaptiveState.initial(size, cfg)
                s.index, s.success_count = index, count
                new = next_index(s, r, size, cfg)
                if r is T:
                    want = (min(index + 1, top), 0)
                elif r is E or (r is fast and count + 1 == cfg.consecutive_successes):
                    want = (max(index - 1, 0), 0)
                elif r is fast:
                    want = (index, count + 1)
                else:
                    want = (index, 0)
                checks.append((new.index, new.success_count) == want)
    # successes refine, one isolated timeout bumps up, repeated timeouts saturate
    s = AdaptiveState.initial(5, cfg)
    trace = []
    for r in [fast] * 9 + [T] + [fast] * 6 + [T] * 6:
        s = next_index(s, r, 5, cfg)
        trace.append(s.index)
    checks.append(trace[8] < trace[0])
    checks.append(trace[9] == trace[8] + 1)
    checks.append(trace[15] < trace[9])
    checks.append(trace[-1] == 4 and all(b >= a for a, b in zip(trace[16:], trace[17:])))
    elapsed = time.perf_counter() - t0
    ok, line = report(5, all(checks), f"{sum(checks)}/{len(checks)} checks, trace {trace}", elapsed, 1)
    emit(capsys, line)
    assert ok, line


def test_criterion_6_sparse_to_dense(capsys, missions):
    runs, elapsed = missions
    mission, _, adaptive = runs["comparison", "adaptive"]
    baseline = runs["comparison", "baseline"][2]
    x_mid = 50.0
    xs = np.array([c["position"][0] for c in adaptive.cycles])
    idx = np.array([c["index"] for c in adaptive.cycles])
    sparse_idx = float(idx[xs < x_mid].mean())
    dense_idx = float(idx[xs >= x_mid].mean()) if np.any(xs >= x_mid) else math.nan
    a, b = adaptive.summary, baseline.summary
    reached = bool(a["reached_goal"])
    baseline_worse = (not b["reached_goal"]) or b["total_time"] > 2 * a["total_time"]
    coarser_in_dense = dense_idx > sparse_idx
    detail = (f"adaptive {a['termination']} in {a['total_time']:.1f} s, baseline {b['termination']} "
              f"in {b['total_time']:.1f} s, mean index sparse {sparse_idx:.2f} dense {dense_idx:.2f}")
    ok, line = report(6, reached and baseline_worse and coarser_in_dense, detail, elapsed, 10 * 60)
    emit(capsys, line)
    assert ok, line


def test_criterion_7_safety_and_continuity(capsys, missions):
    runs, elapsed = missions
    t0 = time.perf_counter()
    failures = []
    for (name, kind), (mission, spec, log) in runs.items():
        audit = audit_log(log, mission)
        failures += [f"{name}/{kind}:{k}" for k, v in audit.items() if not v]
        if run_mission(mission, spec).to_json() != log.to_json():
            failures.append(f"{name}/{kind}:rerun")
    elapsed += time.perf_counter() - t0
    detail = f"{len(runs)} missions audited and rerun" + (f", failed {failures}" if failures else "")
    ok, line = report(7, not failures, detail, elapsed, 10 * 60)
    emit(capsys, line)
    assert ok, line
