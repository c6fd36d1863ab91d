"""Uniform input-sampling planner used as the comparison baseline.

Successors apply a constant per-axis jerk drawn from an ``n``-point grid on
``[-u_max, u_max]`` for a fixed duration ``tau``.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .motion_primitives import DynamicsLimits, FullState, Trajectory, hold, segment_samples, try_stopping_primitive
from .search import (
    GoalSpec,
    Outcome,
    PlanResult,
    PlanStats,
    max_speed,
    state_key,
    validate_start,
)
from .world import OccupancyGrid, default_dt_check, is_trajectory_free


@dataclass(frozen=True)
class BaselineConfig:
    n: int = 3
    tau: float = 1.0
    u_max: float | None = None  # None ties it to a_max / tau
    depth_limit: int = 50
    velocity_cell: float = 0.5
    acceleration_cell: float = 0.5

    def __post_init__(self):
        if self.n < 1 or self.n % 2 == 0:
            raise ValueError("n must be odd so that zero input is included")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.u_max is not None and not self.u_max > 0:
            raise ValueError("u_max must be > 0")
        if self.depth_limit < 1:
            raise ValueError("depth_limit must be >= 1")

    def jerk(self, limits: DynamicsLimits) -> float:
        return self.u_max if self.u_max is not None else limits.a_max / self.tau

    def inputs(self, limits: DynamicsLimits, dim: int) -> np.ndarray:
        levels = np.linspace(-1.0, 1.0, self.n) * self.jerk(limits) if self.n > 1 else np.zeros(1)
        grids = np.meshgrid(*([levels] * dim), indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)


def integrate(states: np.ndarray, u: np.ndarray, tau: float) -> np.ndarray:
    """Forward-integrate (.., 3, D) states under constant jerk ``u`` for ``tau``."""
    p, v, a = states[..., 0, :], states[..., 1, :], states[..., 2, :]
    p1 = p + v * tau + a * tau**2 / 2 + u * tau**3 / 6
    v1 = v + a * tau + u * tau**2 / 2
    a1 = a + u * tau
    return np.stack([p1, v1, a1], axis=-2)


def within_limits(state: np.ndarray, u: np.ndarray, tau: float, limits: DynamicsLimits, tol: float = 1e-9) -> np.ndarray:
    """Exact check of |v|, |a| over the constant-jerk segment (rows of ``u``)."""
    v, a = state[1], state[2]
    a1 = a + u * tau
    v1 = v + a * tau + u * tau**2 / 2
    ok = np.all(np.abs(a1) <= limits.a_max + tol, axis=1) & np.all(np.abs(v1) <= limits.v_max + tol, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ts = np.where(u != 0, -a / u, -1.0)
        vs = v + a * ts + u * ts**2 / 2
    interior = (ts > 0) & (ts < tau)
    ok &= ~np.any(interior & (np.abs(vs) > limits.v_max + tol), axis=1)
    return ok


def _segment_coeffs(state: np.ndarray, u: np.ndarray) -> np.ndarray:
    m, dim = u.shape
    c = np.zeros((m, dim, 6))
    c[:, :, 0] = state[0]
    c[:, :, 1] = state[1]
    c[:, :, 2] = state[2] / 2
    c[:, :, 3] = u / 6
    return c


def baseline_plan(
    grid: OccupancyGrid,
    start: FullState,
    goal: GoalSpec,
    cfg: BaselineConfig,
    budget: float = math.inf,
    limits: DynamicsLimits | None = None,
    *,
    max_expansions: int | None = None,
    dt_check: float | None = None,
    require_safe_stop: bool = False,
    stop_grid: OccupancyGrid | None = None,
    seeds=(),
) -> PlanResult:
    """Uniform-input lattice search; ``seeds`` are extra start connections
    (MotionPrimitive) whose end states join the lattice as depth-0 nodes."""
    if limits is None:
        raise ValueError("baseline_plan needs dynamic limits")
    t0 = time.perf_counter()
    validate_start(grid, start, limits)
    dt = dt_check or default_dt_check(grid, limits.v_max)
    dim = start.dim
    inputs = cfg.inputs(limits, dim)
    edge_cost = limits.rho * cfg.tau + np.sum(inputs**2, axis=1) * cfg.tau
    quant = (grid.resolution, cfg.velocity_cell, cfg.acceleration_cell)
    goal_pos = np.asarray(goal.position, float)
    speed = max_speed(limits, dim)
    stats = PlanStats()

    def h(pos):
        return limits.rho * max(0.0, float(np.linalg.norm(pos - goal_pos)) - goal.r_goal) / speed

    n_state = [start.as_array()]
    n_g = [0.0]
    n_parent = [-1]
    n_coeffs = [None]
    n_depth = [0]
    n_dur = [0.0]
    n_key = [state_key(start, quant)]
    best = {n_key[0]: 0}
    closed = set()
    counter = itertools.count()
    open_ = [(h(start.position), -0.0, next(counter), 0)]
    for prim in seeds:
        if prim.trajectory.num_segments != 1:
            raise ValueError("seed connections must be single segments")
        key = state_key(prim.end, quant)
        if key in best and n_g[best[key]] <= prim.cost:
            continue
        stats.collision_checks += 1
        if not is_trajectory_free(grid, prim.trajectory, dt).free:
            continue
        new = len(n_g)
        n_state.append(prim.end.as_array())
        n_g.append(float(prim.cost))
        n_parent.append(0)
        n_coeffs.append(prim.trajectory.coeffs[0])
        n_dur.append(float(prim.trajectory.durations[0]))
        n_depth.append(0)
        n_key.append(key)
        best[key] = new
        heapq.heappush(open_, (prim.cost + h(prim.end.position), -float(prim.cost), next(counter), new))

    def finish(outcome, node=None):
        stats.wall_time = time.perf_counter() - t0
        used = stats.nodes_expanded / max_expansions if max_expansions else (
            stats.wall_time / budget if budget > 0 and math.isfinite(budget) else 0.0)
        if node is None:
            return PlanResult(outcome, stats=stats, budget_used=used)
        chain = []
        while node > 0:
            chain.append(node)
            node = n_parent[node]
        chain.reverse()
        if chain:
            traj = Trajectory(np.array([n_dur[i] for i in chain]), np.stack([n_coeffs[i] for i in chain]))
            cost = n_g[chain[-1]]
        else:
            traj, cost = hold(start, 0.0), 0.0
        times = np.cumsum([n_dur[i] for i in chain])
        nodes = [(-1, start.position.tolist(), 0.0)]
        nodes += [(-1, n_state[i][0].tolist(), float(t)) for i, t in zip(chain, times)]
        return PlanResult(outcome, traj, cost, stats, math.nan, used, nodes)

    while open_:
        if max_expansions is not None:
            if stats.nodes_expanded >= max_expansions:
                return finish(Outcome.TIMEOUT)
        elif time.perf_counter() - t0 >= budget:
            return finish(Outcome.TIMEOUT)
        _, _, _, node = heapq.heappop(open_)
        key = n_key[node]
        if key in closed or best[key] != node:
            continue
        closed.add(key)
        stats.nodes_expanded += 1
        st = n_state[node]
        if goal.satisfied(st[0], st[1]):
            ok = True
            if require_safe_stop:
                stats.collision_checks += 1
                stop = try_stopping_primitive(FullState.from_array(st), limits)
                ok = stop is not None and is_trajectory_free(stop_grid or grid, stop, dt).free
            if ok:
                return finish(Outcome.SUCCESS, node)
        if n_depth[node] >= cfg.depth_limit:
            continue
        feasible = within_limits(st, inputs, cfg.tau, limits)
        idx = np.flatnonzero(feasible)
        if idx.size == 0:
            continue
        nxt = integrate(np.broadcast_to(st, (idx.size, 3, dim)), inputs[idx], cfg.tau)
        g_new = n_g[node] + edge_cost[idx]
        keep, keys = [], []
        for j in range(idx.size):
            kj = state_key(FullState.from_array(nxt[j]), quant)
            prev = best.get(kj)
            if kj in closed or (prev is not None and n_g[prev] <= g_new[j]):
                continue
            keep.append(j)
            keys.append(kj)
        if not keep:
            continue
        keep = np.asarray(keep)
        coeffs = _segment_coeffs(st, inputs[idx[keep]])
        rel, c0, seg, _ = segment_samples(coeffs, np.full(keep.size, cfg.tau), dt)
        free = grid.points_free(rel + c0)
        first = np.searchsorted(seg, np.arange(keep.size))
        free_edge = np.logical_and.reduceat(free, first)
        stats.collision_checks += keep.size
        for j, kj, ok, c in zip(keep, keys, free_edge, coeffs):
            if not ok:
                continue
            new = len(n_g)
            n_state.append(nxt[j])
            n_g.append(float(g_new[j]))
            n_parent.append(node)
            n_coeffs.append(c)
            n_dur.append(cfg.tau)
            n_depth.append(n_depth[node] + 1)
            n_key.append(kj)
            best[kj] = new
            heapq.heappush(open_, (n_g[new] + h(nxt[j][0]), -n_g[new], next(counter), new))
    return finish(Outcome.EXHAUSTED)
