"""A* over the translated primitive lattice of a dispersion graph.

The graph is translated so that an anchor vertex ``a`` (close to the start in
velocity/acceleration) sits on the start position; vertex ``v`` then lives at
``start + p_v - p_a``.  Graph edges are re-used by translation, so a node is
identified by its vertex id plus its quantised position.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph_gen import DispersionGraph
from .motion_primitives import (
    DynamicsLimits,
    FullState,
    MotionPrimitive,
    _jerk_cost,
    Trajectory,
    hold,
    optimize_batch,
    quintic_coeffs,
    segment_samples,
    try_stopping_primitive,
)
from .world import OccupancyGrid, default_dt_check, is_trajectory_free


class InvalidStartError(ValueError):
    """Start state is in collision, off the map or outside the dynamic limits."""


class Outcome(str, enum.Enum):
    SUCCESS = "Success"
    TIMEOUT = "Timeout"
    EXHAUSTED = "Exhausted"


@dataclass(frozen=True)
class GoalSpec:
    position: tuple
    r_goal: float
    terminal_max_speed: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(x) for x in np.ravel(self.position)))
        if not self.r_goal > 0:
            raise ValueError("r_goal must be > 0")

    def distance(self, pos) -> float:
        return float(np.linalg.norm(np.asarray(pos, float)[: len(self.position)] - self.position))

    def satisfied(self, pos, vel) -> bool:
        return self.distance(pos) <= self.r_goal and float(np.linalg.norm(vel)) <= self.terminal_max_speed


@dataclass
class PlanStats:
    nodes_expanded: int = 0
    collision_checks: int = 0
    wall_time: float = 0.0


@dataclass
class PlanResult:
    outcome: Outcome
    trajectory: Trajectory | None = None
    cost: float = math.inf
    stats: PlanStats = field(default_factory=PlanStats)
    dispersion: float = math.nan
    budget_used: float = 0.0  # fraction of the budget consumed (expansions or seconds)
    # lattice nodes along the trajectory: (vertex id, position, arrival time); vertex -1 is the start
    nodes: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.outcome is Outcome.SUCCESS

    def record(self) -> dict:
        """Flat row for CSV logging."""
        return {
            "outcome": self.outcome.value,
            "cost": self.cost,
            "nodes_expanded": self.stats.nodes_expanded,
            "collision_checks": self.stats.collision_checks,
            "wall_time_ms": 1000.0 * self.stats.wall_time,
            "dispersion": self.dispersion,
        }


RECORD_FIELDS = ("outcome", "cost", "nodes_expanded", "collision_checks", "wall_time_ms", "dispersion")


@dataclass(frozen=True)
class StateKey:
    position: tuple
    velocity: tuple
    acceleration: tuple


def state_key(state: FullState, quantization) -> StateKey:
    """Floor-quantise each component; ``quantization`` is (pos, vel, acc) cell sizes."""
    qp, qv, qa = (float(q) for q in quantization)
    if not (qp > 0 and qv > 0 and qa > 0):
        raise ValueError("quantization cells must be positive")

    def q(x, c):
        return tuple(int(v) for v in np.floor(np.asarray(x) / c))

    return StateKey(q(state.position, qp), q(state.velocity, qv), q(state.acceleration, qa))


def max_speed(limits: DynamicsLimits, dim: int) -> float:
    """Largest Euclidean speed allowed by per-axis bounds."""
    return limits.v_max * math.sqrt(dim)


def heuristic(state: FullState, goal: GoalSpec, limits: DynamicsLimits) -> float:
    gap = max(0.0, goal.distance(state.position) - goal.r_goal)
    return limits.rho * gap / max_speed(limits, state.dim)


def anchor_vertices(graph: DispersionGraph, start: FullState, m: int, rho: float | None = None):
    """The ``m`` vertices with the cheapest position-free connection from
    ``start``, with the displacement each such connection covers."""
    rho = graph.limits.rho if rho is None else rho
    disp, cost = natural_displacements(start, graph.vertices, rho)
    order = np.lexsort((np.arange(cost.size), cost))[: max(1, m)]
    return order, disp[order]


def connect_start(graph: DispersionGraph, start: FullState, k: int = 8, limits: DynamicsLimits | None = None,
                  anchors: int = 3):
    """Primitives from ``start`` into the lattice, cheapest first.

    Candidate targets are all vertices of several translated graph copies:
    one with the graph's origin on the start, and one per anchor vertex (the
    ``anchors`` vertices cheapest to reach when position is left free) placing
    that vertex where such a connection ends.  The ``k`` lowest finite costs
    are kept.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    limits = limits or graph.limits
    return [p for _, p in _start_connections(graph, start, k, limits, anchors)]


def natural_displacements(start: FullState, targets: np.ndarray, rho: float):
    """Displacement to each target (A, 3, D) that makes the unconstrained
    min-jerk connection cheapest, ignoring the targets' own positions.

    For a fixed duration the jerk integral is quadratic in the displacement of
    each axis, so three evaluations give the minimiser; the duration is picked
    from a log-spaced grid.  Returns (displacements (A, D), costs (A,)).
    """
    A, _, D = targets.shape
    flat = targets.transpose(0, 2, 1).reshape(A * D, 3)
    src = np.repeat(start.as_array().T[None], A, axis=0).reshape(A * D, 3)
    src_p = src.copy()
    src_p[:, 0] = 0.0
    best_cost = np.full(A, np.inf)
    best = np.zeros((A, D))
    for T in _NATURAL_DURATIONS:
        js = []
        for d in (-1.0, 0.0, 1.0):
            end = flat.copy()
            end[:, 0] = d
            js.append(_jerk_cost(src_p[:, :, None], end[:, :, None], np.full(A * D, T)))
        jm, j0, jp = js
        curv = 0.5 * (jp + jm) - j0
        slope = 0.5 * (jp - jm)
        disp = -slope / (2.0 * curv)
        jmin = (j0 - slope**2 / (4.0 * curv)).reshape(A, D).sum(axis=1) + rho * T
        better = jmin < best_cost
        best_cost[better] = jmin[better]
        best[better] = disp.reshape(A, D)[better]
    # a target sharing the start's velocity and acceleration is reached by a hold
    same = np.all(np.abs(targets[:, 1:] - start.as_array()[1:]) <= 1e-12, axis=(1, 2))
    best[same] = 0.0
    best_cost[same] = 0.0
    return best, best_cost


_NATURAL_DURATIONS = np.geomspace(0.05, 20.0, 60)


def translation_offsets(graph: DispersionGraph, start: FullState, anchors: int, rho: float | None = None) -> np.ndarray:
    """Graph copies used for start connections, as offsets added to vertex positions.

    One copy is centred on the start.  Each anchor vertex gets a copy placing
    it where an unconstrained connection from the start would naturally
    arrive.
    """
    offs = [start.position]
    if anchors > 0:
        anc, disp = anchor_vertices(graph, start, anchors, rho)
        offs += list(start.position + disp - graph.vertices[anc, 0, :])
    return np.array(offs)


def _start_connections(graph, start, k, limits, anchors=3):
    V = graph.num_vertices
    offs = translation_offsets(graph, start, anchors, limits.rho)
    targets = np.repeat(graph.vertices[None], len(offs), axis=0)  # (A, V, 3, D)
    targets[:, :, 0, :] += offs[:, None, :]
    targets = targets.reshape(-1, 3, graph.dim)
    src = np.broadcast_to(start.as_array(), targets.shape)
    T, J = optimize_batch(np.array(src), targets, limits)
    finite = np.flatnonzero(np.isfinite(J))
    order = finite[np.lexsort((finite, J[finite]))]
    out, seen = [], set()
    for i in order:
        v = int(i % V)
        tgt = FullState.from_array(targets[i])
        key = (v, tgt.position.tobytes())
        if key in seen:
            continue
        seen.add(key)
        if T[i] > 0:
            c = quintic_coeffs(start.as_array(), targets[i], T[i])
            traj = Trajectory(np.array([T[i]]), c[None])
        else:
            traj = hold(start, 0.0)
        out.append((v, MotionPrimitive(start, tgt, traj, float(J[i]))))
        if len(out) == k:
            break
    return out


def _edge_samples(graph: DispersionGraph, dt: float):
    key = ("edge_samples", dt)
    cache = graph.cache()
    if key not in cache:
        rel, _, seg, _ = segment_samples(graph.edge_coeffs, graph.edge_duration, dt)
        counts = np.bincount(seg, minlength=graph.num_edges)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        cache[key] = (rel, bounds)
    return cache[key]


def _check_edges(graph, grid, edges, offsets, dt):
    """Free-mask for ``edges`` translated by ``offsets`` (one row per edge)."""
    rel, bounds = _edge_samples(graph, dt)
    lo, hi = bounds[edges], bounds[edges + 1]
    counts = hi - lo
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    idx = np.repeat(lo - first, counts) + np.arange(counts.sum())
    c0 = graph.edge_coeffs[edges, :, 0] + offsets
    pts = rel[idx] + np.repeat(c0, counts, axis=0)
    free = grid.points_free(pts)
    return np.logical_and.reduceat(free, first)


def validate_start(grid: OccupancyGrid, start: FullState, limits: DynamicsLimits) -> None:
    if not limits.admits(start, tol=1e-6):
        raise InvalidStartError("start velocity/acceleration outside the dynamic limits")
    if not grid.is_free(start.position):
        raise InvalidStartError(f"start {start.position.tolist()} is occupied or off the map")


def plan(
    graph: DispersionGraph,
    grid: OccupancyGrid,
    start: FullState,
    goal: GoalSpec,
    budget: float = math.inf,
    *,
    max_expansions: int | None = None,
    k: int = 8,
    dt_check: float | None = None,
    use_heuristic: bool = True,
    require_safe_stop: bool = False,
    stop_grid: OccupancyGrid | None = None,
    anchors: int = 3,
    seeds: Sequence = (),
) -> PlanResult:
    """Best-first search from ``start`` to the goal region.

    ``max_expansions`` switches to virtual time: the budget is counted in node
    expansions instead of seconds, which makes results machine independent.
    With ``require_safe_stop`` a goal node is only accepted if the stopping
    trajectory from it is collision-free (checked on ``stop_grid``, default
    ``grid``).  ``seeds`` are extra start connections ``(vertex id,
    MotionPrimitive)`` ending on a lattice node, typically the unexecuted
    rest of the previous plan's current edge.
    """
    t0 = time.perf_counter()
    limits = graph.limits
    validate_start(grid, start, limits)
    dt = dt_check or default_dt_check(grid, limits.v_max)
    stats = PlanStats()
    dim = graph.dim
    goal_pos = np.asarray(goal.position, float)
    # every move after the start connection follows a graph edge, so the
    # fastest edge bounds how quickly the goal can be approached
    speed = min(max_speed(limits, dim), graph.speed_bound)
    res = grid.resolution

    def h(pos):
        if not use_heuristic:
            return 0.0
        return limits.rho * max(0.0, float(np.linalg.norm(pos - goal_pos)) - goal.r_goal) / speed

    # node arrays: vertex id (-1 = start), position, g, parent, segment coeffs/duration
    n_vertex = [-1]
    n_pos = [start.position]
    n_g = [0.0]
    n_parent = [-1]
    n_coeffs = [None]
    n_dur = [0.0]
    n_key = [("start",)]
    closed = set()
    best = {("start",): 0}
    counter = itertools.count()
    open_ = [(h(start.position), -0.0, next(counter), 0)]

    def finish(outcome, node=None):
        stats.wall_time = time.perf_counter() - t0
        used = stats.nodes_expanded / max_expansions if max_expansions else (
            stats.wall_time / budget if budget > 0 and math.isfinite(budget) else 0.0)
        if node is None:
            return PlanResult(outcome, stats=stats, dispersion=graph.dispersion, budget_used=used)
        chain = []
        while node > 0:
            chain.append(node)
            node = n_parent[node]
        chain.reverse()
        if chain:
            traj = Trajectory(np.array([n_dur[i] for i in chain]), np.stack([n_coeffs[i] for i in chain]))
        else:
            traj = hold(start, 0.0)
        cost = n_g[chain[-1]] if chain else 0.0
        times = np.cumsum([n_dur[i] for i in chain])
        nodes = [(-1, start.position.tolist(), 0.0)]
        nodes += [(n_vertex[i], n_pos[i].tolist(), float(t)) for i, t in zip(chain, times)]
        return PlanResult(outcome, traj, cost, stats, graph.dispersion, used, nodes)

    def goal_ok(node):
        v = n_vertex[node]
        vel = start.velocity if v < 0 else graph.vertices[v, 1]
        if not goal.satisfied(n_pos[node], vel):
            return False
        if not require_safe_stop:
            return True
        acc = start.acceleration if v < 0 else graph.vertices[v, 2]
        stop = try_stopping_primitive(FullState(n_pos[node], vel, acc), limits)
        stats.collision_checks += 1
        return stop is not None and is_trajectory_free(stop_grid or grid, stop, dt).free

    while open_:
        if max_expansions is not None:
            if stats.nodes_expanded >= max_expansions:
                return finish(Outcome.TIMEOUT)
        elif time.perf_counter() - t0 >= budget:
            return finish(Outcome.TIMEOUT)
        f, neg_g, _, node = heapq.heappop(open_)
        key = n_key[node]
        if key in closed or best[key] != node:
            continue  # stale entry
        closed.add(key)
        stats.nodes_expanded += 1
        if goal_ok(node):
            return finish(Outcome.SUCCESS, node)
        g = n_g[node]
        pos = n_pos[node]
        u = n_vertex[node]

        if u < 0:
            conns = list(seeds) + _start_connections(graph, start, k, limits, anchors)
            for v, prim in conns:
                key = (v, tuple(np.floor(prim.end.position / res).astype(int).tolist()))
                if key in closed or (key in best and n_g[best[key]] <= g + prim.cost):
                    continue
                stats.collision_checks += 1
                if not is_trajectory_free(grid, prim.trajectory, dt).free:
                    continue
                _push(open_, best, key, v, prim.end.position, g + prim.cost, node,
                      prim.trajectory.coeffs[0], prim.trajectory.durations[0],
                      n_vertex, n_pos, n_g, n_parent, n_coeffs, n_dur, n_key, counter, h, closed)
            continue

        edges = graph.out_edges(u)
        if edges.size == 0:
            continue
        dst = graph.edge_dst[edges]
        offset = pos - graph.vertices[u, 0]
        new_pos = pos + graph.edge_displacement[edges]
        cells = np.floor(new_pos / res).astype(int)
        new_g = g + graph.edge_cost[edges]
        keep = []
        keys = []
        for j in range(edges.size):
            key = (int(dst[j]), tuple(cells[j].tolist()))
            prev = best.get(key)
            if key in closed or (prev is not None and n_g[prev] <= new_g[j]):
                continue
            keep.append(j)
            keys.append(key)
        if not keep:
            continue
        keep = np.asarray(keep)
        stats.collision_checks += keep.size
        free = _check_edges(graph, grid, edges[keep], np.broadcast_to(offset, (keep.size, dim)), dt)
        for j, key, ok in zip(keep, keys, free):
            if not ok:
                continue
            e = edges[j]
            c = np.array(graph.edge_coeffs[e])
            c[:, 0] = graph.edge_coeffs[e, :, 0] + offset
            _push(open_, best, key, int(dst[j]), new_pos[j], float(new_g[j]), node, c,
                  graph.edge_duration[e], n_vertex, n_pos, n_g, n_parent, n_coeffs, n_dur, n_key, counter, h, closed)

    return finish(Outcome.EXHAUSTED)


def _push(open_, best, key, v, pos, g, parent, coeffs, dur, n_vertex, n_pos, n_g, n_parent, n_coeffs, n_dur,
          n_key, counter, h, closed):
    prev = best.get(key)
    if key in closed or (prev is not None and n_g[prev] <= g):
        return
    node = len(n_g)
    n_vertex.append(v)
    n_pos.append(np.asarray(pos, float))
    n_g.append(g)
    n_parent.append(parent)
    n_coeffs.append(coeffs)
    n_dur.append(float(dur))
    n_key.append(key)
    best[key] = node
    heapq.heappush(open_, (g + h(n_pos[node]), -g, next(counter), node))
