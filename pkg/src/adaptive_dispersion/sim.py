"""Receding-horizon mission simulation with a local/global planner split.

Time is simulated; the robot tracks the committed trajectory perfectly.  Each
replan period the local planner is started from the state the robot will
have ``commit_horizon`` seconds later, so the new plan splices in with full
position/velocity/acceleration continuity.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adaptive import AdaptiveConfig, AdaptiveState, detect_infeasible, graph_for_index, next_index
from .baseline import BaselineConfig, baseline_plan
from .global_planner import GridPath, global_plan, local_goal_point
from .graph_gen import GraphFamily
from .motion_primitives import (
    DynamicsLimits,
    FullState,
    MotionPrimitive,
    Trajectory,
    concatenate,
    hold,
    stopping_primitive,
    trajectory_cost,
)
from .search import GoalSpec, InvalidStartError, Outcome, PlanResult, PlanStats, plan
from .world import ForestSpec, OccupancyGrid, forest_for_corridor, inflate, is_trajectory_free, make_forest

__all__ = [
    "BaselineConfig",
    "Mission",
    "PlannerSpec",
    "SimulationLog",
    "baseline_plan",
    "SweepSetup",
    "export_metrics",
    "forest_sweep",
    "sweep_map",
    "sweep_summary",
    "global_plan",
    "local_goal",
    "read_metrics",
    "read_sweep",
    "write_sweep",
    "run_mission",
]


@dataclass
class Mission:
    start: tuple
    waypoints: list
    global_map: OccupancyGrid
    limits: DynamicsLimits
    window: float = 10.0  # side length of the square local map (m)
    window_margin: float = 1.0  # local goals are kept this far inside the window
    replan_period: float = 0.5
    budget: float = 0.15  # wall-clock seconds per plan
    max_expansions: int | None = None  # virtual-time budget, replaces ``budget`` when set
    commit_horizon: float = 0.3
    robot_radius: float = 0.2
    safety_margin: float | None = None  # extra inflation for planning; None derives it from the grid
    global_every: int = 4
    global_resolution: float = 0.5
    goal_tolerance: float = 1.0  # the goal counts as reached once the robot passes this close
    final_speed: float = math.inf  # terminal speed bound for the last local goal
    local_r_goal: float = 1.0
    time_cap: float = 120.0
    dt_check: float | None = None

    def __post_init__(self):
        self.start = tuple(float(x) for x in self.start)
        self.waypoints = [tuple(float(x) for x in w) for w in self.waypoints]
        if not self.waypoints:
            raise ValueError("mission needs at least one waypoint")
        for p in [self.start, *self.waypoints]:
            if not self.global_map.in_bounds(self.global_map.index_of(p))[0]:
                raise ValueError(f"point {p} lies outside the global map")
        if self.commit_horizon > self.replan_period + self.budget:
            raise ValueError("commit horizon must be <= replan period + budget")
        if not (self.replan_period > 0 and self.window > 2 * self.window_margin):
            raise ValueError("bad replan period or window")

    @property
    def margin(self) -> float:
        if self.safety_margin is not None:
            return self.safety_margin
        res = self.global_map.resolution
        return res * (math.sqrt(self.global_map.dim) + 0.5)

    @property
    def check_dt(self) -> float:
        return self.dt_check or self.global_map.resolution / self.limits.v_max

    def header(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("global_map", "limits")}
        d["limits"] = {"v_max": self.limits.v_max, "a_max": self.limits.a_max, "rho": self.limits.rho}
        d["map_dims"] = list(self.global_map.dims)
        d["map_resolution"] = self.global_map.resolution
        return d


@dataclass
class PlannerSpec:
    kind: str  # "adaptive" | "fixed" | "baseline"
    family: GraphFamily | None = None
    index: int = 0  # fixed planner: adaptive-style index (0 = finest)
    adaptive: AdaptiveConfig = field(default_factory=AdaptiveConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    k: int = 8
    anchors: int = 3
    reuse: bool = True  # offer the rest of the previous plan as a start connection

    def __post_init__(self):
        if self.kind not in ("adaptive", "fixed", "baseline"):
            raise ValueError(f"unknown planner kind {self.kind!r}")
        if self.kind != "baseline" and (self.family is None or len(self.family) == 0):
            raise ValueError("graph planners need a nonempty family")
        if self.kind == "fixed" and not 0 <= self.index < len(self.family):
            raise ValueError("fixed index outside the family")


@dataclass
class SimulationLog:
    header: dict
    cycles: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    pieces: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        data = {
            "header": self.header,
            "cycles": self.cycles,
            "samples": self.samples,
            "pieces": [p.to_dict() for p in self.pieces],
            "summary": self.summary,
        }
        return json.dumps(data, sort_keys=True)


def local_goal(path, window_lo, window_hi, goal: GoalSpec, r_goal: float | None = None) -> GoalSpec:
    """Intersect the global path with the local window.

    ``path`` is a GridPath or an (N, D) array whose first point is inside the
    window.  If the final goal is in the window it is returned unchanged;
    otherwise the goal is the point where the path first leaves the window.
    """
    pts = path.points if isinstance(path, GridPath) else np.asarray(path, float)
    point, is_final = local_goal_point(pts, window_lo, window_hi, goal.position)
    if is_final:
        return goal
    return GoalSpec(tuple(point.tolist()), r_goal if r_goal is not None else goal.r_goal)


def _extend(traj: Trajectory, duration: float) -> Trajectory:
    """Pad with a hold of the (resting) end state up to ``duration``."""
    if traj.total_duration >= duration:
        return traj
    return concatenate([traj, hold(traj.end_state, duration - traj.total_duration)])


def _trim_path(points: np.ndarray, pos: np.ndarray) -> np.ndarray:
    i = int(np.argmin(np.linalg.norm(points - pos, axis=1)))
    return np.vstack([pos[None, :], points[i:]])


def _path_length(piece: Trajectory, dt: float = 0.01) -> float:
    t = np.linspace(0.0, piece.total_duration, max(2, int(math.ceil(piece.total_duration / dt)) + 1))
    pts = piece.sample(t, 0)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def _failed(outcome: Outcome) -> PlanResult:
    return PlanResult(outcome, stats=PlanStats())


@dataclass
class _Commitment:
    """The last accepted plan, located on the committed trajectory's clock."""

    trajectory: Trajectory
    offset: float  # committed-clock time at which the plan starts
    nodes: list  # (vertex id, position, time into the plan)
    tag: object  # graph index (or "baseline") the node ids refer to

    def seed(self, t: float, limits: DynamicsLimits):
        """Remainder of the plan from committed time ``t`` to its next node, as
        ``(vertex id, MotionPrimitive)``; None inside the head or the stop tail."""
        local = t - self.offset
        if local < 0.0:
            return None
        for v, pos, tn in self.nodes[1:]:
            if tn > local + 1e-9:
                rest = self.trajectory.slice(local, tn)
                if rest.num_segments != 1:
                    return None
                prim = MotionPrimitive(rest.start_state, rest.end_state, rest, trajectory_cost(rest, limits.rho))
                return v, prim
        return None


def run_mission(mission: Mission, planner: PlannerSpec, seed: int = 0) -> SimulationLog:
    lim = mission.limits
    plan_map = inflate(mission.global_map, mission.robot_radius + mission.margin)
    audit_map = inflate(mission.global_map, mission.robot_radius)
    factor = max(1, int(round(mission.global_resolution / mission.global_map.resolution)))
    coarse = audit_map.coarsen(factor)
    dt = mission.check_dt
    virtual = mission.max_expansions is not None
    budget = math.inf if virtual else mission.budget
    header = {
        "mission": mission.header(),
        "planner": planner.kind,
        "seed": seed,
        "virtual_time": virtual,
        "budget": mission.budget,
        "max_expansions": mission.max_expansions,
    }
    if planner.kind == "baseline":
        header["baseline"] = asdict(planner.baseline)
    else:
        header["dispersions"] = list(planner.family.dispersions)
        header["adaptive"] = asdict(planner.adaptive)
    log = SimulationLog(header)

    family = planner.family
    fam_size = len(family) if family is not None else 1
    acfg = AdaptiveConfig(
        budget=mission.budget,
        margin_fraction=planner.adaptive.margin_fraction,
        consecutive_successes=planner.adaptive.consecutive_successes,
        window=planner.adaptive.window,
        max_expansions=mission.max_expansions,
    )
    astate = AdaptiveState.initial(fam_size, acfg)
    if planner.kind == "fixed":
        astate.index = planner.index
    history = astate.history

    start = FullState.rest(mission.start)
    cur = hold(start, 0.0)  # committed trajectory, local clock starts at the cycle time
    wp = 0
    path = None
    flags = 0
    termination = "time_cap"
    reached = False
    total_time = math.nan
    length = 0.0
    collision_free = True
    cycle = 0
    committed = None
    half = mission.window / 2.0
    final_goal = np.asarray(mission.waypoints[-1])

    while True:
        t_c = cycle * mission.replan_period
        cur = _extend(cur, mission.commit_horizon + mission.replan_period)
        now = cur.state_at(0.0)
        dist_final = float(np.linalg.norm(now.position - final_goal))
        log.samples.append({
            "t": t_c,
            "position": now.position.tolist(),
            "velocity": now.velocity.tolist(),
            "acceleration": now.acceleration.tolist(),
            "distance_to_goal": dist_final,
        })
        if reached:
            break
        if t_c >= mission.time_cap:
            break

        handoff = cur.state_at(mission.commit_horizon)
        target = np.asarray(mission.waypoints[wp])
        if path is None or cycle % mission.global_every == 0:
            path = global_plan(coarse, handoff.position, target, snap=True)
            if path is None:
                termination = "global_no_path"
                break
        is_final = wp == len(mission.waypoints) - 1
        final_spec = GoalSpec(tuple(target.tolist()),
                              mission.local_r_goal,
                              mission.final_speed if is_final else math.inf)
        inner = half - mission.window_margin
        lo, hi = handoff.position - inner, handoff.position + inner
        pts = _trim_path(np.vstack([path.points, target[None, :]]), handoff.position)
        goal = local_goal(pts, lo, hi, final_spec, r_goal=mission.local_r_goal)
        local_map = plan_map.crop(handoff.position, half)

        index = astate.index
        tag = "baseline" if planner.kind == "baseline" else index
        graph = None
        seeds = []
        if planner.reuse and committed is not None and committed.tag == tag:
            carried = committed.seed(mission.commit_horizon, lim)
            if carried is not None:
                seeds.append(carried)
        try:
            if planner.kind == "baseline":
                result = baseline_plan(local_map, handoff, goal, planner.baseline, budget, lim,
                                       max_expansions=mission.max_expansions, dt_check=dt, require_safe_stop=True,
                                       stop_grid=plan_map, seeds=[p for _, p in seeds])
            else:
                graph = graph_for_index(family, index)
                result = plan(graph, local_map, handoff, goal, budget, max_expansions=mission.max_expansions,
                              k=planner.k, anchors=planner.anchors, dt_check=dt, require_safe_stop=True,
                              stop_grid=plan_map, seeds=seeds)
        except InvalidStartError:
            result = _failed(Outcome.EXHAUSTED)
        if graph is not None:
            result.dispersion = graph.dispersion

        if planner.kind == "adaptive":
            astate = next_index(astate, result, fam_size, acfg)
            history = astate.history
        else:
            history.append((result.outcome, result.budget_used))
        flag = detect_infeasible(history, acfg.window)
        flags = flags + 1 if flag else 0

        if result.success:
            # the planner already verified this stop; recomputing it is deterministic
            head = cur.slice(0.0, mission.commit_horizon)
            tail = stopping_primitive(result.trajectory.end_state, lim)
            cur = concatenate([head, result.trajectory, tail])
            committed = _Commitment(result.trajectory, mission.commit_horizon, result.nodes, tag)
        # on failure the previous commitment stands: it ends in its own checked stop
        cur = _extend(cur, mission.replan_period)
        piece = cur.slice(0.0, mission.replan_period)
        piece_ok = is_trajectory_free(audit_map, piece, dt).free
        collision_free &= piece_ok
        log.pieces.append(piece)
        # waypoints are passed (or the goal reached) as soon as an executed piece comes within tolerance
        times, pts = piece.sample_segments(dt)
        while not reached:
            near = np.flatnonzero(np.linalg.norm(pts - np.asarray(mission.waypoints[wp]), axis=1) <= mission.goal_tolerance)
            if near.size == 0:
                break
            if wp == len(mission.waypoints) - 1:
                reached, termination, total_time = True, "goal", t_c + float(times[near[0]])
            else:
                wp += 1
                path = None
                pts, times = pts[near[0]:], times[near[0]:]

        length += _path_length(piece.slice(0.0, total_time - t_c) if reached else piece)

        used_ms = 1000.0 * result.budget_used * mission.budget if virtual else 1000.0 * result.stats.wall_time
        log.cycles.append({
            "cycle": cycle,
            "t": t_c,
            "planner": planner.kind,
            "index": index if planner.kind != "baseline" else -1,
            "dispersion": result.dispersion,
            "outcome": result.outcome.value,
            "cost": result.cost,
            "nodes_expanded": result.stats.nodes_expanded,
            "collision_checks": result.stats.collision_checks,
            "wall_time_ms": used_ms,
            "infeasible_flag": bool(flag),
            "distance_to_goal": dist_final,
            "speed": float(np.linalg.norm(now.velocity)),
            "position": now.position.tolist(),
            "local_goal": list(goal.position),
            "reused": bool(seeds),
            "piece_collision_free": bool(piece_ok),
        })
        cur = cur.slice(mission.replan_period, cur.total_duration)
        if committed is not None:
            committed.offset -= mission.replan_period
        cycle += 1
        if flags >= 3:
            termination = "infeasible"
            break

    log.summary = {
        "planner": planner.kind,
        "reached_goal": reached,
        "termination": termination,
        "total_time": total_time,
        "path_length": length,
        "collision_free": bool(collision_free),
        "num_cycles": cycle,
    }
    return log


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

CYCLE_COLUMNS = [
    "cycle", "t", "planner", "index", "dispersion", "outcome", "cost", "nodes_expanded", "collision_checks",
    "wall_time_ms", "infeasible_flag", "distance_to_goal", "speed", "x", "y", "z", "goal_x", "goal_y", "goal_z",
]
SUMMARY_COLUMNS = ["planner", "reached_goal", "termination", "total_time", "path_length", "collision_free", "num_cycles"]
_INT = {"cycle", "index", "nodes_expanded", "collision_checks", "num_cycles"}
_BOOL = {"infeasible_flag", "reached_goal", "collision_free"}
_STR = {"planner", "outcome", "termination"}


def _flatten(rec: dict) -> dict:
    row = {k: v for k, v in rec.items() if k in CYCLE_COLUMNS}
    for name, key in (("", "position"), ("goal_", "local_goal")):
        vals = list(rec.get(key, []))
        for i, axis in enumerate("xyz"):
            row[name + axis] = vals[i] if i < len(vals) else ""
    return row


def export_metrics(log: SimulationLog, directory, stem: str = "mission") -> tuple[Path, Path]:
    """Write ``<stem>_cycles.csv`` and ``<stem>_summary.csv``.

    Units: times in s (``wall_time_ms`` in ms), distances in m, speeds in m/s.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    cyc = out / f"{stem}_cycles.csv"
    summ = out / f"{stem}_summary.csv"
    with cyc.open("w", newline="") as fh:
        w = csv.DictWriter(fh, CYCLE_COLUMNS)
        w.writeheader()
        for rec in log.cycles:
            w.writerow(_flatten(rec))
    with summ.open("w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS)
        w.writeheader()
        if log.summary:
            w.writerow({k: log.summary.get(k, "") for k in SUMMARY_COLUMNS})
    return cyc, summ


def _parse(key: str, val: str):
    if val == "":
        return None
    if key in _STR:
        return val
    if key in _BOOL:
        return val == "True"
    if key in _INT:
        return int(val)
    return float(val)


def read_metrics(path) -> list:
    with Path(path).open(newline="") as fh:
        return [{k: _parse(k, v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# Random-forest benchmark: every graph of a family on every map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSetup:
    """One planning query per (map, graph); maps are random forests."""

    extent: tuple = (14.0, 14.0)
    resolution: float = 0.1
    tree_count: int | None = 12
    mean_corridor: float | None = None
    radius_range: tuple = (0.15, 0.3)
    start: tuple = (2.0, 7.0)
    goal: tuple = (12.0, 7.0)
    r_goal: float = 1.0
    clearance: float = 1.0  # trees are kept this far from start and goal
    robot_radius: float = 0.2
    budget: float = 2.0
    max_expansions: int | None = None
    k: int = 8

    def __post_init__(self):
        if (self.tree_count is None) == (self.mean_corridor is None):
            raise ValueError("give exactly one of tree_count or mean_corridor")


SWEEP_COLUMNS = [
    "map_seed", "graph", "dispersion", "outcome", "cost", "nodes_expanded", "collision_checks", "wall_time_ms",
    "tree_count", "mean_corridor",
]
SWEEP_SUMMARY_COLUMNS = ["graph", "dispersion", "runs", "successes", "mean_cost", "mean_collision_checks",
                         "mean_nodes_expanded"]


def sweep_map(setup: SweepSetup, seed: int) -> OccupancyGrid:
    if setup.tree_count is not None:
        spec = ForestSpec(tuple(setup.extent), tree_count=setup.tree_count, radius_range=tuple(setup.radius_range),
                          seed=seed, resolution=setup.resolution)
    else:
        spec = forest_for_corridor(setup.mean_corridor, tuple(setup.extent), tuple(setup.radius_range), seed=seed,
                                   resolution=setup.resolution)
    return make_forest(spec, keep_clear=(setup.start, setup.goal), clearance=setup.clearance + setup.robot_radius)


def _sweep_cell(args) -> list:
    family, setup, seed = args
    world = sweep_map(setup, seed)
    grid = inflate(world, setup.robot_radius)
    start = FullState.rest(setup.start)
    goal = GoalSpec(tuple(setup.goal), setup.r_goal)
    budget = math.inf if setup.max_expansions is not None else setup.budget
    rows = []
    for gi, graph in enumerate(family.graphs):
        try:
            result = plan(graph, grid, start, goal, budget, max_expansions=setup.max_expansions, k=setup.k)
        except InvalidStartError:
            result = _failed(Outcome.EXHAUSTED)
        result.dispersion = graph.dispersion
        row = {"map_seed": seed, "graph": gi, **result.record()}
        row["tree_count"] = world.meta["tree_count"]
        row["mean_corridor"] = world.meta["mean_corridor"]
        rows.append(row)
    return rows


def forest_sweep(family: GraphFamily, setup: SweepSetup, map_count: int, map_seed: int = 0,
                 workers: int = 1) -> list:
    """Records ordered by (map seed, graph index) whatever the worker count.

    Map ``i`` uses seed ``map_seed + i``.
    """
    jobs = [(family, setup, map_seed + i) for i in range(map_count)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_sweep_cell, jobs))
    else:
        chunks = [_sweep_cell(j) for j in jobs]
    return [row for chunk in chunks for row in chunk]


def sweep_summary(records: list) -> list:
    """Per-graph means over the successful runs."""
    out = []
    for gi in sorted({r["graph"] for r in records}):
        rows = [r for r in records if r["graph"] == gi]
        ok = [r for r in rows if r["outcome"] == Outcome.SUCCESS.value]
        mean = (lambda key: float(np.mean([r[key] for r in ok])) if ok else math.nan)
        out.append({
            "graph": gi,
            "dispersion": rows[0]["dispersion"],
            "runs": len(rows),
            "successes": len(ok),
            "mean_cost": mean("cost"),
            "mean_collision_checks": mean("collision_checks"),
            "mean_nodes_expanded": mean("nodes_expanded"),
        })
    return out


def write_sweep(records: list, directory, stem: str = "sweep") -> tuple[Path, Path]:
    """``<stem>_runs.csv`` (one row per plan) and ``<stem>_summary.csv`` (per graph)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    runs, summ = out / f"{stem}_runs.csv", out / f"{stem}_summary.csv"
    for path, cols, rows in ((runs, SWEEP_COLUMNS, records), (summ, SWEEP_SUMMARY_COLUMNS, sweep_summary(records))):
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, cols)
            w.writeheader()
            for r in rows:
                w.writerow({k: r[k] for k in cols})
    return runs, summ


def read_sweep(path) -> list:
    ints = {"map_seed", "graph", "nodes_expanded", "collision_checks", "tree_count", "runs", "successes"}
    with Path(path).open(newline="") as fh:
        return [{k: (v if k == "outcome" else int(v) if k in ints else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]
