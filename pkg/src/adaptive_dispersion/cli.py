"""Command-line entry point: ``adaptive-dispersion <subcommand> --config FILE``.

Every subcommand reads a YAML/JSON config (all keys optional, unknown keys
rejected) and accepts ``--set key=value`` overrides.  Relative paths are
taken from the current directory.

Exit codes: 0 ok, 2 bad config or input, 3 the computation declared the
problem infeasible (unreachable dispersion, failed plan, infeasible mission).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .adaptive import AdaptiveConfig, graph_for_index
from .baseline import BaselineConfig
from .config import (
    ConfigError,
    GenGraphConfig,
    MapConfig,
    MissionConfig,
    PlanConfig,
    PlannerConfig,
    SweepConfig,
)
from .graph_gen import (
    DispersionMode,
    DispersionUnreachableError,
    GraphFormatError,
    StateBox,
    build_family,
    family_from_counts,
    load_family,
    load_graph,
    save_family,
)
from .motion_primitives import DynamicsLimits, FullState, InvalidArgumentError
from .search import GoalSpec, InvalidStartError, plan
from .sim import (
    SUMMARY_COLUMNS,
    Mission,
    PlannerSpec,
    SweepSetup,
    export_metrics,
    forest_sweep,
    read_metrics,
    read_sweep,
    run_mission,
    sweep_summary,
    write_sweep,
)
from .world import (
    CorridorSpec,
    ForestSpec,
    MapFormatError,
    OccupancyGrid,
    PlacementError,
    forest_for_corridor,
    inflate,
    load_map,
    make_corridor,
    make_forest,
    save_map,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3


class Infeasible(RuntimeError):
    """The inputs were fine but no answer exists (exit code 3)."""


@dataclass
class RegionConfig:
    """One forest patch of a composite map."""

    origin: list[float]
    extent: list[float]
    seed: int = 0
    tree_count: int | None = None
    density: float | None = None
    mean_corridor: float | None = None
    radius_range: list[float] | None = None

    def __post_init__(self):
        if sum(x is not None for x in (self.tree_count, self.density, self.mean_corridor)) != 1:
            raise ValueError("region needs exactly one of tree_count, density, mean_corridor")


@dataclass
class ReportConfig:
    sweep: list[str] = field(default_factory=list)  # sweep summary CSVs
    missions: list[str] = field(default_factory=list)  # per-cycle mission CSVs
    out_dir: str = "report"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _need(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _family(path: str):
    try:
        return load_family(_need(path, "graph family"))
    except (GraphFormatError, KeyError) as err:
        raise ConfigError(f"{path}: {err}") from err


def _map(path: str) -> OccupancyGrid:
    try:
        return load_map(_need(path, "map"))
    except MapFormatError as err:
        raise ConfigError(str(err)) from err


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_graph(cfg: GenGraphConfig) -> dict:
    box = StateBox((cfg.position_half_extent,) * cfg.dim, cfg.velocity_bound, cfg.acceleration_bound)
    limits = DynamicsLimits(cfg.v_max, cfg.a_max, cfg.rho)
    mode = DispersionMode(cfg.mode)
    try:
        if cfg.ladder is not None:
            family = build_family(box, limits, cfg.ladder, cfg.candidate_count, cfg.seed, mode=mode,
                                  beta=cfg.beta, max_vertices=cfg.max_vertices, tile=cfg.tile)
        else:
            family = family_from_counts(box, limits, cfg.vertex_counts, cfg.candidate_count, cfg.seed, mode=mode,
                                        beta=cfg.beta, tile=cfg.tile)
    except DispersionUnreachableError as err:
        raise Infeasible(str(err)) from err
    except InvalidArgumentError as err:
        raise ConfigError(str(err)) from err
    out = Path(cfg.out_dir)
    index = save_family(family, out, cfg.stem)
    report = {
        "family": index.name,
        "dispersions": family.dispersions,
        "ladder": family.ladder,
        "vertex_counts": [g.num_vertices for g in family.graphs],
        "edge_counts": [g.num_edges for g in family.graphs],
        "dispersion_trace": list(family.graphs[-1].trace),
        "bvp_solves": family.solves,
        "config": asdict(cfg),
    }
    _write_json(out / f"{cfg.stem}_report.json", report)
    for i, g in enumerate(family.graphs):
        print(f"graph {i}: {g.num_vertices} vertices, {g.num_edges} edges, dispersion {g.dispersion:.6g}")
    print(f"wrote {index}")
    return report


def _region_spec(raw: dict, resolution: float, default_radii) -> ForestSpec:
    reg = cfgmod.build(RegionConfig, raw, where="region: ")
    radii = tuple(reg.radius_range or default_radii)
    if reg.mean_corridor is not None:
        return forest_for_corridor(reg.mean_corridor, tuple(reg.extent), radii, seed=reg.seed,
                                   origin=tuple(reg.origin), resolution=resolution)
    return ForestSpec(tuple(reg.extent), reg.tree_count, reg.density, radii, 0.0, reg.seed, tuple(reg.origin),
                      resolution)


def cmd_make_map(cfg: MapConfig) -> OccupancyGrid:
    try:
        if cfg.kind == "empty":
            grid = OccupancyGrid.empty(tuple(cfg.origin), tuple(cfg.extent), cfg.resolution)
        elif cfg.kind == "corridor":
            spec = CorridorSpec(cfg.corridor_width, cfg.wall_thickness, cfg.orientation, cfg.corridor_length)
            grid = make_corridor(spec, cfg.extent[0], cfg.resolution, tuple(cfg.origin))
        elif cfg.regions is not None:
            grid = OccupancyGrid.empty(tuple(cfg.origin), tuple(cfg.extent), cfg.resolution)
            metas = []
            for raw in cfg.regions:
                grid = make_forest(_region_spec(raw, cfg.resolution, cfg.radius_range), grid)
                metas.append({"tree_count": grid.meta["tree_count"], "mean_corridor": grid.meta["mean_corridor"]})
            grid.meta = {"regions": metas}
        else:
            radii = tuple(cfg.radius_range)
            if cfg.mean_corridor is not None:
                spec = forest_for_corridor(cfg.mean_corridor, tuple(cfg.extent), radii, seed=cfg.seed,
                                           origin=tuple(cfg.origin), resolution=cfg.resolution,
                                           min_spacing=cfg.min_spacing)
            else:
                spec = ForestSpec(tuple(cfg.extent), cfg.tree_count, cfg.density, radii, cfg.min_spacing, cfg.seed,
                                  tuple(cfg.origin), cfg.resolution)
            grid = make_forest(spec)
    except PlacementError as err:
        raise Infeasible(str(err)) from err
    except ValueError as err:
        raise ConfigError(str(err)) from err
    if cfg.inflate > 0:
        meta = grid.meta
        grid = inflate(grid, cfg.inflate)
        grid.meta = meta
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_map(grid, out)
    print(f"wrote {out} ({grid.dims[0]}x{grid.dims[1]} cells, {int(grid.occupancy.sum())} occupied)")
    return grid


def cmd_plan(cfg: PlanConfig) -> dict:
    if cfg.graph is not None:
        try:
            graph = load_graph(_need(cfg.graph, "graph"))
        except GraphFormatError as err:
            raise ConfigError(str(err)) from err
    else:
        family = _family(cfg.family)
        if not 0 <= cfg.index < len(family):
            raise ConfigError(f"index {cfg.index} outside a family of {len(family)}")
        graph = graph_for_index(family, cfg.index)
    grid = _map(cfg.map)
    if cfg.robot_radius > 0:
        grid = inflate(grid, cfg.robot_radius)
    speed = cfg.terminal_max_speed if cfg.terminal_max_speed is not None else math.inf
    goal = GoalSpec(tuple(cfg.goal), cfg.r_goal, speed)
    budget = math.inf if cfg.max_expansions is not None else cfg.budget
    try:
        result = plan(graph, grid, FullState.rest(cfg.start), goal, budget, max_expansions=cfg.max_expansions,
                      k=cfg.k, anchors=cfg.anchors)
    except InvalidStartError as err:
        raise ConfigError(f"bad start: {err}") from err
    result.dispersion = graph.dispersion
    out = {"result": result.record(), "trajectory": result.trajectory.to_dict() if result.success else None,
           "config": asdict(cfg)}
    _write_json(Path(cfg.out), out)
    rec = result.record()
    print(f"{rec['outcome']}: cost {rec['cost']:.6g}, {rec['nodes_expanded']} expansions, "
          f"{rec['collision_checks']} collision checks")
    if not result.success:
        raise Infeasible(f"planning ended with {rec['outcome']}")
    return out


def cmd_sweep(cfg: SweepConfig) -> list:
    family = _family(cfg.family)
    setup = SweepSetup(tuple(cfg.extent), cfg.resolution, cfg.tree_count, cfg.mean_corridor, tuple(cfg.radius_range),
                       tuple(cfg.start), tuple(cfg.goal), cfg.r_goal, cfg.clearance, cfg.robot_radius, cfg.budget,
                       cfg.max_expansions, cfg.k)
    records = forest_sweep(family, setup, cfg.map_count, cfg.map_seed, cfg.workers)
    runs, summ = write_sweep(records, cfg.out_dir)
    for row in sweep_summary(records):
        print(f"graph {row['graph']}: dispersion {row['dispersion']:.6g}, {row['successes']}/{row['runs']} ok, "
              f"mean cost {row['mean_cost']:.6g}, mean checks {row['mean_collision_checks']:.6g}")
    print(f"wrote {runs} and {summ}")
    return records


def _mission(cfg: MissionConfig, families: dict) -> Mission:
    rho = cfg.rho
    if rho is None:
        rho = next(iter(families.values())).limits.rho if families else 1000.0
    limits = DynamicsLimits(cfg.v_max, cfg.a_max, rho)
    for path, fam in families.items():
        if fam.limits != limits:
            raise ConfigError(f"{path}: family limits {fam.limits} differ from the mission's {limits}")
    grid = _map(cfg.map)
    try:
        return Mission(tuple(cfg.start), [tuple(w) for w in cfg.waypoints], grid, limits, window=cfg.window,
                       window_margin=cfg.window_margin, replan_period=cfg.replan_period, budget=cfg.budget,
                       max_expansions=cfg.max_expansions, commit_horizon=cfg.commit_horizon,
                       robot_radius=cfg.robot_radius, safety_margin=cfg.safety_margin,
                       global_every=cfg.global_every, global_resolution=cfg.global_resolution,
                       goal_tolerance=cfg.goal_tolerance,
                       final_speed=math.inf if cfg.final_speed is None else cfg.final_speed,
                       local_r_goal=cfg.local_r_goal, time_cap=cfg.time_cap)
    except ValueError as err:
        raise ConfigError(f"mission: {err}") from err


def _planner(pc: PlannerConfig, families: dict) -> PlannerSpec:
    fam = families.get(pc.family) if pc.kind != "baseline" else None
    try:
        return PlannerSpec(
            pc.kind, fam, index=pc.index,
            adaptive=AdaptiveConfig(margin_fraction=pc.margin_fraction, consecutive_successes=pc.consecutive_successes,
                                    window=pc.window),
            baseline=BaselineConfig(n=pc.n, tau=pc.tau, u_max=pc.u_max, depth_limit=pc.depth_limit),
            k=pc.k, anchors=pc.anchors, reuse=pc.reuse,
        )
    except ValueError as err:
        raise ConfigError(f"planner: {err}") from err


def _label(pc: PlannerConfig, i: int) -> str:
    return f"{i}_{pc.kind}" + (f"{pc.index}" if pc.kind == "fixed" else "")


def _run_all(cfg: MissionConfig, planners: list) -> list:
    families = {pc.family: _family(pc.family) for pc in planners if pc.kind != "baseline"}
    mission = _mission(cfg, families)
    out = Path(cfg.out_dir)
    logs = []
    for i, pc in enumerate(planners):
        log = run_mission(mission, _planner(pc, families), seed=cfg.seed)
        label = _label(pc, i)
        export_metrics(log, out, label)
        (out / f"{label}_log.json").write_text(log.to_json())
        s = log.summary
        print(f"{label}: reached={s['reached_goal']} termination={s['termination']} "
              f"total_time={s['total_time']:.3f} path_length={s['path_length']:.3f}")
        logs.append((label, log))
    return logs


def cmd_simulate(cfg: MissionConfig):
    planners = cfg.planner_configs()
    if len(planners) != 1:
        raise ConfigError("simulate runs exactly one planner; use compare for several")
    (label, log), = _run_all(cfg, planners)
    if log.summary["termination"] in ("infeasible", "global_no_path"):
        raise Infeasible(f"mission ended: {log.summary['termination']}")
    return log


def cmd_compare(cfg: MissionConfig):
    if cfg.planners is None and cfg.planner is None:
        raise ConfigError("compare needs a planners list")
    planners = cfg.planner_configs()
    if len(planners) < 2:
        raise ConfigError("compare needs at least two planners")
    logs = _run_all(cfg, planners)
    missions = {json.dumps(log.header["mission"], sort_keys=True) for _, log in logs}
    assert len(missions) == 1, "planners were run on different missions"
    path = Path(cfg.out_dir) / "compare.csv"
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["label", *SUMMARY_COLUMNS])
        w.writeheader()
        for label, log in logs:
            w.writerow({"label": label, **{k: log.summary.get(k, "") for k in SUMMARY_COLUMNS}})
    print(f"wrote {path}")
    return logs


def cmd_report(cfg: ReportConfig) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if not cfg.sweep and not cfg.missions:
        raise ConfigError("report needs at least one sweep or mission CSV")
    if cfg.sweep:
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
        for path in cfg.sweep:
            rows = read_sweep(_need(path, "sweep CSV"))
            if rows and "map_seed" in rows[0]:
                rows = sweep_summary(rows)
            d = [r["dispersion"] for r in rows]
            ax1.plot(d, [r["mean_cost"] for r in rows], "o-", label=Path(path).stem)
            ax2.plot(d, [r["mean_collision_checks"] for r in rows], "o-", label=Path(path).stem)
        ax1.set(xlabel="dispersion", ylabel="mean plan cost")
        ax2.set(xlabel="dispersion", ylabel="mean collision checks")
        ax1.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / "sweep.png", dpi=120)
        plt.close(fig)
        written.append(out / "sweep.png")
    if cfg.missions:
        fig_d, ax_d = plt.subplots(figsize=(6, 3.5))
        for path in cfg.missions:
            rows = read_metrics(_need(path, "mission CSV"))
            stem = Path(path).stem.removesuffix("_cycles")
            t = np.array([r["t"] for r in rows])
            ax_d.plot(t, [r["distance_to_goal"] for r in rows], label=stem)
            if rows and rows[0]["planner"] != "baseline":
                fig, ax = plt.subplots(figsize=(6, 3.5))
                ax.step([r["cycle"] for r in rows], [r["dispersion"] for r in rows], where="post", color="C0")
                ax.set(xlabel="cycle", ylabel="dispersion")
                tw = ax.twinx()
                tw.plot([r["cycle"] for r in rows], [r["wall_time_ms"] for r in rows], ".", color="C1")
                tw.set_ylabel("plan time (ms)")
                fig.tight_layout()
                name = out / f"{stem}_cycles.png"
                fig.savefig(name, dpi=120)
                plt.close(fig)
                written.append(name)
        ax_d.set(xlabel="time (s)", ylabel="distance to goal (m)")
        ax_d.legend(fontsize=7)
        fig_d.tight_layout()
        fig_d.savefig(out / "distance.png", dpi=120)
        plt.close(fig_d)
        written.append(out / "distance.png")
    for p in written:
        print(f"wrote {p}")
    return written


COMMANDS = {
    "gen-graph": (GenGraphConfig, cmd_gen_graph, "build a family of minimum-dispersion graphs"),
    "make-map": (MapConfig, cmd_make_map, "generate a forest, corridor or empty occupancy map"),
    "plan": (PlanConfig, cmd_plan, "plan once with one graph"),
    "sweep": (SweepConfig, cmd_sweep, "plan with every graph of a family on random forests"),
    "simulate": (MissionConfig, cmd_simulate, "run one receding-horizon mission"),
    "compare": (MissionConfig, cmd_compare, "run several planners on the same mission"),
    "report": (ReportConfig, cmd_report, "plot sweep and mission CSVs"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-dispersion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML or JSON file; every key is optional")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable); the value is parsed as YAML")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cls, fn, _ = COMMANDS[args.command]
    try:
        overrides = [cfgmod.parse_override(o) for o in args.overrides]
        if args.config:
            cfg = cfgmod.load(cls, args.config, overrides)
        else:
            cfg = cfgmod.build(cls, {}, overrides)
        fn(cfg)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except Infeasible as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
