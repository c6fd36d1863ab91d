"""Typed run configurations loaded from YAML/JSON with strict key checking."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Bad configuration file or value; maps to CLI exit code 2."""


def load_mapping(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as err:
        raise ConfigError(f"{path}: cannot parse ({err})") from err
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` with the value parsed as YAML (so numbers and lists work)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        return key.strip(), yaml.safe_load(raw)
    except yaml.YAMLError as err:
        raise ConfigError(f"override {text!r}: {err}") from err


def _check_type(name, value, hint):
    origin = typing.get_origin(hint)
    if hint is typing.Any or value is None and _optional(hint):
        return value
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        for a in args:
            try:
                return _check_type(name, value, a)
            except ConfigError:
                continue
        raise ConfigError(f"{name}: {value!r} has the wrong type")
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        (inner,) = typing.get_args(hint) or (typing.Any,)
        return [_check_type(f"{name}[{i}]", v, inner) for i, v in enumerate(value)]
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if hint is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{name}: expected a mapping, got {value!r}")
        return value
    return value


def _optional(hint) -> bool:
    return type(None) in typing.get_args(hint)


def build(cls, data: dict, overrides=(), where: str = ""):
    """Instantiate dataclass ``cls`` from ``data``; unknown keys are errors."""
    data = dict(data)
    for key, value in overrides:
        data[key] = value
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or cls.__name__}: unknown keys {unknown}")
    kwargs = {k: _check_type(f"{where}{k}", v, hints[k]) for k, v in data.items()}
    try:
        obj = cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where or cls.__name__}: {err}") from err
    return obj


def load(cls, path, overrides=()):
    return build(cls, load_mapping(path), overrides, where=f"{Path(path).name}: ")


def _positive(name, value):
    if value is not None and not value > 0:
        raise ValueError(f"{name} must be > 0")


@dataclass
class GenGraphConfig:
    """Offline graph family generation.

    Give either ``ladder`` (strictly decreasing dispersions) or
    ``vertex_counts`` (increasing); with counts the rungs are read off the
    greedy trace.
    """

    dim: int = 2
    position_half_extent: float = 1.0  # m; the box tiles the plane with period 2x this
    velocity_bound: float = 3.0  # m/s
    acceleration_bound: float = 0.0  # m/s^2
    v_max: float = 7.0
    a_max: float = 4.0
    rho: float = 1000.0  # cost of one second of flight, in jerk-integral units
    ladder: list[float] | None = None
    vertex_counts: list[int] | None = None
    candidate_count: int = 800
    seed: int = 0
    mode: str = "two_sided"
    beta: float = 1.2
    max_vertices: int | None = None
    tile: bool = True  # add edges into the neighbouring copies of the box
    out_dir: str = "graphs"
    stem: str = "graph"

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if (self.ladder is None) == (self.vertex_counts is None):
            raise ValueError("give exactly one of ladder or vertex_counts")
        if self.mode not in ("two_sided", "round_trip"):
            raise ValueError("mode must be two_sided or round_trip")
        for n in ("position_half_extent", "velocity_bound", "v_max", "a_max", "rho", "beta"):
            _positive(n, getattr(self, n))
        if self.candidate_count < 1:
            raise ValueError("candidate_count must be >= 1")


@dataclass
class MapConfig:
    """``kind`` is forest, corridor or empty.  ``regions`` lists forest patches
    ({origin, extent, tree_count | mean_corridor, seed}) drawn onto one map."""

    kind: str = "forest"
    extent: list[float] = field(default_factory=lambda: [40.0, 40.0])
    origin: list[float] = field(default_factory=lambda: [0.0, 0.0])
    resolution: float = 0.1
    seed: int = 0
    tree_count: int | None = None
    density: float | None = None
    mean_corridor: float | None = None
    radius_range: list[float] = field(default_factory=lambda: [0.15, 0.3])
    min_spacing: float = 0.0
    regions: list[dict] | None = None
    corridor_width: float = 1.0
    wall_thickness: float | None = None
    orientation: str = "x"
    corridor_length: float | None = None
    inflate: float = 0.0
    out: str = "map.json"

    def __post_init__(self):
        if self.kind not in ("forest", "corridor", "empty"):
            raise ValueError("kind must be forest, corridor or empty")
        _positive("resolution", self.resolution)
        if self.kind == "forest" and self.regions is None and \
                sum(x is not None for x in (self.tree_count, self.density, self.mean_corridor)) != 1:
            raise ValueError("forest needs exactly one of tree_count, density, mean_corridor")


@dataclass
class PlanConfig:
    family: str | None = None
    graph: str | None = None
    index: int = 0  # 0 = finest graph of the family
    map: str = "map.json"
    start: list[float] = field(default_factory=lambda: [1.0, 1.0])
    goal: list[float] = field(default_factory=lambda: [5.0, 1.0])
    r_goal: float = 1.0
    terminal_max_speed: float | None = None
    budget: float = 1.0
    max_expansions: int | None = None
    robot_radius: float = 0.0
    k: int = 8
    anchors: int = 3
    out: str = "plan.json"

    def __post_init__(self):
        if (self.family is None) == (self.graph is None):
            raise ValueError("give exactly one of family or graph")
        _positive("r_goal", self.r_goal)


@dataclass
class SweepConfig:
    """Random forests x every graph of a family, one plan per cell."""

    family: str = "graphs/family.json"
    map_count: int = 20
    map_seed: int = 0
    extent: list[float] = field(default_factory=lambda: [14.0, 14.0])
    resolution: float = 0.1
    tree_count: int | None = 12
    mean_corridor: float | None = None
    radius_range: list[float] = field(default_factory=lambda: [0.15, 0.3])
    start: list[float] = field(default_factory=lambda: [2.0, 7.0])
    goal: list[float] = field(default_factory=lambda: [12.0, 7.0])
    r_goal: float = 1.0
    clearance: float = 1.0  # trees are kept this far from start and goal
    robot_radius: float = 0.2
    budget: float = 2.0
    max_expansions: int | None = None
    k: int = 8
    workers: int = 1
    out_dir: str = "sweep"

    def __post_init__(self):
        if self.map_count < 1:
            raise ValueError("map_count must be >= 1")
        if (self.tree_count is None) == (self.mean_corridor is None):
            raise ValueError("give exactly one of tree_count or mean_corridor")


@dataclass
class PlannerConfig:
    kind: str = "adaptive"
    family: str | None = None
    index: int = 0
    margin_fraction: float = 0.5
    consecutive_successes: int = 3
    window: int = 4
    k: int = 8
    anchors: int = 3
    reuse: bool = True
    n: int = 3
    tau: float = 1.0
    u_max: float | None = None
    depth_limit: int = 50

    def __post_init__(self):
        if self.kind not in ("adaptive", "fixed", "baseline"):
            raise ValueError("planner kind must be adaptive, fixed or baseline")
        if self.kind != "baseline" and self.family is None:
            raise ValueError(f"{self.kind} planner needs a family file")


@dataclass
class MissionConfig:
    map: str = "map.json"
    start: list[float] = field(default_factory=lambda: [1.0, 1.0])
    waypoints: list[list[float]] = field(default_factory=lambda: [[10.0, 1.0]])
    v_max: float = 7.0
    a_max: float = 4.0
    rho: float | None = None  # None takes it from the first family (1000 for baseline-only runs)
    window: float = 12.0
    window_margin: float = 2.0
    replan_period: float = 0.5
    budget: float = 0.15
    max_expansions: int | None = None
    commit_horizon: float = 0.3
    robot_radius: float = 0.2
    safety_margin: float | None = None
    global_every: int = 4
    global_resolution: float = 0.5
    goal_tolerance: float = 1.0
    final_speed: float | None = None  # None leaves the final approach speed free
    local_r_goal: float = 1.0
    time_cap: float = 120.0
    seed: int = 0
    planner: dict | None = None
    planners: list[dict] | None = None
    out_dir: str = "mission"

    def planner_configs(self) -> list:
        raw = self.planners if self.planners is not None else [self.planner or {}]
        return [build(PlannerConfig, p, where=f"planner {i}: ") for i, p in enumerate(raw)]
