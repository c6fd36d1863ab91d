import csv
import json

import pytest
import yaml

from adaptive_dispersion.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, main
from adaptive_dispersion.graph_gen import load_family, load_graph, save_family
from adaptive_dispersion.world import load_map, save_map

GEN = {"vertex_counts": [4, 8], "candidate_count": 100, "seed": 3}


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.fixture(scope="module")
def saved_family(tmp_path_factory, small_family):
    directory = tmp_path_factory.mktemp("fam")
    return save_family(small_family, directory)


@pytest.fixture(scope="module")
def free_map(tmp_path_factory):
    path = tmp_path_factory.mktemp("map") / "free.json"
    assert main(["make-map", "--set", "kind=empty", "--set", "extent=[24, 12]", "--set", f"out={path}"]) == EXIT_OK
    return path


class TestGenGraph:
    def test_writes_family_and_reruns_identically(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cfg = write_cfg(tmp_path / "gen.yaml", GEN)
        assert main(["gen-graph", "--config", cfg, "--set", f"out_dir={a}"]) == EXIT_OK
        assert main(["gen-graph", "--config", cfg, "--set", f"out_dir={b}"]) == EXIT_OK
        fam = load_family(a / "family.json")
        assert [g.num_vertices for g in fam.graphs] == [4, 8]
        d = fam.dispersions
        assert all(y < x for x, y in zip(d, d[1:]))
        for name in ("graph_00.json", "graph_01.json", "family.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        report = json.loads((a / "graph_report.json").read_text())
        assert report["vertex_counts"] == [4, 8]
        assert load_graph(a / "graph_01.json").num_vertices == 8

    def test_unreachable_ladder_exits_3(self, tmp_path):
        cfg = {"ladder": [5000.0, 1.0], "candidate_count": 60, "max_vertices": 6, "out_dir": str(tmp_path)}
        assert main(["gen-graph", "--config", write_cfg(tmp_path / "g.yaml", cfg)]) == EXIT_INFEASIBLE

    def test_increasing_ladder_exits_2(self, tmp_path):
        assert main(["gen-graph", "--set", "ladder=[1.0, 2.0]", "--set", f"out_dir={tmp_path}"]) == EXIT_INPUT


class TestConfigErrors:
    def test_unknown_key(self, tmp_path):
        assert main(["gen-graph", "--config", write_cfg(tmp_path / "c.yaml", {"bogus": 1})]) == EXIT_INPUT

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("vertex_counts: [4, 8\n")
        assert main(["gen-graph", "--config", str(path)]) == EXIT_INPUT

    def test_missing_config_file(self, tmp_path):
        assert main(["gen-graph", "--config", str(tmp_path / "nope.yaml")]) == EXIT_INPUT

    def test_wrong_type(self):
        assert main(["gen-graph", "--set", "candidate_count=many"]) == EXIT_INPUT

    def test_missing_family(self, tmp_path, free_map):
        args = ["plan", "--set", f"family={tmp_path / 'none.json'}", "--set", f"map={free_map}"]
        assert main(args) == EXIT_INPUT

    def test_missing_graph(self, tmp_path, free_map):
        args = ["plan", "--set", f"graph={tmp_path / 'none.json'}", "--set", f"map={free_map}"]
        assert main(args) == EXIT_INPUT

    def test_missing_map(self, tmp_path, saved_family):
        args = ["plan", "--set", f"family={saved_family}", "--set", f"map={tmp_path / 'none.json'}"]
        assert main(args) == EXIT_INPUT

    def test_index_out_of_range(self, saved_family, free_map):
        args = ["plan", "--set", f"family={saved_family}", "--set", f"map={free_map}", "--set", "index=9"]
        assert main(args) == EXIT_INPUT


class TestMakeMap:
    def test_forest(self, tmp_path):
        out = tmp_path / "f.json"
        args = ["make-map", "--set", "extent=[10, 10]", "--set", "tree_count=8", "--set", f"out={out}"]
        assert main(args) == EXIT_OK
        grid = load_map(out)
        assert grid.dims == (100, 100)
        assert grid.meta["tree_count"] == 8

    def test_corridor(self, tmp_path):
        out = tmp_path / "c.json"
        args = ["make-map", "--set", "kind=corridor", "--set", "extent=[6, 4]", "--set", "corridor_width=0.5",
                "--set", f"out={out}"]
        assert main(args) == EXIT_OK
        assert load_map(out).occupancy.any()

    def test_regions(self, tmp_path):
        cfg = {"extent": [20, 10], "out": str(tmp_path / "r.json"),
               "regions": [{"origin": [0, 0], "extent": [10, 10], "seed": 1, "tree_count": 5},
                           {"origin": [10, 0], "extent": [10, 10], "seed": 2, "tree_count": 20}]}
        assert main(["make-map", "--config", write_cfg(tmp_path / "m.yaml", cfg)]) == EXIT_OK
        grid = load_map(tmp_path / "r.json")
        assert [r["tree_count"] for r in grid.meta["regions"]] == [5, 20]

    def test_bad_region_exits_2(self, tmp_path):
        cfg = {"out": str(tmp_path / "r.json"), "regions": [{"origin": [0, 0], "extent": [5, 5]}]}
        assert main(["make-map", "--config", write_cfg(tmp_path / "m.yaml", cfg)]) == EXIT_INPUT

    def test_impossible_packing_exits_3(self, tmp_path):
        args = ["make-map", "--set", "extent=[2, 2]", "--set", "tree_count=200", "--set", "min_spacing=1.0",
                "--set", f"out={tmp_path / 'x.json'}"]
        assert main(args) == EXIT_INFEASIBLE


class TestPlan:
    def test_free_map_success(self, tmp_path, saved_family, free_map):
        out = tmp_path / "plan.json"
        args = ["plan", "--set", f"family={saved_family}", "--set", f"map={free_map}", "--set", "start=[2, 6]",
                "--set", "goal=[10, 6]", "--set", "max_expansions=20000", "--set", f"out={out}"]
        assert main(args) == EXIT_OK
        data = json.loads(out.read_text())
        assert data["result"]["outcome"] == "Success"
        assert data["trajectory"] is not None

    def test_enclosed_goal_exits_3(self, tmp_path, saved_family):
        grid_path = tmp_path / "box.json"
        assert main(["make-map", "--set", "kind=empty", "--set", "extent=[10, 10]", "--set", f"out={grid_path}"]) == 0
        grid = load_map(grid_path)
        grid.occupancy[60:81, 60] = grid.occupancy[60:81, 80] = True
        grid.occupancy[60, 60:81] = grid.occupancy[80, 60:81] = True
        save_map(grid, grid_path)
        args = ["plan", "--set", f"family={saved_family}", "--set", f"map={grid_path}", "--set", "start=[2, 2]",
                "--set", "goal=[7, 7]", "--set", "r_goal=0.5", "--set", "max_expansions=200000",
                "--set", "index=2", "--set", f"out={tmp_path / 'p.json'}"]
        assert main(args) == EXIT_INFEASIBLE
        assert json.loads((tmp_path / "p.json").read_text())["result"]["outcome"] == "Exhausted"

    def test_start_in_obstacle_exits_2(self, tmp_path, saved_family):
        grid_path = tmp_path / "full.json"
        assert main(["make-map", "--set", "kind=empty", "--set", "extent=[10, 10]", "--set", f"out={grid_path}"]) == 0
        grid = load_map(grid_path)
        grid.occupancy[:] = True
        save_map(grid, grid_path)
        args = ["plan", "--set", f"family={saved_family}", "--set", f"map={grid_path}",
                "--set", f"out={tmp_path / 'p.json'}"]
        assert main(args) == EXIT_INPUT


class TestSweepAndReport:
    def test_sweep_then_report(self, tmp_path, saved_family):
        out = tmp_path / "sweep"
        cfg = {"family": str(saved_family), "map_count": 2, "tree_count": 4, "max_expansions": 3000,
               "out_dir": str(out)}
        assert main(["sweep", "--config", write_cfg(tmp_path / "s.yaml", cfg)]) == EXIT_OK
        csvs = sorted(p.name for p in out.glob("*.csv"))
        assert len(csvs) == 2
        summary = next(p for p in out.glob("*.csv") if "summary" in p.name)
        with summary.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        rep = tmp_path / "rep"
        args = ["report", "--set", f"sweep=[{summary}]", "--set", f"out_dir={rep}"]
        assert main(args) == EXIT_OK
        assert (rep / "sweep.png").stat().st_size > 0

    def test_report_needs_input(self, tmp_path):
        assert main(["report", "--set", f"out_dir={tmp_path}"]) == EXIT_INPUT


class TestMissions:
    def test_compare_free_map(self, tmp_path, saved_family, free_map):
        out = tmp_path / "cmp"
        cfg = {"map": str(free_map), "start": [2, 6], "waypoints": [[12, 6]], "max_expansions": 120,
               "time_cap": 30, "out_dir": str(out),
               "planners": [{"kind": "adaptive", "family": str(saved_family)}, {"kind": "baseline"}]}
        assert main(["compare", "--config", write_cfg(tmp_path / "c.yaml", cfg)]) == EXIT_OK
        with (out / "compare.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert [r["label"] for r in rows] == ["0_adaptive", "1_baseline"]
        assert all(r["reached_goal"] == "True" for r in rows)
        cycles = sorted(out.glob("*_cycles.csv"))
        assert len(cycles) == 2
        rep = tmp_path / "rep"
        assert main(["report", "--set", f"missions={[str(p) for p in cycles]}", "--set", f"out_dir={rep}"]) == 0
        assert (rep / "distance.png").exists()
        assert (rep / "0_adaptive_cycles.png").exists()

    def test_compare_needs_two(self, tmp_path, saved_family, free_map):
        cfg = {"map": str(free_map), "planners": [{"kind": "baseline"}], "out_dir": str(tmp_path)}
        assert main(["compare", "--config", write_cfg(tmp_path / "c.yaml", cfg)]) == EXIT_INPUT

    def test_simulate_sealed_goal_exits_3(self, tmp_path, saved_family):
        grid_path = tmp_path / "room.json"
        assert main(["make-map", "--set", "kind=empty", "--set", "extent=[16, 12]", "--set", f"out={grid_path}"]) == 0
        grid = load_map(grid_path)
        grid.occupancy[100:141, 40] = grid.occupancy[100:141, 80] = True
        grid.occupancy[100, 40:81] = grid.occupancy[140, 40:81] = True
        save_map(grid, grid_path)
        cfg = {"map": str(grid_path), "start": [2, 6], "waypoints": [[12, 6]], "max_expansions": 120,
               "time_cap": 20, "out_dir": str(tmp_path / "sim"),
               "planner": {"kind": "adaptive", "family": str(saved_family)}}
        assert main(["simulate", "--config", write_cfg(tmp_path / "s.yaml", cfg)]) == EXIT_INFEASIBLE

    def test_family_limits_mismatch_exits_2(self, tmp_path, saved_family, free_map):
        cfg = {"map": str(free_map), "v_max": 5.0, "out_dir": str(tmp_path),
               "planner": {"kind": "adaptive", "family": str(saved_family)}}
        assert main(["simulate", "--config", write_cfg(tmp_path / "s.yaml", cfg)]) == EXIT_INPUT
