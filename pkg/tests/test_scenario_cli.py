import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from teamplan import cli
from teamplan.model import build_task_graph
from teamplan.scenario import (GeneratorSpec, ScenarioError, generate_missions, load_scenario,
                               save_scenario, scenario_from_dict, scenario_to_dict)

ROOT = Path(__file__).resolve().parents[1]
SCALED = ROOT / "scenarios" / "scaled.json"


@pytest.fixture(scope="module")
def scaled():
    return load_scenario(SCALED)


# --- scenarios -----------------------------------------------------------------------

def test_round_trip(scaled, tmp_path):
    save_scenario(scaled, tmp_path / "s.json")
    again = load_scenario(tmp_path / "s.json")
    assert again == scaled and again.digest() == scaled.digest()


def test_bundled_scenarios_load():
    for path in sorted((ROOT / "scenarios").glob("*.json")):
        sc = load_scenario(path)
        assert sc.build_missions(0)


def test_overrides_change_one_field(scaled):
    sc = scaled.with_overrides(**{"sim.alpha": 0.1, "planner.horizon": 4})
    assert sc.sim.alpha == 0.1 and sc.planner.horizon == 4
    assert sc.local == scaled.local and sc.digest() != scaled.digest()


def test_unknown_override_rejected(scaled):
    with pytest.raises(ScenarioError):
        scaled.with_overrides(**{"sim.nope": 1})


def test_bad_values_rejected(scaled):
    d = scenario_to_dict(scaled)
    d["planner"]["horizon"] = 0
    with pytest.raises(ScenarioError):
        scenario_from_dict(d)
    d = scenario_to_dict(scaled)
    d["local"]["surprise"] = 1
    with pytest.raises(ScenarioError):
        scenario_from_dict(d)


def test_invalid_json_names_location(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{"name": ')
    with pytest.raises(ScenarioError, match="broken.json:1"):
        load_scenario(p)


def test_action_without_capable_type_rejected(scaled):
    d = scenario_to_dict(scaled)
    d["fleet"]["types"] = [t for t in d["fleet"]["types"] if "grasp" not in t["capabilities"]]
    d["missions"] = [{"id": 1, "release_time": 0.0, "tasks": [{
        "id": 1, "region": [0, 0, 4, 4], "duration": {"d0": 1.0, "n_sat": 2},
        "subtasks": [{"id": 0, "n": 1, "action": "grasp", "location": [1, 1]}]}]}]
    with pytest.raises(ScenarioError):
        scenario_from_dict(d)


def test_generated_missions_follow_template(scaled):
    missions = generate_missions(scaled.generator, scaled.workspace, seed=5)
    assert len(missions) == scaled.generator.count
    assert [m.release_time for m in missions] == sorted(m.release_time for m in missions)
    for m in missions:
        g = build_task_graph([m])
        assert len(g.nodes) == 4
        assert all(scaled.workspace.contains(s.location) for t in m.tasks for s in t.subtasks)
    assert generate_missions(scaled.generator, scaled.workspace, seed=5) == missions


def test_generator_counts(scaled):
    gen = GeneratorSpec(count=3, delivery=1, surveillance=0, capture=0, concurrent_deliveries=False)
    ms = generate_missions(gen, scaled.workspace, seed=0)
    assert len(ms) == 3 and all(len(m.tasks) == 1 for m in ms)


# --- argument parsing ------------------------------------------------------------------

@pytest.mark.parametrize("text,expected", [("0..3", [0, 1, 2, 3]), ("7", [7]), ("1,4,7", [1, 4, 7]),
                                           ("0..1,5", [0, 1, 5])])
def test_parse_seeds(text, expected):
    assert cli.parse_seeds(text) == expected


def test_parse_seeds_empty():
    with pytest.raises(ValueError):
        cli.parse_seeds("")


def test_parse_overrides():
    got = cli.parse_overrides(["--sim.alpha", "0.1", "--planner.horizon=4", "--name.x", "abc"])
    assert got == {"sim.alpha": 0.1, "planner.horizon": 4, "name.x": "abc"}
    with pytest.raises(ScenarioError):
        cli.parse_overrides(["--sim.alpha"])
    with pytest.raises(ScenarioError):
        cli.parse_overrides(["stray"])


# --- runs and sweeps ---------------------------------------------------------------------

def test_run_writes_outputs(tmp_path):
    rep = cli.run(SCALED, "ours", 0, tmp_path)
    for name in ("metrics.json", "timing.json", "trace.jsonl", "report.json"):
        assert (tmp_path / name).exists()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["seed"] == 0 and report["summary"] == rep.summary
    assert "plan_time_avg_s" not in json.loads((tmp_path / "metrics.json").read_text())


def test_single_cell_sweep_has_one_row(tmp_path):
    rows = cli.sweep(SCALED, ["ours"], [0], tmp_path)
    assert len(rows) == 1
    with open(tmp_path / "summary.csv") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == 1 and tuple(table[0]) == cli.CSV_COLUMNS
    assert table[0]["runs"] == "1"


def test_sweep_rows_per_method_and_alpha(tmp_path):
    rows = cli.sweep(SCALED, ["ours", "greedy", "inf_h"], [0, 1], tmp_path,
                     overrides={"inf_h_budget": 2000, "sim.max_time": 30.0}, alphas=[0.0, 0.1], workers=2)
    assert [(r["alpha"], r["method"]) for r in rows] == [(a, m) for a in (0.0, 0.1)
                                                          for m in ("ours", "greedy", "inf_h")]
    assert all(r["runs"] == 2 for r in rows)
    assert (tmp_path / "alpha_0.1" / "greedy" / "seed_1" / "metrics.json").exists()


def test_sweep_rejects_unknown_method():
    with pytest.raises(ValueError):
        cli.sweep(SCALED, ["bogus"], [0])


def test_main_exit_codes(tmp_path, capsys):
    assert cli.main(["run", "--scenario", str(SCALED), "--seed", "0", "--out", str(tmp_path / "a")]) == cli.EXIT_OK
    assert cli.main(["run", "--scenario", str(SCALED), "--out", str(tmp_path / "b"),
                     "--sim.bogus", "1"]) == cli.EXIT_INVALID
    assert cli.main(["run", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path / "c")]) \
        == cli.EXIT_INVALID
    assert cli.main(["run", "--scenario", str(SCALED), "--out", str(tmp_path / "d"),
                     "--sim.max_time", "5"]) == cli.EXIT_FAILED
    assert "teamplan:" in capsys.readouterr().err


def test_metrics_independent_of_hash_seed(tmp_path):
    outs = []
    for hs in ("1", "2"):
        out = tmp_path / hs
        env = dict(os.environ, PYTHONHASHSEED=hs)
        subprocess.run([sys.executable, "-m", "teamplan.cli", "run", "--scenario", str(SCALED),
                        "--seed", "2", "--out", str(out)], check=True, env=env, capture_output=True)
        outs.append((out / "metrics.json").read_bytes())
    assert outs[0] == outs[1]
