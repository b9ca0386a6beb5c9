import csv
import json

import pytest

from dualgraph import io as dio
from dualgraph.cli import DEFAULT_GRID, main, parse_grid
from dualgraph.graph import parse_graph

SMALL = ["--set", "track.a=10", "--set", "track.b=6", "--set", "track.gate_count=4",
         "--set", "track.lap_count=1", "--set", "experiment.workers=1"]
QUIET = ["--set", "noise.odom_trans_sigma=0", "--set", "noise.odom_rot_sigma=0",
         "--set", "noise.odom_bias_drift=0", "--set", "noise.det_pos_sigma=0",
         "--set", "noise.det_rot_sigma=0"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sims")
    assert main(["simulate", "-o", str(out), "--seeds", "1", *SMALL]) == 0
    return out / "seed_001"


def test_simulate_files_and_determinism(tmp_path, sim_dir):
    assert sorted(p.name for p in sim_dir.iterdir()) == sorted(
        [dio.ODOMETRY_FILE, dio.DETECTIONS_FILE, dio.GATES_FILE, dio.GROUND_TRUTH_FILE])
    assert main(["simulate", "-o", str(tmp_path), "--seeds", "1", *SMALL]) == 0
    for p in sim_dir.iterdir():
        assert (tmp_path / "seed_001" / p.name).read_bytes() == p.read_bytes()


def test_simulate_two_seeds(tmp_path):
    assert main(["simulate", "-o", str(tmp_path), "--seeds", "3,4", *SMALL]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["seed_003", "seed_004"]


def test_bad_config_exit_code(tmp_path, capsys):
    assert main(["simulate", "-o", str(tmp_path), "--d-main", "1.0", "--d-temp", "2.0"]) == 2
    assert "d_temp" in capsys.readouterr().err
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[graph]\nd_temp = 9\n")
    assert main(["run", str(tmp_path), "-c", str(cfg)]) == 2
    assert main([]) == 2


def test_run_outputs_and_improves_on_odometry(tmp_path, sim_dir):
    out = tmp_path / "res"
    assert main(["run", str(sim_dir), "-o", str(out), *SMALL]) == 0
    assert {p.name for p in out.iterdir()} == {"corrected.tum", "raw.tum", "diagnostics.jsonl", "metrics.json"}
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["ate_trans"] < metrics["raw_ate_trans"]
    assert metrics["mode"] == "dual"
    diag = [json.loads(l) for l in (out / "diagnostics.jsonl").read_text().splitlines()]
    assert len(diag) == metrics["counts"]["keyframes"] - 1


def test_single_graph_flag(tmp_path, sim_dir):
    assert main(["run", str(sim_dir), "-o", str(tmp_path), "--single-graph", *SMALL]) == 0
    assert json.loads((tmp_path / "metrics.json").read_text())["mode"] == "single"


def test_noiseless_run_is_exact(tmp_path):
    assert main(["simulate", "-o", str(tmp_path), "--seeds", "0", *SMALL, *QUIET]) == 0
    run = tmp_path / "seed_000"
    assert main(["run", str(run), *SMALL]) == 0
    assert json.loads((run / "metrics.json").read_text())["ate_trans"] < 1e-6


def test_run_is_reproducible(tmp_path, sim_dir):
    for name in ("a", "b"):
        assert main(["run", str(sim_dir), "-o", str(tmp_path / name), *SMALL]) == 0
    for name in ("corrected.tum", "raw.tum"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_input_errors(tmp_path, sim_dir, capsys):
    assert main(["run", str(tmp_path / "missing")]) == 3
    bad = tmp_path / "bad"
    bad.mkdir()
    for p in sim_dir.iterdir():
        (bad / p.name).write_bytes(p.read_bytes())
    lines = (bad / dio.ODOMETRY_FILE).read_text().splitlines()
    lines[4] = '{"t": "x"}'
    (bad / dio.ODOMETRY_FILE).write_text("\n".join(lines) + "\n")
    assert main(["run", str(bad)]) == 3
    assert ":5:" in capsys.readouterr().err


def test_default_grid_has_six_rows(tmp_path):
    assert len(parse_grid(DEFAULT_GRID)) == 6
    assert main(["ablate", "-o", str(tmp_path), "--seeds", "0", *SMALL]) == 0
    summary = read_csv(tmp_path / "ablation_summary.csv")
    assert len(summary) == 6
    assert list(summary[0])[:7] == ["graph", "d_main", "d_temp", "ate_median", "nodes", "edges", "opt_p95_ms"]
    assert [r["graph"] for r in summary] == ["dual"] * 3 + ["single"] * 3


def test_ablation_counts_and_pool(tmp_path):
    args = ["ablate", "-o", str(tmp_path), "--seeds", "0-19", "--grid", "dual:2.0:0.1,single:2.0",
            *SMALL, "--set", "track.a=5", "--set", "track.b=3", "--workers", "2"]
    assert main(args) == 0
    assert len(read_csv(tmp_path / "ablation_detail.csv")) == 40
    assert len(read_csv(tmp_path / "ablation_summary.csv")) == 2


def test_ablation_errors(tmp_path):
    assert main(["ablate", "-o", str(tmp_path), "--grid", ""]) == 2
    assert main(["ablate", "-o", str(tmp_path), "--grid", "triple:2"]) == 2
    # one broken variant does not discard the others
    assert main(["ablate", "-o", str(tmp_path), "--seeds", "0", "--grid", "dual:1.0:2.0,single:2.0", *SMALL]) == 0
    rows = read_csv(tmp_path / "ablation_detail.csv")
    assert rows[0]["error"] and not rows[1]["error"]


def test_plot_data(tmp_path, sim_dir):
    run = tmp_path / "run"
    run.mkdir()
    for p in sim_dir.iterdir():
        (run / p.name).write_bytes(p.read_bytes())
    assert main(["run", str(run), *SMALL]) == 0
    assert main(["plot-data", str(run), "-o", str(tmp_path / "plots")]) == 0
    names = {p.name for p in (tmp_path / "plots").iterdir()}
    assert names == {"gt_xy.csv", "raw_xy.csv", "corrected_xy.csv", "gates.csv"}
    assert len(read_csv(tmp_path / "plots" / "gates.csv")) == 4

    (run / dio.GROUND_TRUTH_FILE).unlink()
    assert main(["plot-data", str(run), "-o", str(tmp_path / "nogt")]) == 0
    assert {p.name for p in (tmp_path / "nogt").iterdir()} == {"raw_xy.csv", "corrected_xy.csv"}
    assert main(["plot-data", str(tmp_path / "nothing")]) == 3


def test_dump_graph(tmp_path, sim_dir):
    out = tmp_path / "graph.txt"
    assert main(["dump-graph", str(sim_dir), "-o", str(out), *SMALL]) == 0
    g = parse_graph(out.read_text())
    assert g.counts()["landmark_nodes"] == 4 and g.counts()["pose_nodes"] > 1
