import filecmp

import numpy as np
import pytest

from dualgraph import io as dio
from dualgraph.association import RawDetection
from dualgraph.exceptions import ConfigError, StreamFormatError
from dualgraph.geometry import Pose
from dualgraph.simulator import NoiseModel, SimRun, TrackSpec, simulate
from dualgraph.trajectory import Trajectory

FILES = [dio.ODOMETRY_FILE, dio.DETECTIONS_FILE, dio.GATES_FILE, dio.GROUND_TRUTH_FILE]


@pytest.fixture(scope="module")
def small_sim():
    return simulate(TrackSpec(lap_count=1, a=12, b=8, gate_count=4), NoiseModel(seed=1))


def test_save_writes_four_files_deterministically(tmp_path, small_sim):
    dio.save_sim(tmp_path / "a", small_sim)
    again = simulate(TrackSpec(lap_count=1, a=12, b=8, gate_count=4), NoiseModel(seed=1))
    dio.save_sim(tmp_path / "b", again)
    assert sorted(p.name for p in (tmp_path / "a").iterdir()) == sorted(FILES)
    for name in FILES:
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)


def test_parse_and_rewrite_is_byte_identical(tmp_path, small_sim):
    dio.save_sim(tmp_path / "a", small_sim)
    run = dio.load_run(tmp_path / "a")
    sim = SimRun(run.ground_truth, run.gates, run.odometry, run.detections, run.lap_stamps,
                 noise=NoiseModel(seed=run.seed))
    dio.save_sim(tmp_path / "b", sim)
    for name in FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert run.lap_stamps == small_sim.lap_stamps and run.seed == 1


def test_point_detections_and_information_round_trip(tmp_path):
    stream = [(0.5, [RawDetection([1.0, 2.0, 3.0], 4.0 * np.eye(3)), RawDetection(Pose(translation=[1, 0, 0]))])]
    dio.write_detections(tmp_path / "d.jsonl", stream)
    (t, batch), = dio.read_detections(tmp_path / "d.jsonl")
    assert t == 0.5 and batch[0].kind == "point" and batch[1].kind == "pose"
    assert np.array_equal(batch[0].information, 4.0 * np.eye(3)) and batch[1].information is None


@pytest.mark.parametrize("content, line", [
    ('{"t": 0, "p": [0, 0, 0], "q": [0, 0, 0, 1]}\n{"t": 0, "p": [0, 0, 0], "q": [0, 0, 0, 1]}\n', 2),
    ('{"t": 0, "p": [0, 0, 0], "q": [0, 0, 0, 1]}\n\n{"t": 1, "p": [0, 0], "q": [0, 0, 0, 1]}\n', 3),
    ('{"t": 0, "p": [0, 0, 0], "q": [0, 0, 0, 0]}\n', 1),
    ('not json\n', 1),
])
def test_odometry_errors_carry_line_numbers(tmp_path, content, line):
    path = tmp_path / "odometry.jsonl"
    path.write_text(content)
    with pytest.raises(StreamFormatError) as err:
        dio.read_odometry(path)
    assert err.value.lineno == line
    assert f":{line}" in str(err.value) or f"line {line}" in str(err.value)


def test_detection_errors(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"t": 0, "dets": [{"p": [1, 2, 3], "info": [[1]]}]}\n')
    with pytest.raises(StreamFormatError):
        dio.read_detections(path)
    path.write_text('{"t": 0, "dets": 3}\n')
    with pytest.raises(StreamFormatError):
        dio.read_detections(path)


def test_gate_and_tum_errors(tmp_path):
    path = tmp_path / "g.json"
    path.write_text('[{"id": 1, "p": [0, 0, 0], "q": [0, 0, 0, 1]}, {"id": 1, "p": [0, 0, 0], "q": [0, 0, 0, 1]}]')
    with pytest.raises(StreamFormatError):
        dio.read_gates(path)
    tum = tmp_path / "t.tum"
    tum.write_text("0 0 0 0 0 0 0 1\n1 0 0 0 0 0 1\n")
    with pytest.raises(StreamFormatError) as err:
        dio.read_tum(tum)
    assert err.value.lineno == 2


def test_tum_round_trip(tmp_path):
    traj = Trajectory([0.0, 0.1], [[1.0, 2.0, 3.0], [1.5, 2.5, 3.5]], [[0, 0, 0, 1.0], [0, 0, 0.6, 0.8]])
    dio.write_tum(tmp_path / "x.tum", traj, {"note": "hello"})
    back, header = dio.read_tum(tmp_path / "x.tum")
    assert back == traj and header == {"note": "hello"}


def test_load_run_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        dio.load_run(tmp_path)


def test_config_round_trip_and_overrides(tmp_path):
    cfg = dio.load_config(overrides=["graph.d_main=3.0", "experiment.seeds=0-3,7",
                                     "graph.odometry_sigma=0.01,0.002", "graph.single_graph_mode=yes"])
    assert cfg.graph.d_main == 3.0 and cfg.seeds == (0, 1, 2, 3, 7)
    assert cfg.graph.odometry_sigma == (0.01, 0.002) and cfg.graph.single_graph_mode
    path = tmp_path / "c.ini"
    path.write_text(dio.dump_config(cfg))
    assert dio.load_config(path) == cfg


@pytest.mark.parametrize("override", ["graph.d_temp=5.0", "graph.nope=1", "bogus.x=1", "graph.d_main",
                                      "noise.det_dropout=2", "main_solver.max_iterations=abc"])
def test_config_errors(override):
    with pytest.raises(ConfigError):
        dio.load_config(overrides=[override])
