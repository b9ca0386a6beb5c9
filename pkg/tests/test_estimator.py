import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dualgraph.estimator import DualGraphLocalizer
from dualgraph.exceptions import ConfigError
from dualgraph.simulator import NoiseModel, TrackSpec, simulate
from dualgraph.validation import check_detections, check_gate_map, check_trajectory


@pytest.fixture(scope="module")
def sim():
    return simulate(TrackSpec(a=12, b=8, gate_count=4), NoiseModel(seed=2))


def test_params_and_clone():
    est = DualGraphLocalizer(d_main=1.5, single_graph_mode=True)
    c = clone(est)
    assert c.get_params() == est.get_params()
    assert c.set_params(d_temp=0.2).d_temp == 0.2


def test_fit_transform_score(sim):
    est = DualGraphLocalizer().fit(sim.gates)
    assert est.n_gates_ == 4
    traj = est.transform((sim.odometry, sim.detections))
    assert len(traj) == len(sim.odometry)
    assert -est.score((sim.odometry, sim.detections), sim.ground_truth) < 0.5
    assert est.manager_.n_keyframes > 1


def test_accepts_arrays(sim):
    odo = np.column_stack([sim.odometry.stamps, sim.odometry.positions, sim.odometry.quats])
    gates = np.array([np.concatenate([g.translation, g.quat]) for _, g in sim.gates])
    a = DualGraphLocalizer().fit(gates).transform((odo, sim.detections))
    b = DualGraphLocalizer().fit(sim.gates).transform((sim.odometry, sim.detections))
    assert np.abs(a.positions - b.positions).max() < 1e-9


def test_not_fitted_and_bad_params(sim):
    with pytest.raises(NotFittedError):
        DualGraphLocalizer().transform((sim.odometry, sim.detections))
    with pytest.raises(ConfigError):
        DualGraphLocalizer(d_main=0.1, d_temp=0.5).fit(sim.gates)


def test_validation_helpers():
    with pytest.raises(ValueError):
        check_trajectory(np.zeros((3, 7)))
    with pytest.raises(ValueError):
        check_trajectory(np.array([[1, 0, 0, 0, 0, 0, 0, 1], [0, 0, 0, 0, 0, 0, 0, 1.0]]))
    with pytest.raises(ValueError):
        check_gate_map([])
    with pytest.raises(ValueError):
        check_gate_map({1: np.array([0, 0, 0, 0, 0, 0, 0.0])})
    with pytest.raises(ValueError):
        check_detections([(1.0, []), (0.5, [])])
    assert check_detections([(0.0, [[1, 2, 3]])])[0][1][0].kind == "point"
