import math

import numpy as np
import pytest
from scipy.integrate import quad

from dualgraph.exceptions import ConfigError
from dualgraph.geometry import Pose, Rotation
from dualgraph.simulator import (NoiseModel, TrackSpec, curve, generate_track, simulate,
                                 simulate_detections, simulate_odometry, track_length)
from dualgraph.trajectory import Trajectory

QUIET = dict(odom_trans_sigma=0, odom_rot_sigma=0, odom_bias_drift=0, det_pos_sigma=0, det_rot_sigma=0,
             det_dropout=0)


def test_circle_gates_on_radius():
    gates, _, _ = generate_track(TrackSpec(a=12.0, b=12.0, gate_count=9))
    assert len(gates) == 9
    for _, g in gates:
        assert abs(np.hypot(*g.translation[:2]) - 12.0) < 1e-9


def test_lemniscate_crosses_origin_twice_per_lap():
    spec = TrackSpec(shape="lemniscate")
    xy, _ = curve(spec, [math.pi / 2, 3 * math.pi / 2])
    assert np.abs(xy).max() < 1e-12
    _, gt, laps = generate_track(spec)
    near = np.hypot(gt.positions[:, 0], gt.positions[:, 1]) < spec.speed / spec.sample_rate
    # count separate passes (runs of consecutive samples)
    passes = int(near[0]) + int(np.sum(near[1:] & ~near[:-1]))
    assert passes == 2 * spec.lap_count


@pytest.mark.parametrize("shape", ["ellipse", "lemniscate"])
def test_sample_spacing_matches_speed(shape):
    spec = TrackSpec(shape=shape)
    _, gt, laps = generate_track(spec)
    step = np.linalg.norm(np.diff(gt.positions, axis=0), axis=1)
    expected = spec.speed / spec.sample_rate
    assert np.abs(step / expected - 1).max() < 0.01
    exact, _ = quad(lambda u: float(np.linalg.norm(curve(spec, u)[1])), 0, 2 * math.pi, limit=200)
    assert track_length(spec) == pytest.approx(exact, rel=1e-5)
    assert laps[-1] == pytest.approx(spec.lap_count * track_length(spec) / spec.speed)


def test_headings_follow_the_track():
    _, gt, _ = generate_track(TrackSpec())
    fwd = np.diff(gt.positions, axis=0)
    fwd /= np.linalg.norm(fwd, axis=1, keepdims=True)
    yaw = 2 * np.arctan2(gt.quats[:-1, 2], gt.quats[:-1, 3])
    heading = np.column_stack([np.cos(yaw), np.sin(yaw)])
    assert np.min(np.sum(heading * fwd[:, :2], axis=1)) > 0.99


def test_noiseless_odometry_is_ground_truth():
    _, gt, _ = generate_track(TrackSpec())
    odom = simulate_odometry(gt, NoiseModel(**QUIET), seed=3)
    assert odom == gt


def test_pure_bias_drift():
    _, gt, _ = generate_track(TrackSpec())
    b = 0.25
    odom = simulate_odometry(gt, NoiseModel(**{**QUIET, "odom_bias_drift": b}), seed=5)
    T = gt.stamps[-1] - gt.stamps[0]
    err = np.linalg.norm(odom.positions[-1] - gt.positions[-1])
    assert abs(err - b * T) < 1e-9


def test_default_end_point_drift_band():
    _, gt, _ = generate_track(TrackSpec())
    drift = [np.linalg.norm(simulate_odometry(gt, NoiseModel(), seed=s).positions[-1] - gt.positions[-1])
             for s in range(20)]
    assert 1.0 <= min(drift) and max(drift) <= 6.0


def one_gate(at):
    return [(0, Pose(translation=at))]


def static_gt(n):
    return Trajectory(np.arange(n) * 0.01, np.zeros((n, 3)), np.tile([0, 0, 0, 1.0], (n, 1)))


def test_gate_ahead_is_measured_exactly():
    noise = NoiseModel(**{**QUIET, "det_range": 10.0, "det_fov": math.pi / 2})
    stream = simulate_detections(static_gt(1), one_gate([3, 0, 0]), noise, seed=0)
    (t, batch), = stream
    assert np.array_equal(batch[0].measurement.translation, [3.0, 0.0, 0.0])
    assert simulate_detections(static_gt(1), one_gate([-3, 0, 0]), noise, seed=0) == []


def test_dropout_rate():
    noise = NoiseModel(**{**QUIET, "det_dropout": 0.5})
    stream = simulate_detections(static_gt(10_000), one_gate([3, 0, 0]), noise, seed=11)
    frac = sum(len(b) for _, b in stream) / 10_000
    assert abs(frac - 0.5) <= 0.02


@pytest.mark.parametrize("shape", ["ellipse", "lemniscate"])
def test_detections_within_range_and_fov(shape):
    sim = simulate(TrackSpec(shape=shape), NoiseModel(det_pos_sigma=0, seed=2))
    gates = dict(sim.gates)
    idx = {t: i for i, t in enumerate(sim.ground_truth.stamps.tolist())}
    assert sim.detections
    for t, batch in sim.detections:
        body = sim.ground_truth.pose(idx[t])
        for d in batch:
            rel = d.measurement.translation
            assert np.linalg.norm(rel) <= sim.noise.det_range + 1e-9
            assert rel[0] > 0 and abs(math.atan2(rel[1], rel[0])) <= sim.noise.det_fov / 2 + 1e-9
            # noiseless positions: the measurement comes from some gate
            world = body.rotation.apply(rel) + body.translation
            assert min(np.linalg.norm(world - g.translation) for g in gates.values()) < 1e-9


def test_same_seed_same_run():
    a = simulate(TrackSpec(lap_count=1), NoiseModel(seed=4))
    b = simulate(TrackSpec(lap_count=1), NoiseModel(seed=4))
    c = simulate(TrackSpec(lap_count=1), NoiseModel(seed=5))
    assert a.odometry == b.odometry and not a.odometry == c.odometry


def test_reverse_detections_are_flipped():
    sim = simulate(TrackSpec(lap_count=1), NoiseModel(det_reverse_prob=1.0, det_rot_sigma=0, seed=1))
    gates = dict(sim.gates)
    t, batch = sim.detections[0]
    body = sim.ground_truth.pose(sim.ground_truth.nearest(t))
    world = body.rotation.apply(batch[0].measurement.translation) + body.translation
    seen = min(gates.values(), key=lambda g: np.linalg.norm(g.translation - world))
    world_yaw = (body.rotation * batch[0].measurement.rotation).yaw()
    gate_yaw = abs(math.remainder(world_yaw - seen.rotation.yaw(), 2 * math.pi))
    assert gate_yaw == pytest.approx(math.pi, abs=1e-6)


def test_invalid_specs():
    with pytest.raises(ConfigError):
        TrackSpec(shape="oval")
    with pytest.raises(ConfigError):
        NoiseModel(det_dropout=1.0)
