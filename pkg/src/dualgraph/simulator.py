"""Synthetic racing runs: gate maps, ground truth, drifting odometry, detections.

Body frame convention: x forward (camera axis), y left, z up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .association import RawDetection
from .exceptions import ConfigError
from .geometry import Pose, Rotation
from .trajectory import Trajectory

_TABLE_SIZE = 20001


@dataclass
class TrackSpec:
    shape: str = "ellipse"
    a: float = 25.0
    b: float = 15.0  # ignored by the lemniscate
    gate_count: int = 7
    lap_count: int = 2
    speed: float = 8.0
    sample_rate: float = 30.0
    gate_height: float = 2.0

    def __post_init__(self):
        if self.shape not in ("ellipse", "lemniscate"):
            raise ConfigError(f"unknown track shape {self.shape!r}")
        if not self.a > 0 or (self.shape == "ellipse" and not self.b > 0):
            raise ConfigError("track axes must be positive")
        if self.gate_count < 2:
            raise ConfigError("need at least 2 gates")
        if self.lap_count < 1:
            raise ConfigError("need at least one lap")
        if not self.speed > 0:
            raise ConfigError("speed must be positive")
        if self.sample_rate < 10:
            raise ConfigError("sample_rate must be >= 10 Hz")


@dataclass
class NoiseModel:
    odom_trans_sigma: float = 0.02   # m per sqrt(m)
    odom_rot_sigma: float = 0.0005   # rad per sqrt(m)
    odom_bias_drift: float = 0.1     # m/s, horizontal, random heading per seed
    det_pos_sigma: float = 0.08
    det_rot_sigma: float = 0.03
    det_range: float = 8.0
    det_fov: float = 1.4
    det_dropout: float = 0.2
    det_reverse_prob: float = 0.0    # chance a detection reports the gate turned by pi
    seed: int = 0

    def __post_init__(self):
        for name in ("odom_trans_sigma", "odom_rot_sigma", "odom_bias_drift",
                     "det_pos_sigma", "det_rot_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.det_range > 0 or not self.det_fov > 0:
            raise ConfigError("detection range and fov must be positive")
        if not 0 <= self.det_dropout < 1:
            raise ConfigError("det_dropout must be in [0, 1)")
        if not 0 <= self.det_reverse_prob <= 1:
            raise ConfigError("det_reverse_prob must be in [0, 1]")


@dataclass
class SimRun:
    ground_truth: Trajectory
    gates: list            # [(semantic_id, Pose)]
    odometry: Trajectory
    detections: list       # [(stamp, [RawDetection, ...])], non-empty batches only
    lap_stamps: list       # lap boundaries, lap_count + 1 values
    track: TrackSpec = field(default_factory=TrackSpec)
    noise: NoiseModel = field(default_factory=NoiseModel)


# ---------------------------------------------------------------------------
# track geometry
# ---------------------------------------------------------------------------

def curve(spec: TrackSpec, u):
    """Planar curve point and derivative at parameter ``u`` (one lap = 2 pi)."""
    u = np.asarray(u, dtype=float)
    if spec.shape == "ellipse":
        xy = np.stack([spec.a * np.cos(u), spec.b * np.sin(u)], axis=-1)
        dxy = np.stack([-spec.a * np.sin(u), spec.b * np.cos(u)], axis=-1)
        return xy, dxy
    s, c = np.sin(u), np.cos(u)
    den = 1.0 + s * s
    x = spec.a * c / den
    y = spec.a * s * c / den
    dden = 2.0 * s * c
    dx = spec.a * (-s * den - c * dden) / den**2
    dy = spec.a * ((c * c - s * s) * den - s * c * dden) / den**2
    return np.stack([x, y], axis=-1), np.stack([dx, dy], axis=-1)


def _arc_table(spec):
    u = np.linspace(0.0, 2.0 * math.pi, _TABLE_SIZE)
    xy, _ = curve(spec, u)
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    return u, np.concatenate([[0.0], np.cumsum(seg)])


def _pose_at(spec, u_table, s_table, s):
    length = s_table[-1]
    u = np.interp(np.mod(s, length), s_table, u_table)
    xy, dxy = curve(spec, u)
    yaw = np.arctan2(dxy[..., 1], dxy[..., 0])
    return xy, yaw


def generate_track(spec: TrackSpec):
    """Return ``(gates, ground_truth, lap_stamps)`` for ``spec``."""
    u_tab, s_tab = _arc_table(spec)
    length = s_tab[-1]
    z = spec.gate_height

    s_gates = (np.arange(spec.gate_count) + 0.5) / spec.gate_count * length
    gxy, gyaw = _pose_at(spec, u_tab, s_tab, s_gates)
    gates = [(k, Pose(Rotation.about_z(float(gyaw[k])), (gxy[k, 0], gxy[k, 1], z)))
             for k in range(spec.gate_count)]

    total = spec.lap_count * length
    dt = 1.0 / spec.sample_rate
    n = int(math.floor(total / (spec.speed * dt) + 1e-9)) + 1
    stamps = np.arange(n) * dt
    xy, yaw = _pose_at(spec, u_tab, s_tab, spec.speed * stamps)
    positions = np.column_stack([xy, np.full(n, z)])
    half = 0.5 * yaw
    quats = np.column_stack([np.zeros(n), np.zeros(n), np.sin(half), np.cos(half)])
    gt = Trajectory(stamps, positions, quats)
    lap_stamps = [j * length / spec.speed for j in range(spec.lap_count + 1)]
    return gates, gt, lap_stamps


def track_length(spec: TrackSpec) -> float:
    return float(_arc_table(spec)[1][-1])


# ---------------------------------------------------------------------------
# sensors
# ---------------------------------------------------------------------------

def _rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


def simulate_odometry(gt: Trajectory, noise: NoiseModel, seed=None) -> Trajectory:
    """Dead-reckon ground-truth increments with per-step noise and a velocity bias.

    Step noise on the increment is zero-mean Gaussian with variance
    proportional to the step length.  The bias is a constant horizontal
    velocity added in the odometry frame.
    """
    seed = noise.seed if seed is None else seed
    rng = _rng(seed, 1)
    heading = rng.uniform(-math.pi, math.pi)
    bias = noise.odom_bias_drift * np.array([math.cos(heading), math.sin(heading), 0.0])
    if noise.odom_trans_sigma == 0 and noise.odom_rot_sigma == 0:
        # closed form, so the noiseless case reproduces ground truth bit for bit
        positions = gt.positions + np.outer(gt.stamps - gt.stamps[0], bias)
        return Trajectory(gt.stamps, positions, gt.quats)
    sig = np.repeat([noise.odom_trans_sigma, noise.odom_rot_sigma], 3)
    poses = gt.poses()
    out = [poses[0]]
    for i in range(1, len(poses)):
        step = geo.relative(poses[i - 1], poses[i])
        scale = math.sqrt(float(np.linalg.norm(step.translation)))
        step = geo.compose(step, geo.exp(rng.standard_normal(6) * scale * sig))
        nxt = geo.compose(out[-1], step)
        dt = gt.stamps[i] - gt.stamps[i - 1]
        out.append(Pose(nxt.rotation, nxt.translation + bias * dt))
    return Trajectory.from_poses(gt.stamps, out)


def detection_visible(rel: Pose, noise: NoiseModel) -> bool:
    x, y, _ = rel.translation
    if x <= 0 or float(np.linalg.norm(rel.translation)) > noise.det_range:
        return False
    return abs(math.atan2(y, x)) <= 0.5 * noise.det_fov


_FLIP = Pose(Rotation.about_z(math.pi))


def simulate_detections(gt: Trajectory, gates, noise: NoiseModel, seed=None):
    """Noisy body-frame gate observations; returns ``[(stamp, [RawDetection])]``."""
    seed = noise.seed if seed is None else seed
    rng = _rng(seed, 2)
    if not len(gt) or not gates:
        return []
    Rb = geo.quat_to_matrix(gt.quats)                        # (N, 3, 3)
    Rg = np.array([g.rotation.matrix for _, g in gates])     # (G, 3, 3)
    tg = np.array([g.translation for _, g in gates])         # (G, 3)
    rel_t = np.einsum("nji,ngj->ngi", Rb, tg[None, :, :] - gt.positions[:, None, :])
    dist = np.linalg.norm(rel_t, axis=2)
    azimuth = np.arctan2(rel_t[..., 1], rel_t[..., 0])
    visible = (rel_t[..., 0] > 0) & (dist <= noise.det_range) & (np.abs(azimuth) <= 0.5 * noise.det_fov)
    ii, gg = np.nonzero(visible)                             # row-major: by sample, then gate
    k = len(ii)
    # every opportunity consumes the same draws, so streams line up across settings
    u = rng.random((k, 2))
    dp = rng.standard_normal((k, 3)) * noise.det_pos_sigma
    dr = rng.standard_normal((k, 3)) * noise.det_rot_sigma
    keep = u[:, 0] >= noise.det_dropout
    rel_R = np.einsum("nji,njk->nik", Rb[ii], Rg[gg]) @ geo.so3_exp(dr)
    rel_q = geo.matrix_to_quat(rel_R)
    stream = []
    batch, cur = [], None
    for n in np.nonzero(keep)[0]:
        i = int(ii[n])
        if i != cur:
            if batch:
                stream.append((float(gt.stamps[cur]), batch))
            batch, cur = [], i
        meas = Pose(Rotation(tuple(rel_q[n].tolist())), rel_t[i, gg[n]] + dp[n])
        if u[n, 1] < noise.det_reverse_prob:
            meas = geo.compose(meas, _FLIP)
        batch.append(RawDetection(meas, None, float(gt.stamps[i])))
    if batch:
        stream.append((float(gt.stamps[cur]), batch))
    return stream


def simulate(track: TrackSpec | None = None, noise: NoiseModel | None = None, seed=None) -> SimRun:
    track = track or TrackSpec()
    noise = noise or NoiseModel()
    seed = noise.seed if seed is None else seed
    gates, gt, laps = generate_track(track)
    odom = simulate_odometry(gt, noise, seed)
    dets = simulate_detections(gt, gates, noise, seed)
    return SimRun(gt, gates, odom, dets, laps, track, noise)
