"""Trajectory accuracy and run statistics."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import geometry as geo
from .exceptions import DegenerateAlignmentError
from .geometry import Pose, Rotation
from .trajectory import Trajectory


def match_stamps(est: Trajectory, ref: Trajectory, tol=None):
    """Nearest-neighbour stamp pairs ``(est_idx, ref_idx)`` within ``tol`` seconds.

    The default tolerance is half the median sample period of ``ref``.
    Returns the two index arrays and the number of unmatched estimate samples.
    """
    if len(est) == 0 or len(ref) == 0:
        return np.zeros(0, int), np.zeros(0, int), len(est)
    if tol is None:
        tol = 0.5 * float(np.median(np.diff(ref.stamps))) if len(ref) > 1 else 1e-9
    pos = np.searchsorted(ref.stamps, est.stamps)
    lo = np.clip(pos - 1, 0, len(ref) - 1)
    hi = np.clip(pos, 0, len(ref) - 1)
    pick = np.where(np.abs(ref.stamps[hi] - est.stamps) < np.abs(est.stamps - ref.stamps[lo]), hi, lo)
    ok = np.abs(ref.stamps[pick] - est.stamps) <= tol + 1e-12
    ei = np.nonzero(ok)[0]
    return ei, pick[ok], int(len(est) - ok.sum())


def kabsch(src, dst) -> Pose:
    """Rigid transform ``T`` (no scale) minimizing ``sum |T src_i - dst_i|^2``."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if len(src) != len(dst):
        raise ValueError("point sets differ in size")
    if len(src) < 3:
        raise DegenerateAlignmentError(f"need at least 3 correspondences, got {len(src)}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    A, B = src - mu_s, dst - mu_d
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateAlignmentError("correspondences are collinear or coincident")
    U, _, Vt = np.linalg.svd(A.T @ B)
    d = 1.0 if np.linalg.det(Vt.T @ U.T) >= 0 else -1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return Pose(Rotation.from_matrix(R), mu_d - R @ mu_s)


def align_se3(est: Trajectory, gt: Trajectory, tol=None) -> Pose:
    ei, gi, _ = match_stamps(est, gt, tol)
    return kabsch(est.positions[ei], gt.positions[gi])


def rmse(errors) -> float:
    e = np.asarray(errors, dtype=float)
    return float(math.sqrt(np.mean(e * e))) if e.size else 0.0


def transform_trajectory(T: Pose, traj: Trajectory) -> Trajectory:
    R = T.rotation.matrix
    pos = traj.positions @ R.T + T.translation
    quats = np.array([(T.rotation * Rotation(tuple(q))).quat for q in traj.quats.tolist()])
    return Trajectory(traj.stamps, pos, quats.reshape(-1, 4))


def ate(est: Trajectory, gt: Trajectory, tol=None, align=True):
    """Translational RMSE (m) and rotational geodesic RMSE (deg) after rigid alignment."""
    ei, gi, _ = match_stamps(est, gt, tol)
    if len(ei) == 0:
        raise DegenerateAlignmentError("no stamp correspondences")
    T = kabsch(est.positions[ei], gt.positions[gi]) if align else Pose.identity()
    R = T.rotation.matrix
    p = est.positions[ei] @ R.T + T.translation
    trans = np.linalg.norm(p - gt.positions[gi], axis=1)
    qa = est.quats[ei]
    qb = gt.quats[gi]
    # relative rotation gt^-1 * (T * est); angle from the quaternion product
    rel = geo.matrix_to_quat(np.swapaxes(geo.quat_to_matrix(qb), 1, 2) @ (R @ geo.quat_to_matrix(qa)))
    ang = 2.0 * np.arctan2(np.linalg.norm(rel[:, :3], axis=1), np.abs(rel[:, 3]))
    return rmse(trans), rmse(np.degrees(ang))


def percentile(values, q) -> float:
    """Nearest-rank percentile (``q`` in percent)."""
    v = sorted(float(x) for x in values)
    if not v:
        return 0.0
    if not 0 <= q <= 100:
        raise ValueError("percentile must be within [0, 100]")
    rank = max(1, math.ceil(q / 100.0 * len(v)))
    return v[rank - 1]


def _mean_std(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    return float(x.mean()), float(x.std())


def gate_crossing_correction(corrected: Trajectory, raw: Trajectory, gates, lap_stamps=None,
                             max_range=None):
    """Per-lap distance between corrected and raw estimates where the run passes each gate.

    For every gate and lap the corrected sample closest to the gate centre is
    located; the correction is its distance to the raw sample at the same
    stamp.  Gates never approached within ``max_range`` are excluded.
    Returns ``{"laps": [...], "overall": {...}, "excluded": [...]}``.
    """
    if lap_stamps is None or len(lap_stamps) < 2:
        lap_stamps = [corrected.stamps[0], corrected.stamps[-1]]
    ci, ri, _ = match_stamps(corrected, raw)
    stamps = corrected.stamps[ci]
    cpos = corrected.positions[ci]
    rpos = raw.positions[ri]
    laps, everything, excluded = [], [], []
    n_laps = len(lap_stamps) - 1
    for k in range(n_laps):
        lo, hi = lap_stamps[k], lap_stamps[k + 1]
        sel = (stamps >= lo) & ((stamps < hi) if k < n_laps - 1 else (stamps <= hi + 1e-9))
        idx = np.nonzero(sel)[0]
        values = []
        for sid, gate in gates:
            centre = gate.translation if isinstance(gate, Pose) else np.asarray(gate, float)
            if idx.size == 0:
                excluded.append({"lap": k, "gate": sid, "reason": "empty lap"})
                continue
            d = np.linalg.norm(cpos[idx] - centre, axis=1)
            j = int(np.argmin(d))
            if max_range is not None and d[j] > max_range:
                excluded.append({"lap": k, "gate": sid, "reason": "not approached"})
                continue
            values.append(float(np.linalg.norm(cpos[idx[j]] - rpos[idx[j]])))
        mean, std = _mean_std(values)
        laps.append({"lap": k, "mean": mean, "std": std, "count": len(values), "values": values})
        everything.extend(values)
    mean, std = _mean_std(everything)
    return {"laps": laps, "overall": {"mean": mean, "std": std, "count": len(everything)},
            "excluded": excluded}


@dataclass
class MetricsReport:
    ate_trans: float | None = None
    ate_rot: float | None = None
    raw_ate_trans: float | None = None
    raw_ate_rot: float | None = None
    lap_corrections: list = field(default_factory=list)
    correction_overall: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    detections: dict = field(default_factory=dict)
    opt_p50_ms: float = 0.0
    opt_p95_ms: float = 0.0
    opt_count: int = 0
    config_hash: str = ""
    seed: int | None = None
    mode: str = "dual"

    def to_dict(self):
        d = asdict(self)
        for lap in d["lap_corrections"]:
            lap.pop("values", None)
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def summarize(manager, corrected: Trajectory, raw: Trajectory, ground_truth: Trajectory | None = None,
              gates=None, lap_stamps=None, seed=None, max_range=None) -> MetricsReport:
    rep = MetricsReport(seed=seed, config_hash=manager.config.digest(),
                        mode="single" if manager.config.single_graph_mode else "dual")
    if ground_truth is not None:
        rep.ate_trans, rep.ate_rot = ate(corrected, ground_truth)
        rep.raw_ate_trans, rep.raw_ate_rot = ate(raw, ground_truth)
    if gates is not None:
        gc = gate_crossing_correction(corrected, raw, gates, lap_stamps, max_range)
        rep.lap_corrections = gc["laps"]
        rep.correction_overall = gc["overall"]
    c = manager.main.counts()
    c["keyframes"] = c["pose_nodes"]
    rep.counts = c
    rep.detections = {k: int(v) for k, v in sorted(manager.stats.items())}
    times = manager.opt_times_ms()
    rep.opt_count = len(times)
    rep.opt_p50_ms = percentile(times, 50)
    rep.opt_p95_ms = percentile(times, 95)
    return rep
