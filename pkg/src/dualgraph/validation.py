"""Input checks shared by the estimator facade and the file readers."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, column_or_1d

from .association import RawDetection
from .geometry import Pose
from .trajectory import Trajectory


def check_stamps(stamps, name="stamps"):
    t = column_or_1d(check_array(np.asarray(stamps, dtype=float).reshape(-1, 1), ensure_min_samples=1))
    if len(t) > 1 and np.any(np.diff(t) <= 0):
        raise ValueError(f"{name} must be strictly increasing")
    return t


def check_poses(X, name="poses"):
    """``(n, 7)`` array of ``x y z qx qy qz qw`` rows with unit-normalizable quaternions."""
    X = check_array(X, dtype=float, ensure_min_samples=1, input_name=name)
    if X.shape[1] != 7:
        raise ValueError(f"{name} must have 7 columns (x y z qx qy qz qw), got {X.shape[1]}")
    norms = np.linalg.norm(X[:, 3:], axis=1)
    if np.any(norms < 1e-12):
        raise ValueError(f"{name} contains a zero quaternion")
    return X


def check_trajectory(traj, name="trajectory") -> Trajectory:
    """Accept a :class:`Trajectory` or an ``(n, 8)`` TUM-style array."""
    if isinstance(traj, Trajectory):
        if len(traj) == 0:
            raise ValueError(f"{name} is empty")
        return traj
    X = check_array(traj, dtype=float, ensure_min_samples=1, input_name=name)
    if X.shape[1] != 8:
        raise ValueError(f"{name} must have 8 columns (t x y z qx qy qz qw), got {X.shape[1]}")
    t = check_stamps(X[:, 0], f"{name} stamps")
    P = check_poses(X[:, 1:], name)
    q = P[:, 3:] / np.linalg.norm(P[:, 3:], axis=1, keepdims=True)
    return Trajectory(t, P[:, :3], q)


def check_gate_map(gates):
    """Normalize a gate map to a list of ``(id, Pose)`` with unique ids.

    Accepts ``(id, Pose)`` pairs, a mapping ``id -> Pose`` or an ``(n, 7)``
    pose array (ids become row indices).
    """
    if isinstance(gates, dict):
        gates = list(gates.items())
    elif isinstance(gates, np.ndarray):
        X = check_poses(gates, "gates")
        gates = [(i, Pose.from_array(row)) for i, row in enumerate(X)]
    out = []
    for item in gates:
        sid, pose = item
        if not isinstance(pose, Pose):
            pose = Pose.from_array(check_poses(np.reshape(pose, (1, -1)), "gate")[0])
        out.append((sid, pose))
    if not out:
        raise ValueError("gate map is empty")
    ids = [sid for sid, _ in out]
    if len(set(ids)) != len(ids):
        raise ValueError("gate ids must be unique")
    return out


def check_detections(detections):
    """List of ``(stamp, [RawDetection, ...])`` with strictly increasing stamps."""
    out = []
    last = None
    for stamp, batch in detections:
        stamp = float(stamp)
        if not np.isfinite(stamp):
            raise ValueError("detection stamp must be finite")
        if last is not None and not stamp > last:
            raise ValueError(f"detection stamp {stamp} is not after {last}")
        last = stamp
        out.append((stamp, [d if isinstance(d, RawDetection) else RawDetection(d, stamp=stamp) for d in batch]))
    return out
