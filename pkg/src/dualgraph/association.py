"""Gate detection to known-gate association.

Detections arrive in the drone body frame, are projected to the map frame
with the current corrected pose, matched to gates by minimum total
Euclidean distance (Hungarian assignment), then gated by distance and, for
pose detections, by heading.  A detection whose heading is off by roughly
pi is accepted as a reverse observation and flipped about its z axis.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .exceptions import ConfigError
from .geometry import Pose, Rotation

_FLIP = Pose(Rotation.about_z(math.pi))


@dataclass
class AssociationConfig:
    max_match_distance: float = 1.5
    max_yaw_error: float = 0.6
    allow_reverse: bool = True

    def __post_init__(self):
        if not self.max_match_distance > 0 or not self.max_yaw_error > 0:
            raise ConfigError("association thresholds must be positive")


@dataclass
class RawDetection:
    """One gate observation in the body frame of the drone."""
    measurement: object  # Pose or (3,) array
    information: np.ndarray | None = None
    stamp: float = 0.0

    def __post_init__(self):
        if isinstance(self.measurement, Pose):
            ok = np.all(np.isfinite(self.measurement.to_array()))
        else:
            self.measurement = np.asarray(self.measurement, dtype=float).reshape(3)
            ok = np.all(np.isfinite(self.measurement))
        if not ok:
            raise ValueError("detection has non-finite values")

    @property
    def kind(self):
        return "pose" if isinstance(self.measurement, Pose) else "point"


@dataclass
class AssociatedDetection:
    detection: RawDetection
    semantic_id: object
    measurement: object  # body-frame measurement, flipped when ``reversed``
    global_estimate: object  # Pose or (3,) array in the map frame
    distance: float
    reversed: bool = False


def to_global(drone_pose: Pose, det):
    m = det.measurement if isinstance(det, RawDetection) else det
    if isinstance(m, Pose):
        return geo.compose(drone_pose, m)
    return geo.transform_point(drone_pose, m)


def wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# assignment
# ---------------------------------------------------------------------------

def _solve_min(cost):
    """Shortest-augmenting-path Hungarian for ``n <= m``; returns ``col_of_row``."""
    n, m = cost.shape
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)  # p[j]: row (1-based) matched to column j
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = [-1] * n
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def _optimal_cost(cost):
    n, m = cost.shape
    if n == 0 or m == 0:
        return 0.0
    if n <= m:
        cols = _solve_min(cost)
        return float(sum(cost[i, c] for i, c in enumerate(cols)))
    rows = _solve_min(cost.T)
    return float(sum(cost[r, j] for j, r in enumerate(rows)))


def _sanitize(cost):
    cost = np.array(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if np.isnan(cost).any() or np.isneginf(cost).any():
        raise ValueError("cost matrix has NaN or -inf entries")
    if np.isposinf(cost).any():
        finite = cost[np.isfinite(cost)]
        big = (float(np.abs(finite).max()) + 1.0) * (sum(cost.shape) + 1) * 1e3 if finite.size else 1.0
        cost[np.isposinf(cost)] = big
    return cost


def hungarian(cost):
    """Minimum-cost assignment of ``min(n, m)`` pairs.

    Returns ``(pairs, total)`` with ``pairs`` sorted by row.  Among several
    optimal assignments the lexicographically smallest list of ``(row, col)``
    pairs is returned.
    """
    cost = _sanitize(cost)
    n, m = cost.shape
    if n == 0 or m == 0:
        return [], 0.0
    best = _optimal_cost(cost)
    tol = 1e-9 * max(1.0, abs(best))
    k = min(n, m)

    pairs = []
    fixed_cost = 0.0
    rows_left = list(range(n))
    cols_left = list(range(m))
    while len(pairs) < k:
        r = rows_left.pop(0)
        chosen = None
        for c in cols_left:
            rest_rows = rows_left
            rest_cols = [x for x in cols_left if x != c]
            need = k - len(pairs) - 1
            if min(len(rest_rows), len(rest_cols)) < need:
                continue
            sub = cost[np.ix_(rest_rows, rest_cols)]
            if fixed_cost + cost[r, c] + _optimal_cost(sub) <= best + tol:
                chosen = c
                break
        if chosen is None:
            continue  # row r stays unmatched (only possible when n > m)
        pairs.append((r, chosen))
        fixed_cost += cost[r, chosen]
        cols_left.remove(chosen)
    return pairs, float(sum(cost[r, c] for r, c in pairs))


# ---------------------------------------------------------------------------
# association
# ---------------------------------------------------------------------------

def _position(x):
    return x.translation if isinstance(x, Pose) else np.asarray(x, dtype=float)


def associate(drone_pose: Pose, detections, registry, config: AssociationConfig | None = None):
    """Match ``detections`` to known gates.

    ``registry`` maps semantic id -> gate estimate (``Pose`` or 3-vector).
    Returns ``(accepted, rejections)``; ``accepted`` is sorted by semantic id
    and ``rejections`` counts drops by cause (``distance``, ``yaw``,
    ``duplicate``).
    """
    config = config or AssociationConfig()
    rejections = Counter()
    if not registry:
        raise ValueError("empty gate registry")
    if not detections:
        return [], rejections
    gate_ids = sorted(registry, key=lambda s: (str(type(s)), s))
    gate_pos = np.array([_position(registry[g]) for g in gate_ids])
    glob = [to_global(drone_pose, d) for d in detections]
    det_pos = np.array([_position(x) for x in glob])
    cost = np.linalg.norm(det_pos[:, None, :] - gate_pos[None, :, :], axis=2)

    # rows sorted by position so the result does not depend on input order
    row_order = sorted(range(len(detections)), key=lambda i: tuple(det_pos[i]))
    pairs, _ = hungarian(cost[row_order])
    matched = set()
    accepted = []
    for r, c in pairs:
        i = row_order[r]
        matched.add(i)
        dist = float(cost[i, c])
        if dist > config.max_match_distance:
            rejections["distance"] += 1
            continue
        det = detections[i]
        gate = registry[gate_ids[c]]
        meas, g_est, flipped = det.measurement, glob[i], False
        if isinstance(meas, Pose) and isinstance(gate, Pose):
            err = abs(wrap_angle(g_est.rotation.yaw() - gate.rotation.yaw()))
            if err > config.max_yaw_error:
                if config.allow_reverse and abs(wrap_angle(err - math.pi)) <= config.max_yaw_error:
                    meas = geo.compose(meas, _FLIP)
                    g_est = geo.compose(g_est, _FLIP)
                    flipped = True
                else:
                    rejections["yaw"] += 1
                    continue
        accepted.append(AssociatedDetection(det, gate_ids[c], meas, g_est, dist, flipped))
    rejections["duplicate"] += len(detections) - len(matched)
    accepted.sort(key=lambda a: (str(type(a.semantic_id)), a.semantic_id))
    return accepted, rejections
