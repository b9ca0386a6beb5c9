"""Two-level localization backend.

A short-lived *temporary* graph collects every accepted gate detection
between keyframes.  At each keyframe it is optimized and each observed gate
is reduced to one refined constraint (relative measurement plus the gate's
marginal information).  The refined constraints go into the long-lived
*main* graph, which holds keyframes, odometry between them and the gate
map.  Re-observing a gate after a lap links the new keyframe to the existing
gate node, which closes the loop without a separate loop detector.
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from . import geometry as geo
from .association import AssociationConfig, RawDetection, associate
from .exceptions import ConfigError, GaugeError, StampOrderError
from .geometry import Pose
from .graph import (DETECTION_POINT_INFORMATION, DETECTION_POSE_INFORMATION, Graph,
                    PRIOR_INFORMATION_SCALE, check_information)
from .solver import SolverConfig, marginal_information, optimize

_SOLVER_ERRORS = (np.linalg.LinAlgError, GaugeError, FloatingPointError)


@dataclass
class DualGraphConfig:
    d_main: float = 2.0
    d_temp: float = 0.1
    main_solver: SolverConfig = field(default_factory=lambda: SolverConfig(max_iterations=15))
    temp_solver: SolverConfig = field(default_factory=lambda: SolverConfig(max_iterations=10))
    single_graph_mode: bool = False
    landmark_kind: str = "pose"
    association: AssociationConfig = field(default_factory=AssociationConfig)
    compression: str = "marginal"  # or "sum" (add up the raw edge informations)
    odometry_sigma: tuple = (0.02, 0.005)  # (m, rad) per metre of travel
    detection_information: tuple | None = None  # diagonal; None -> graph defaults
    prior_information: float = PRIOR_INFORMATION_SCALE

    def __post_init__(self):
        if isinstance(self.main_solver, dict):
            self.main_solver = SolverConfig(**self.main_solver)
        if isinstance(self.temp_solver, dict):
            self.temp_solver = SolverConfig(**self.temp_solver)
        if isinstance(self.association, dict):
            self.association = AssociationConfig(**self.association)
        if not (self.d_main > 0 and self.d_temp > 0):
            raise ConfigError("d_main and d_temp must be positive")
        if self.d_temp > self.d_main:
            raise ConfigError(f"d_temp ({self.d_temp}) must not exceed d_main ({self.d_main})")
        if self.landmark_kind not in ("pose", "point"):
            raise ConfigError("landmark_kind must be 'pose' or 'point'")
        if self.compression not in ("marginal", "sum"):
            raise ConfigError("compression must be 'marginal' or 'sum'")
        self.odometry_sigma = tuple(float(x) for x in self.odometry_sigma)
        if len(self.odometry_sigma) != 2 or min(self.odometry_sigma) <= 0:
            raise ConfigError("odometry_sigma needs two positive values")
        if self.detection_information is not None:
            self.detection_information = tuple(float(x) for x in self.detection_information)
            if len(self.detection_information) != self.landmark_dim or min(self.detection_information) <= 0:
                raise ConfigError("detection_information must be a positive diagonal")
        if not self.prior_information > 0:
            raise ConfigError("prior_information must be positive")

    @property
    def landmark_dim(self):
        return 6 if self.landmark_kind == "pose" else 3

    def detection_matrix(self):
        if self.detection_information is not None:
            return np.diag(self.detection_information)
        return DETECTION_POSE_INFORMATION if self.landmark_kind == "pose" else DETECTION_POINT_INFORMATION

    def odometry_matrix(self, distance):
        """Information of an odometry increment covering ``distance`` metres."""
        st, sr = self.odometry_sigma
        d = max(float(distance), 0.01)
        return np.diag([1.0 / (st * st * d)] * 3 + [1.0 / (sr * sr * d)] * 3)

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=repr).encode()
        return hashlib.sha1(blob).hexdigest()[:12]


@dataclass
class RefinedConstraint:
    semantic_id: object
    measurement: object  # Pose or 3-vector, relative to the new keyframe
    information: np.ndarray
    support_count: int

    def __post_init__(self):
        if self.support_count < 1:
            raise ValueError("support_count must be >= 1")


@dataclass
class _Keyframe:
    node: int
    raw: Pose
    stamp: float


class _TempGraph:
    """Detections since the last keyframe, expressed in the map frame."""

    def __init__(self, anchor_estimate: Pose, anchor_raw: Pose, stamp: float):
        self.graph = Graph()
        self.anchor = self.graph.add_pose_node(anchor_estimate, fixed=True, stamp=stamp)
        self.anchor_estimate = anchor_estimate
        self.anchor_raw = anchor_raw
        self.last_node = self.anchor
        self.last_raw = anchor_raw
        self.last_stamp = stamp
        self.landmarks = {}      # semantic id -> temp node id
        self.support = Counter()
        self.raw_edges = []      # (semantic id, pose node raw, measurement, information)

    @property
    def has_detections(self):
        return bool(self.support)


class DualGraphManager:
    """Sequential state machine fed with odometry and detection events."""

    def __init__(self, config: DualGraphConfig | None = None, landmark_map=()):
        self.config = config or DualGraphConfig()
        landmark_map = list(landmark_map)
        if not landmark_map:
            raise ConfigError("localization needs a non-empty gate map")
        cfg = self.config
        self.main = Graph()
        self.registry = {}
        prior_info = cfg.prior_information * np.eye(cfg.landmark_dim)
        for sid, prior in landmark_map:
            est = prior if cfg.landmark_kind == "pose" else prior.translation
            nid = self.main.add_landmark_node(est, sid)
            self.main.add_prior_edge(nid, est, prior_info)
            self.registry[sid] = nid
        self._det_info = check_information(cfg.detection_matrix(), cfg.landmark_dim)

        self.correction = Pose.identity()
        self.raw = None
        self.stamp = None
        self.keyframe = None
        self.temp = None
        self._pending = None
        self._det_stamp = None

        self.stats = Counter()
        self._interval = Counter()
        self.diagnostics = []
        self.main_reports = []
        self.temp_reports = []

    # -- inputs ------------------------------------------------------------------

    def process_odometry(self, stamp, raw_pose: Pose) -> Pose:
        stamp = float(stamp)
        if self.stamp is not None and not stamp > self.stamp:
            raise StampOrderError(f"odometry stamp {stamp} is not after {self.stamp}")
        if self._pending is not None:
            self.promote_keyframe()
        self.raw, self.stamp = raw_pose, stamp
        if self.keyframe is None:
            node = self.main.add_pose_node(geo.compose(self.correction, raw_pose), fixed=True, stamp=stamp)
            self.keyframe = _Keyframe(node, raw_pose, stamp)
            self._reset_temp()
        elif geo.translational_distance(self.keyframe.raw, raw_pose) >= self.config.d_main:
            # promoted once detections with this stamp have been seen
            self._pending = stamp
        return geo.compose(self.correction, raw_pose)

    def process_detections(self, stamp, detections) -> int:
        stamp = float(stamp)
        if self._det_stamp is not None and not stamp > self._det_stamp:
            raise StampOrderError(f"detection stamp {stamp} is not after {self._det_stamp}")
        self._det_stamp = stamp
        if self.raw is None:
            self.stats["dropped_before_odometry"] += len(detections)
            return 0
        if self._pending is not None and stamp > self._pending:
            self.promote_keyframe()
        dets = [self._as_kind(d) for d in detections]
        registry = {sid: self.main.nodes[nid].estimate for sid, nid in self.registry.items()}
        accepted, rejected = associate(self.current_estimate(), dets, registry, self.config.association)
        self.stats["raw_detections"] += len(dets)
        self.stats["accepted_detections"] += len(accepted)
        self.stats["reversed_detections"] += sum(a.reversed for a in accepted)
        for cause, n in rejected.items():
            self.stats[f"rejected_{cause}"] += n
            self._interval[f"rejected_{cause}"] += n
        self._interval["accepted"] += len(accepted)
        if accepted:
            if self.config.single_graph_mode and self.temp.has_detections:
                # the baseline keeps only the most recent frame of each interval
                self.stats["superseded_detections"] += sum(self.temp.support.values())
                self._reset_temp()
            self._add_to_temp(accepted)
        if self._pending is not None and stamp == self._pending:
            self.promote_keyframe()
        return len(accepted)

    def finish(self):
        """Flush a pending keyframe, or promote the last pose if it carries detections."""
        if self._pending is not None:
            return self.promote_keyframe()
        if self.keyframe is not None and self.raw is not self.keyframe.raw:
            if self.temp is not None and self.temp.has_detections and self.stamp > self.keyframe.stamp:
                self._pending = self.stamp
                return self.promote_keyframe()
        return None

    def current_estimate(self) -> Pose:
        return geo.compose(self.correction, self.raw)

    def _as_kind(self, det):
        if not isinstance(det, RawDetection):
            det = RawDetection(det)
        if self.config.landmark_kind == "point" and isinstance(det.measurement, Pose):
            info = det.information
            if info is not None and np.shape(info) == (6, 6):
                info = np.asarray(info)[:3, :3]
            det = RawDetection(det.measurement.translation, info, det.stamp)
        return det

    # -- temporary graph ---------------------------------------------------------

    def _reset_temp(self):
        kf = self.keyframe
        self.temp = _TempGraph(self.main.nodes[kf.node].estimate, kf.raw, kf.stamp)

    def _temp_node_at(self, raw: Pose, stamp: float) -> int:
        tg = self.temp
        g = tg.graph
        est = geo.compose(tg.anchor_estimate, geo.relative(tg.anchor_raw, raw))
        node = g.add_pose_node(est, stamp=stamp)
        step = geo.relative(tg.last_raw, raw)
        g.add_odometry_edge(tg.last_node, node, step,
                            self.config.odometry_matrix(np.linalg.norm(step.translation)))
        tg.last_node, tg.last_raw, tg.last_stamp = node, raw, stamp
        return node

    def _add_to_temp(self, accepted):
        tg = self.temp
        g = tg.graph
        raw = self.raw
        if tg.last_raw is raw:
            offset = None
        elif geo.translational_distance(tg.last_raw, raw) >= self.config.d_temp:
            self._temp_node_at(raw, self.stamp)
            offset = None
        else:
            # too close to the last node: express the detection in that node's frame
            offset = geo.relative(tg.last_raw, raw)
            self.stats["transported_detections"] += len(accepted)
        for a in accepted:
            sid = a.semantic_id
            lm = tg.landmarks.get(sid)
            if lm is None:
                lm = g.add_landmark_node(self.main.nodes[self.registry[sid]].estimate, sid)
                tg.landmarks[sid] = lm
            meas = a.measurement
            if offset is not None:
                meas = geo.compose(offset, meas) if isinstance(meas, Pose) else geo.transform_point(offset, meas)
            info = self._det_info if a.detection.information is None else a.detection.information
            edge = g.add_detection_edge(tg.last_node, lm, meas, info)
            tg.support[sid] += 1
            tg.raw_edges.append((sid, tg.last_raw, meas, edge.information))

    def compress_temporary(self):
        """Optimize the temporary graph and return one refined constraint per observed gate."""
        tg = self.temp
        if tg is None or not tg.has_detections:
            self.temp = None
            return []
        raw = self.raw
        kf_node = tg.last_node if tg.last_raw is raw else self._temp_node_at(raw, self.stamp)
        g = tg.graph
        out = []
        try:
            report = optimize(g, self.config.temp_solver)
            self.temp_reports.append(report)
            if report.reason == "stalled":
                raise np.linalg.LinAlgError("temporary graph optimization stalled")
            kf_est = g.nodes[kf_node].estimate
            for sid in sorted(tg.landmarks, key=lambda s: (str(type(s)), s)):
                lm = tg.landmarks[sid]
                est = g.nodes[lm].estimate
                if isinstance(est, Pose):
                    meas = geo.relative(kf_est, est)
                else:
                    meas = geo.transform_point(kf_est.inverse(), est)
                if self.config.compression == "marginal":
                    # gauge moved to the new keyframe: the marginal is then relative to it
                    info = marginal_information(g, lm, fixed={kf_node})
                    if not isinstance(est, Pose):
                        Rk = kf_est.rotation.matrix
                        info = Rk.T @ info @ Rk
                else:
                    info = sum(e.information for e in g.detection_edges() if e.landmark == lm)
                info = check_information(0.5 * (info + info.T), len(info))
                out.append(RefinedConstraint(sid, meas, info, tg.support[sid]))
        except _SOLVER_ERRORS as exc:
            self.stats["compression_fallbacks"] += 1
            self._interval["compression_fallback"] = str(exc)
            out = self._best_single(raw)
        self.temp = None
        return out

    def _best_single(self, raw_kf):
        """Lowest-residual raw detection per gate, moved to the keyframe by raw odometry."""
        tg = self.temp
        best = {}
        for sid, node_raw, meas, info in tg.raw_edges:
            est_node = geo.compose(self.correction, node_raw)
            gate = self.main.nodes[self.registry[sid]].estimate
            if isinstance(meas, Pose):
                r = geo.log(geo.relative(meas, geo.relative(est_node, gate)))
            else:
                r = geo.transform_point(est_node.inverse(), gate) - meas
            cost = float(r @ info @ r)
            if sid not in best or cost < best[sid][0]:
                best[sid] = (cost, node_raw, meas, info)
        out = []
        for sid in sorted(best, key=lambda s: (str(type(s)), s)):
            _, node_raw, meas, info = best[sid]
            off = geo.relative(raw_kf, node_raw)
            m = geo.compose(off, meas) if isinstance(meas, Pose) else geo.transform_point(off, meas)
            out.append(RefinedConstraint(sid, m, info, tg.support[sid]))
        return out

    # -- main graph --------------------------------------------------------------

    def promote_keyframe(self):
        """Add the current pose as a keyframe, fold in detections and re-optimize."""
        cfg = self.config
        raw, stamp = self.raw, self.stamp
        prev = self.keyframe
        temp_counts = self.temp.graph.counts() if self.temp is not None else None

        node = self.main.add_pose_node(geo.compose(self.correction, raw), stamp=stamp)
        step = geo.relative(prev.raw, raw)
        self.main.add_odometry_edge(prev.node, node, step,
                                    cfg.odometry_matrix(np.linalg.norm(step.translation)))
        added = 0
        for rc in self.compress_temporary():
            self.main.add_detection_edge(node, self.registry[rc.semantic_id], rc.measurement, rc.information)
            added += 1

        report = None
        try:
            report = optimize(self.main, cfg.main_solver)
            self.main_reports.append(report)
            self.correction = geo.compose(self.main.nodes[node].estimate, raw.inverse())
        except _SOLVER_ERRORS as exc:
            self.stats["main_solver_failures"] += 1
            self._interval["main_solver_error"] = str(exc)

        self.keyframe = _Keyframe(node, raw, stamp)
        self._pending = None
        self._reset_temp()
        self.stats["keyframes"] += 1
        self._record(stamp, node, added, temp_counts, report)
        return report

    def _record(self, stamp, node, added, temp_counts, report):
        rec = {
            "stamp": stamp,
            "keyframe": node,
            "detection_edges_added": added,
            "main": self.main.counts(),
            "temp": temp_counts,
            "opt": report.to_dict() if report is not None else None,
            "temp_opt": (self.temp_reports[-1].to_dict()
                         if self.temp_reports and added else None),
            "correction_norm": float(np.linalg.norm(self.correction.translation)),
            "association": dict(self._interval),
        }
        self.diagnostics.append(rec)
        self._interval = Counter()

    # -- summaries ---------------------------------------------------------------

    @property
    def n_keyframes(self):
        return len(self.main.pose_nodes())

    def main_counts(self):
        return self.main.counts()

    def opt_times_ms(self):
        return [r.wall_time_ms for r in self.main_reports]


def replay(manager: DualGraphManager, odometry, detections):
    """Feed stamped streams through ``manager`` in global stamp order.

    ``odometry`` is a :class:`~dualgraph.trajectory.Trajectory`; ``detections``
    a list of ``(stamp, batch)``.  Odometry goes first when stamps tie.
    Returns the corrected poses, one per odometry sample.
    """
    corrected = []
    j = 0
    n_det = len(detections)
    for i in range(len(odometry)):
        t = float(odometry.stamps[i])
        while j < n_det and detections[j][0] < t:
            manager.process_detections(*detections[j])
            j += 1
        corrected.append(manager.process_odometry(t, odometry.pose(i)))
        while j < n_det and detections[j][0] == t:
            manager.process_detections(*detections[j])
            j += 1
    while j < n_det:
        manager.process_detections(*detections[j])
        j += 1
    manager.finish()
    return corrected
