"""Estimator-style wrapper around the backend.

``fit`` takes the gate map, ``transform`` replays ``(odometry, detections)``
and returns the corrected trajectory, ``score`` is the negative ATE against
ground truth.
"""
from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .association import AssociationConfig
from .evaluation import ate
from .manager import DualGraphConfig, DualGraphManager, replay
from .solver import SolverConfig
from .trajectory import Trajectory
from .validation import check_detections, check_gate_map, check_trajectory


class DualGraphLocalizer(BaseEstimator):
    def __init__(self, d_main=2.0, d_temp=0.1, single_graph_mode=False, landmark_kind="pose",
                 compression="marginal", main_iterations=15, temp_iterations=10,
                 max_match_distance=1.5, max_yaw_error=0.6, allow_reverse=True):
        self.d_main = d_main
        self.d_temp = d_temp
        self.single_graph_mode = single_graph_mode
        self.landmark_kind = landmark_kind
        self.compression = compression
        self.main_iterations = main_iterations
        self.temp_iterations = temp_iterations
        self.max_match_distance = max_match_distance
        self.max_yaw_error = max_yaw_error
        self.allow_reverse = allow_reverse

    def _make_config(self):
        return DualGraphConfig(
            d_main=self.d_main, d_temp=self.d_temp, single_graph_mode=self.single_graph_mode,
            landmark_kind=self.landmark_kind, compression=self.compression,
            main_solver=SolverConfig(max_iterations=self.main_iterations),
            temp_solver=SolverConfig(max_iterations=self.temp_iterations),
            association=AssociationConfig(self.max_match_distance, self.max_yaw_error, self.allow_reverse),
        )

    def fit(self, gates, y=None):
        """Validate parameters and store the gate map."""
        self.config_ = self._make_config()
        self.gates_ = check_gate_map(gates)
        self.n_gates_ = len(self.gates_)
        return self

    def _split(self, X):
        if hasattr(X, "odometry") and hasattr(X, "detections"):
            return X.odometry, X.detections
        odometry, detections = X
        return odometry, detections

    def transform(self, X) -> Trajectory:
        """Corrected trajectory for ``X = (odometry, detections)``.

        The manager of the last call is kept as ``manager_`` for inspection.
        """
        check_is_fitted(self, "gates_")
        odometry, detections = self._split(X)
        odometry = check_trajectory(odometry, "odometry")
        detections = check_detections(detections)
        self.manager_ = DualGraphManager(self.config_, self.gates_)
        poses = replay(self.manager_, odometry, detections)
        return Trajectory.from_poses(odometry.stamps, poses)

    def fit_transform(self, X, y=None, gates=None):
        if gates is None:
            gates = getattr(X, "gates", None)
        if gates is None:
            raise ValueError("fit_transform needs a gate map (pass gates= or a run with .gates)")
        return self.fit(gates).transform(X)

    def score(self, X, y):
        """Negative translational ATE (m) of the corrected trajectory against ``y``."""
        est = self.transform(X)
        return -ate(est, check_trajectory(y, "ground truth"))[0]
