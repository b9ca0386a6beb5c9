from __future__ import annotations

import numpy as np

from .geometry import Pose


class Trajectory:
    """Stamped poses stored as arrays (``stamps``, ``positions``, ``quats``)."""

    def __init__(self, stamps, positions, quats):
        self.stamps = np.asarray(stamps, dtype=float).reshape(-1)
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        self.quats = np.asarray(quats, dtype=float).reshape(-1, 4)
        if not (len(self.stamps) == len(self.positions) == len(self.quats)):
            raise ValueError("stamps, positions and quats differ in length")
        if len(self.stamps) > 1 and np.any(np.diff(self.stamps) <= 0):
            raise ValueError("trajectory stamps must be strictly increasing")

    @classmethod
    def from_poses(cls, stamps, poses):
        poses = list(poses)
        if not poses:
            return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)))
        return cls(stamps, [p.translation for p in poses], [p.quat for p in poses])

    def __len__(self):
        return len(self.stamps)

    def pose(self, i) -> Pose:
        return Pose.from_array(np.concatenate([self.positions[i], self.quats[i]]))

    def poses(self):
        return [self.pose(i) for i in range(len(self))]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Trajectory(self.stamps[idx], self.positions[idx], self.quats[idx])

    def nearest(self, stamp) -> int:
        i = int(np.searchsorted(self.stamps, stamp))
        if i == 0:
            return 0
        if i == len(self.stamps):
            return i - 1
        return i if self.stamps[i] - stamp < stamp - self.stamps[i - 1] else i - 1

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (np.array_equal(self.stamps, other.stamps)
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.quats, other.quats))

    __hash__ = None

    def __repr__(self):
        span = f"{self.stamps[0]:.3f}..{self.stamps[-1]:.3f}" if len(self) else "empty"
        return f"Trajectory(n={len(self)}, t={span})"
