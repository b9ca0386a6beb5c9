"""Run the localization backend on a simulated or replayed run and score it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import MetricsReport, summarize
from .manager import DualGraphConfig, DualGraphManager, replay
from .simulator import SimRun
from .trajectory import Trajectory


@dataclass
class RunResult:
    corrected: Trajectory
    raw: Trajectory
    manager: DualGraphManager
    metrics: MetricsReport


def run_streams(config: DualGraphConfig, gates, odometry: Trajectory, detections,
                ground_truth=None, lap_stamps=None, seed=None, max_range=None) -> RunResult:
    manager = DualGraphManager(config, gates)
    corrected = Trajectory.from_poses(odometry.stamps, replay(manager, odometry, detections))
    metrics = summarize(manager, corrected, odometry, ground_truth, gates, lap_stamps, seed, max_range)
    return RunResult(corrected, odometry, manager, metrics)


def run_sim(sim: SimRun, config: DualGraphConfig | None = None) -> RunResult:
    return run_streams(config or DualGraphConfig(), sim.gates, sim.odometry, sim.detections,
                       sim.ground_truth, sim.lap_stamps, sim.noise.seed, sim.noise.det_range)


def last_gate_errors(sim: SimRun, result: RunResult):
    """Position error of corrected and raw estimates where the run last passes a gate.

    Errors are measured in the map frame against ground truth, without
    alignment.  Returns ``(corrected_error, raw_error, sample_index)``.
    """
    gt = sim.ground_truth
    start = np.searchsorted(gt.stamps, sim.lap_stamps[-2])
    best = None
    for _, gate in sim.gates:
        d = np.linalg.norm(gt.positions[start:] - gate.translation, axis=1)
        j = start + int(np.argmin(d))
        if best is None or gt.stamps[j] > gt.stamps[best]:
            best = j
    ci = result.corrected.nearest(gt.stamps[best])
    ri = result.raw.nearest(gt.stamps[best])
    c_err = float(np.linalg.norm(result.corrected.positions[ci] - gt.positions[best]))
    r_err = float(np.linalg.norm(result.raw.positions[ri] - gt.positions[best]))
    return c_err, r_err, int(best)


def thin_detections(detections, odometry: Trajectory, d_main: float):
    """Keep at most one detection per keyframe interval.

    Keyframe stamps follow the distance rule applied to the raw odometry.
    Within each interval the kept detection is the first one of the batch at
    the keyframe stamp itself, if any.
    """
    kf_stamps = keyframe_stamps(odometry, d_main)
    by_stamp = {t: batch for t, batch in detections}
    out = []
    for t in kf_stamps[1:]:
        batch = by_stamp.get(t)
        if batch:
            out.append((t, [batch[0]]))
    return out


def keyframe_stamps(odometry: Trajectory, d_main: float):
    stamps = [float(odometry.stamps[0])]
    ref = odometry.positions[0]
    for i in range(1, len(odometry)):
        if np.linalg.norm(odometry.positions[i] - ref) >= d_main:
            stamps.append(float(odometry.stamps[i]))
            ref = odometry.positions[i]
    return stamps
