"""File formats and experiment configuration.

* odometry JSONL, one record per line: ``{"t": s, "p": [x, y, z], "q": [qx, qy, qz, qw]}``
* detections JSONL: ``{"t": s, "dets": [{"p": [...], "q": [...], "info": [[...]]}]}``
  (``q`` absent for point detections, ``info`` optional)
* gates JSON: ``[{"id": int, "p": [...], "q": [...]}]``
* trajectories: TUM text, ``t x y z qx qy qz qw``; ``# key: value`` header lines

Floats are written with ``repr`` so that parse -> write reproduces the bytes.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .association import AssociationConfig, RawDetection
from .exceptions import ConfigError, StreamFormatError
from .geometry import Pose, Rotation
from .manager import DualGraphConfig
from .simulator import NoiseModel, SimRun, TrackSpec
from .solver import SolverConfig
from .trajectory import Trajectory

ODOMETRY_FILE = "odometry.jsonl"
DETECTIONS_FILE = "detections.jsonl"
GATES_FILE = "gates.json"
GROUND_TRUTH_FILE = "ground_truth.tum"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _floats(values, n, path, lineno, what):
    if not isinstance(values, list) or len(values) != n:
        raise StreamFormatError(path, lineno, f"{what} must be a list of {n} numbers")
    try:
        out = [float(v) for v in values]
    except (TypeError, ValueError):
        raise StreamFormatError(path, lineno, f"{what} has non-numeric entries") from None
    if not all(math.isfinite(v) for v in out):
        raise StreamFormatError(path, lineno, f"{what} has non-finite entries")
    return out


def _pose(rec, path, lineno):
    p = _floats(rec.get("p"), 3, path, lineno, "p")
    q = _floats(rec.get("q"), 4, path, lineno, "q")
    try:
        return Pose(Rotation(tuple(q)), p)
    except ValueError as exc:
        raise StreamFormatError(path, lineno, str(exc)) from None


def _dump(obj):
    return json.dumps(obj, separators=(", ", ": "))


def _json_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StreamFormatError(path, lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise StreamFormatError(path, lineno, "record must be a JSON object")
            yield lineno, rec


def _stamp(rec, path, lineno, last):
    t = rec.get("t")
    if isinstance(t, bool) or not isinstance(t, (int, float)) or not math.isfinite(t):
        raise StreamFormatError(path, lineno, "missing or invalid stamp 't'")
    t = float(t)
    if last is not None and not t > last:
        raise StreamFormatError(path, lineno, f"stamp {t!r} is not after {last!r}")
    return t


# ---------------------------------------------------------------------------
# streams
# ---------------------------------------------------------------------------

def write_odometry(path, traj: Trajectory):
    with open(path, "w", encoding="utf-8") as fh:
        for t, p, q in zip(traj.stamps.tolist(), traj.positions.tolist(), traj.quats.tolist()):
            fh.write(_dump({"t": t, "p": p, "q": q}) + "\n")


def read_odometry(path) -> Trajectory:
    stamps, poses = [], []
    last = None
    for lineno, rec in _json_lines(path):
        last = _stamp(rec, path, lineno, last)
        stamps.append(last)
        poses.append(_pose(rec, path, lineno))
    if not poses:
        raise StreamFormatError(path, 0, "no odometry records")
    return Trajectory.from_poses(stamps, poses)


def _det_record(det: RawDetection):
    m = det.measurement
    if isinstance(m, Pose):
        rec = {"p": m.translation.tolist(), "q": list(m.quat)}
    else:
        rec = {"p": np.asarray(m).tolist()}
    if det.information is not None:
        rec["info"] = np.asarray(det.information).tolist()
    return rec


def write_detections(path, stream):
    with open(path, "w", encoding="utf-8") as fh:
        for t, batch in stream:
            fh.write(_dump({"t": float(t), "dets": [_det_record(d) for d in batch]}) + "\n")


def read_detections(path):
    out = []
    last = None
    for lineno, rec in _json_lines(path):
        last = _stamp(rec, path, lineno, last)
        dets = rec.get("dets")
        if not isinstance(dets, list):
            raise StreamFormatError(path, lineno, "'dets' must be a list")
        batch = []
        for d in dets:
            if not isinstance(d, dict):
                raise StreamFormatError(path, lineno, "detection must be an object")
            if "q" in d:
                meas = _pose(d, path, lineno)
                dim = 6
            else:
                meas = np.array(_floats(d.get("p"), 3, path, lineno, "p"))
                dim = 3
            info = None
            if "info" in d:
                info = np.array(d["info"], dtype=float) if isinstance(d["info"], list) else None
                if info is None or info.shape != (dim, dim):
                    raise StreamFormatError(path, lineno, f"info must be a {dim}x{dim} matrix")
            batch.append(RawDetection(meas, info, last))
        out.append((last, batch))
    return out


def write_gates(path, gates):
    recs = [{"id": sid, "p": g.translation.tolist(), "q": list(g.quat)} for sid, g in gates]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(recs, indent=1) + "\n")


def read_gates(path):
    try:
        with open(path, encoding="utf-8") as fh:
            recs = json.load(fh)
    except json.JSONDecodeError as exc:
        raise StreamFormatError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(recs, list) or not recs:
        raise StreamFormatError(path, 1, "gates file must hold a non-empty list")
    out, seen = [], set()
    for k, rec in enumerate(recs):
        if not isinstance(rec, dict) or "id" not in rec:
            raise StreamFormatError(path, 1, f"gate #{k} lacks an id")
        sid = rec["id"]
        if sid in seen:
            raise StreamFormatError(path, 1, f"duplicate gate id {sid!r}")
        seen.add(sid)
        out.append((sid, _pose(rec, path, 1)))
    return out


def write_tum(path, traj: Trajectory, header=None):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}: {value}\n")
        for t, p, q in zip(traj.stamps.tolist(), traj.positions.tolist(), traj.quats.tolist()):
            fh.write(" ".join(repr(v) for v in [t, *p, *q]) + "\n")


def read_tum(path):
    """Return ``(trajectory, header)``."""
    rows, header = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                key, sep, value = s[1:].partition(":")
                if sep:
                    header[key.strip()] = value.strip()
                continue
            parts = s.split()
            if len(parts) != 8:
                raise StreamFormatError(path, lineno, f"expected 8 columns, got {len(parts)}")
            try:
                vals = [float(x) for x in parts]
            except ValueError:
                raise StreamFormatError(path, lineno, "non-numeric column") from None
            if rows and not vals[0] > rows[-1][0]:
                raise StreamFormatError(path, lineno, "stamps must increase")
            rows.append(vals)
    if not rows:
        raise StreamFormatError(path, 0, "empty trajectory")
    a = np.array(rows)
    return Trajectory(a[:, 0], a[:, 1:4], a[:, 4:8]), header


# ---------------------------------------------------------------------------
# simulated runs on disk
# ---------------------------------------------------------------------------

def save_sim(directory, sim: SimRun):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_odometry(d / ODOMETRY_FILE, sim.odometry)
    write_detections(d / DETECTIONS_FILE, sim.detections)
    write_gates(d / GATES_FILE, sim.gates)
    laps = " ".join(repr(float(t)) for t in sim.lap_stamps)
    write_tum(d / GROUND_TRUTH_FILE, sim.ground_truth, {"laps": laps, "seed": sim.noise.seed})
    return d


@dataclass
class RunInputs:
    gates: list
    odometry: Trajectory
    detections: list
    ground_truth: Trajectory | None = None
    lap_stamps: list | None = None
    seed: int | None = None


def load_run(directory) -> RunInputs:
    d = Path(directory)
    for name in (ODOMETRY_FILE, DETECTIONS_FILE, GATES_FILE):
        if not (d / name).is_file():
            raise FileNotFoundError(f"{d / name} not found")
    inputs = RunInputs(read_gates(d / GATES_FILE), read_odometry(d / ODOMETRY_FILE),
                       read_detections(d / DETECTIONS_FILE))
    if (d / GROUND_TRUTH_FILE).is_file():
        gt, header = read_tum(d / GROUND_TRUTH_FILE)
        inputs.ground_truth = gt
        if "laps" in header:
            inputs.lap_stamps = [float(x) for x in header["laps"].split()]
        if "seed" in header:
            inputs.seed = int(header["seed"])
    return inputs


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    track: TrackSpec = field(default_factory=TrackSpec)
    noise: NoiseModel = field(default_factory=NoiseModel)
    graph: DualGraphConfig = field(default_factory=DualGraphConfig)
    output_dir: str = "runs"
    seeds: tuple = (0,)
    workers: int = 0  # 0: one per available core

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seed list is empty")
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.workers < 0:
            raise ConfigError("workers must be >= 0")

    def n_workers(self):
        return self.workers or os.cpu_count() or 1


# section -> (object path within ExperimentConfig)
_SECTIONS = {
    "track": ("track",),
    "noise": ("noise",),
    "graph": ("graph",),
    "main_solver": ("graph", "main_solver"),
    "temp_solver": ("graph", "temp_solver"),
    "association": ("graph", "association"),
    "experiment": (),
}


def _parse_seeds(text):
    out = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1) if not part.startswith("-") else (part, part)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _convert(raw, default, key):
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple) or default is None:
            if text.lower() in ("", "none"):
                return None
            return tuple(float(x) for x in text.split(","))
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {key}") from None


def _flatten(cfg: ExperimentConfig):
    """``{section: {key: value}}`` of plain (non-nested) fields."""
    out = {}
    for section, path in _SECTIONS.items():
        obj = cfg
        for name in path:
            obj = getattr(obj, name)
        values = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if dataclasses.is_dataclass(v):
                continue
            values[f.name] = v
        out[section] = values
    return out


def _build(values):
    g = dict(values["graph"])
    g["main_solver"] = SolverConfig(**values["main_solver"])
    g["temp_solver"] = SolverConfig(**values["temp_solver"])
    g["association"] = AssociationConfig(**values["association"])
    exp = dict(values["experiment"])
    return ExperimentConfig(track=TrackSpec(**values["track"]), noise=NoiseModel(**values["noise"]),
                            graph=DualGraphConfig(**g), **exp)


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read an INI-style file (sections as in :func:`dump_config`) plus ``section.key=value`` overrides."""
    defaults = _flatten(ExperimentConfig())
    values = {s: dict(v) for s, v in defaults.items()}
    items = []
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                items.append((section, key, raw))
    for item in overrides:
        name, sep, raw = str(item).partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        items.append((section.strip(), key.strip(), raw))
    for section, key, raw in items:
        if section not in values:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in values[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        if section == "experiment" and key == "seeds":
            values[section][key] = _parse_seeds(raw)
        else:
            values[section][key] = _convert(raw, defaults[section][key], f"{section}.{key}")
    try:
        return _build(values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, values in _flatten(cfg).items():
        lines.append(f"[{section}]")
        for key, v in values.items():
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)
