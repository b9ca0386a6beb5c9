"""Command line entry point: ``dualgraph {simulate,run,ablate,plot-data,dump-graph}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as dio
from .evaluation import align_se3, transform_trajectory
from .exceptions import ConfigError, DualGraphError, StreamFormatError
from .experiment import run_streams
from .graph import dump_graph
from .simulator import simulate

log = logging.getLogger("dualgraph")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3, 4

# the six variants of the classic dual/single ablation
DEFAULT_GRID = "dual:2.0:0.5,dual:2.0:0.1,dual:0.5:0.1,single:2.0,single:0.5,single:0.1"
GATE_WIDTH = 1.5


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def _common(p):
    p.add_argument("-c", "--config", help="INI configuration file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one configuration value (repeatable)")
    p.add_argument("--seeds", help="seed list, e.g. '0-19' or '1,4,7'")
    p.add_argument("--single-graph", action="store_true", help="run the single-graph baseline")
    p.add_argument("--d-main", type=float, help="keyframe distance (m)")
    p.add_argument("--d-temp", type=float, help="temporary node distance (m)")
    p.add_argument("--shape", choices=["ellipse", "lemniscate"], help="track shape")


def build_parser():
    parser = _Parser(prog="dualgraph", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write simulated input streams, one directory per seed")
    _common(p)
    p.add_argument("-o", "--output", help="output directory (default: experiment.output_dir)")

    p = sub.add_parser("run", help="replay streams through the backend")
    _common(p)
    p.add_argument("run_dir", help="directory holding odometry/detections/gates files")
    p.add_argument("-o", "--output", help="where to write results (default: run_dir)")

    p = sub.add_parser("ablate", help="dual vs single-graph comparison over seeds")
    _common(p)
    p.add_argument("--grid", default=DEFAULT_GRID,
                   help="comma separated variants mode:d_main[:d_temp] (default: %(default)s)")
    p.add_argument("--workers", type=int, help="worker processes (default: one per core)")
    p.add_argument("-o", "--output", help="output directory")

    p = sub.add_parser("plot-data", help="XY series of a finished run as CSV")
    p.add_argument("run_dir")
    p.add_argument("-o", "--output", help="output directory (default: run_dir)")
    p.add_argument("--no-align", dest="align", action="store_false",
                   help="keep estimates in the map frame instead of aligning them to ground truth")

    p = sub.add_parser("dump-graph", help="replay a run and write the final main graph as text")
    _common(p)
    p.add_argument("run_dir")
    p.add_argument("-o", "--output", help="output file (default: stdout)")
    return parser


def _config(args):
    overrides = list(args.set)
    if getattr(args, "seeds", None):
        overrides.append(f"experiment.seeds={args.seeds}")
    if getattr(args, "single_graph", False):
        overrides.append("graph.single_graph_mode=true")
    if getattr(args, "d_main", None) is not None:
        overrides.append(f"graph.d_main={args.d_main}")
    if getattr(args, "d_temp", None) is not None:
        overrides.append(f"graph.d_temp={args.d_temp}")
    if getattr(args, "shape", None):
        overrides.append(f"track.shape={args.shape}")
    if getattr(args, "workers", None) is not None:
        overrides.append(f"experiment.workers={args.workers}")
    return dio.load_config(getattr(args, "config", None), overrides)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    cfg = _config(args)
    out = Path(args.output or cfg.output_dir)
    for seed in cfg.seeds:
        sim = simulate(cfg.track, dataclasses.replace(cfg.noise, seed=seed))
        d = dio.save_sim(out / f"seed_{seed:03d}", sim)
        log.info("wrote %s", d)
        print(d)
    return EXIT_OK


def _write_run(out, result, inputs):
    out.mkdir(parents=True, exist_ok=True)
    dio.write_tum(out / "corrected.tum", result.corrected)
    dio.write_tum(out / "raw.tum", result.raw)
    with open(out / "diagnostics.jsonl", "w", encoding="utf-8") as fh:
        for rec in result.manager.diagnostics:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out / "metrics.json", "w", encoding="utf-8") as fh:
        fh.write(result.metrics.to_json(indent=1) + "\n")


def _replay(cfg, inputs):
    return run_streams(cfg.graph, inputs.gates, inputs.odometry, inputs.detections,
                       inputs.ground_truth, inputs.lap_stamps, inputs.seed, cfg.noise.det_range)


def cmd_run(args):
    cfg = _config(args)
    inputs = dio.load_run(args.run_dir)
    result = _replay(cfg, inputs)
    out = Path(args.output or args.run_dir)
    _write_run(out, result, inputs)
    m = result.metrics
    summary = {"keyframes": m.counts["keyframes"], "edges": m.counts["edges"],
               "opt_p95_ms": round(m.opt_p95_ms, 3)}
    if m.ate_trans is not None:
        summary.update(ate=round(m.ate_trans, 4), raw_ate=round(m.raw_ate_trans, 4))
    print(json.dumps(summary))
    return EXIT_OK


def parse_grid(text):
    variants = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        mode = parts[0].lower()
        if mode not in ("dual", "single") or len(parts) not in (2, 3):
            raise ConfigError(f"bad grid entry {item!r}; use dual:D_MAIN:D_TEMP or single:D_MAIN")
        try:
            d_main = float(parts[1])
            d_temp = float(parts[2]) if len(parts) == 3 else None
        except ValueError:
            raise ConfigError(f"bad number in grid entry {item!r}") from None
        if mode == "dual" and d_temp is None:
            raise ConfigError(f"dual variant {item!r} needs d_temp")
        variants.append((mode, d_main, d_temp))
    if not variants:
        raise ConfigError("ablation grid is empty")
    return variants


def _variant_config(graph_cfg, mode, d_main, d_temp):
    if mode == "single":
        # d_temp is unused by the baseline; keep it valid
        return dataclasses.replace(graph_cfg, single_graph_mode=True, d_main=d_main,
                                   d_temp=min(graph_cfg.d_temp, d_main))
    return dataclasses.replace(graph_cfg, single_graph_mode=False, d_main=d_main, d_temp=d_temp)


def _ablate_one(job):
    cfg, mode, d_main, d_temp, seed = job
    row = {"graph": mode, "d_main": d_main, "d_temp": d_temp if d_temp is not None else "",
           "seed": seed}
    try:
        sim = simulate(cfg.track, dataclasses.replace(cfg.noise, seed=seed))
        gcfg = _variant_config(cfg.graph, mode, d_main, d_temp)
        res = run_streams(gcfg, sim.gates, sim.odometry, sim.detections, sim.ground_truth,
                          sim.lap_stamps, seed, cfg.noise.det_range)
        m = res.metrics
        row.update(ate=m.ate_trans, ate_rot=m.ate_rot, raw_ate=m.raw_ate_trans,
                   nodes=m.counts["nodes"], edges=m.counts["edges"],
                   detection_edges=m.counts["detection_edges"], opt_p50_ms=m.opt_p50_ms,
                   opt_p95_ms=m.opt_p95_ms, error="")
    except (DualGraphError, ValueError, np.linalg.LinAlgError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


DETAIL_FIELDS = ["graph", "d_main", "d_temp", "seed", "ate", "ate_rot", "raw_ate", "nodes", "edges",
                 "detection_edges", "opt_p50_ms", "opt_p95_ms", "error"]
SUMMARY_FIELDS = ["graph", "d_main", "d_temp", "ate_median", "nodes", "edges", "opt_p95_ms",
                  "ate_mean", "ate_std", "runs", "failed"]


def summarize_ablation(variants, rows):
    out = []
    for mode, d_main, d_temp in variants:
        mine = [r for r in rows if r["graph"] == mode and r["d_main"] == d_main
                and r["d_temp"] == (d_temp if d_temp is not None else "")]
        ok = [r for r in mine if not r["error"]]
        ates = np.array([r["ate"] for r in ok], dtype=float)

        def med(key):
            return float(np.median([r[key] for r in ok])) if ok else math.nan
        out.append({
            "graph": mode, "d_main": d_main, "d_temp": d_temp if d_temp is not None else "",
            "ate_median": float(np.median(ates)) if ok else math.nan,
            "nodes": med("nodes"), "edges": med("edges"), "opt_p95_ms": med("opt_p95_ms"),
            "ate_mean": float(ates.mean()) if ok else math.nan,
            "ate_std": float(ates.std()) if ok else math.nan,
            "runs": len(ok), "failed": len(mine) - len(ok),
        })
    return out


def _write_csv(path, fields, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fields})


def cmd_ablate(args):
    variants = parse_grid(args.grid)
    cfg = _config(args)
    jobs = [(cfg, mode, dm, dt, seed) for mode, dm, dt in variants for seed in cfg.seeds]
    workers = min(cfg.n_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_ablate_one, jobs))
    else:
        rows = [_ablate_one(j) for j in jobs]
    out = Path(args.output or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize_ablation(variants, rows)
    _write_csv(out / "ablation_detail.csv", DETAIL_FIELDS, rows)
    _write_csv(out / "ablation_summary.csv", SUMMARY_FIELDS, summary)
    for r in summary:
        print(f"{r['graph']:6s} d_main={r['d_main']:<4} d_temp={r['d_temp']!s:<4} "
              f"ATE={r['ate_median']:.3f} nodes={r['nodes']:.0f} edges={r['edges']:.0f} "
              f"P95={r['opt_p95_ms']:.1f}ms")
    failed = sum(1 for r in rows if r["error"])
    if failed:
        log.warning("%d of %d runs failed; see ablation_detail.csv", failed, len(rows))
    return EXIT_OK if failed < len(rows) else EXIT_RUNTIME


def _gate_segment(gate):
    # gate drawn as a segment across the direction of travel
    yaw = gate.rotation.yaw()
    x, y, _ = gate.translation
    dx, dy = -math.sin(yaw) * GATE_WIDTH / 2, math.cos(yaw) * GATE_WIDTH / 2
    return x - dx, y - dy, x + dx, y + dy, yaw


def cmd_plot_data(args):
    run_dir = Path(args.run_dir)
    out = Path(args.output or run_dir)
    needed = [run_dir / "corrected.tum", run_dir / "raw.tum"]
    for p in needed:
        if not p.is_file():
            raise FileNotFoundError(f"{p} not found (run 'dualgraph run' first)")
    corrected, _ = dio.read_tum(needed[0])
    raw, _ = dio.read_tum(needed[1])
    gt = None
    if (run_dir / dio.GROUND_TRUTH_FILE).is_file():
        gt, _ = dio.read_tum(run_dir / dio.GROUND_TRUTH_FILE)
        if args.align:
            corrected = transform_trajectory(align_se3(corrected, gt), corrected)
            raw = transform_trajectory(align_se3(raw, gt), raw)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    series = [("corrected", corrected), ("raw", raw)] + ([("gt", gt)] if gt is not None else [])
    for name, traj in series:
        path = out / f"{name}_xy.csv"
        _write_csv(path, ["t", "x", "y"],
                   [{"t": t, "x": p[0], "y": p[1]} for t, p in zip(traj.stamps.tolist(), traj.positions.tolist())])
        written.append(path)
    # without ground truth (real logs) only the two estimates are compared
    if gt is not None and (run_dir / dio.GATES_FILE).is_file():
        rows = []
        for sid, g in dio.read_gates(run_dir / dio.GATES_FILE):
            x1, y1, x2, y2, yaw = _gate_segment(g)
            rows.append({"id": sid, "x": g.translation[0], "y": g.translation[1], "yaw": yaw,
                         "x1": x1, "y1": y1, "x2": x2, "y2": y2})
        path = out / "gates.csv"
        _write_csv(path, ["id", "x", "y", "yaw", "x1", "y1", "x2", "y2"], rows)
        written.append(path)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_dump_graph(args):
    cfg = _config(args)
    inputs = dio.load_run(args.run_dir)
    result = _replay(cfg, inputs)
    text = dump_graph(result.manager.main)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "ablate": cmd_ablate,
            "plot-data": cmd_plot_data, "dump-graph": cmd_dump_graph}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgError as exc:
        parser.print_usage(sys.stderr)
        print(f"dualgraph: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StreamFormatError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BrokenPipeError:
        # output consumer went away (e.g. piped into head)
        sys.stderr.close()
        return EXIT_OK
    except (DualGraphError, np.linalg.LinAlgError, ValueError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
