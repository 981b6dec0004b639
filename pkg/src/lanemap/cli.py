"""Command-line interface.

Subcommands: simulate, run, eval-assoc, eval-pose, eval-map, export, plot.
Evaluation commands write delimited (CSV) reports and render matplotlib
figures alongside them when an output directory is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as lio
from .config import PipelineConfig
from .pipeline import run_pipeline
from .protocols import run_association_protocol, run_dropout_sweep, run_pose_protocol
from .simulate import ScenarioConfig, simulate_sequence

logger = logging.getLogger("lanemap")


def _load_pipeline_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return PipelineConfig.from_json(Path(path).read_text())


def _cmd_simulate(args) -> int:
    scenario = ScenarioConfig.from_dict(json.loads(Path(args.config).read_text()))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lanes, frames = simulate_sequence(scenario)
    lio.write_frames(out / "frames.jsonl", frames)
    lio.write_ground_truth(out / "truth.json", lanes, [f.true_pose for f in frames])
    print(f"wrote {len(frames)} frames, {len(lanes)} lanes to {out}")
    return 0


def _cmd_run(args) -> int:
    config = _load_pipeline_config(args.config)
    frames = lio.read_frames(args.frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_pipeline(frames, config)
    export = lio.map_export_from_state(
        result.map_state, config.config_hash(), len(result.frame_indices)
    )
    lio.write_map_export(out / "map.json", export)
    lio.write_trajectory_csv(
        out / "trajectory.csv",
        result.frame_indices,
        result.odom_poses,
        result.refined_poses,
        result.true_poses if all(p is not None for p in result.true_poses) else None,
    )
    with open(out / "log.jsonl", "w") as handle:
        for event in result.events:
            handle.write(json.dumps(event, sort_keys=True) + "\n")
    n_cp = result.map_state.control_point_count()
    print(
        f"processed {len(result.frame_indices)} frames: "
        f"{len(result.map_state.landmarks)} landmarks, {n_cp} control points "
        f"({result.raw_point_count} raw detection points)"
    )
    return 0


def _cmd_eval_assoc(args) -> int:
    config = _load_pipeline_config(args.config)
    frames = lio.read_frames(args.frames)
    rows = []
    full = run_association_protocol(
        frames,
        config,
        stride=args.stride,
        sigma_xy=args.sigma_xy,
        sigma_yaw_deg=args.sigma_yaw,
        seed=args.seed,
        use_consistency=True,
    )
    rows.append(("full", full))
    ablation = run_association_protocol(
        frames,
        config,
        stride=args.stride,
        sigma_xy=args.sigma_xy,
        sigma_yaw_deg=args.sigma_yaw,
        seed=args.seed,
        use_consistency=False,
    )
    rows.append(("no-consistency", ablation))

    print(f"{'method':<16}{'F1':>8}{'Precision(%)':>14}{'Recall(%)':>12}{'Time(ms)':>10}")
    for name, m in rows:
        print(
            f"{name:<16}{m.f1:>8.3f}{100 * m.precision:>14.2f}"
            f"{100 * m.recall:>12.2f}{m.mean_time_ms:>10.3f}"
        )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "association.csv", "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["method", "f1", "precision", "recall", "time_ms", "tp", "fp", "fn"])
            for name, m in rows:
                writer.writerow(
                    [name, f"{m.f1:.6f}", f"{m.precision:.6f}", f"{m.recall:.6f}",
                     f"{m.mean_time_ms:.3f}", m.true_positives, m.false_positives, m.false_negatives]
                )
        from .plotting import plot_association

        plot_association(rows, out / "association.png")
    return 0


def _cmd_eval_pose(args) -> int:
    config = _load_pipeline_config(args.config)
    frames = lio.read_frames(args.frames)
    _, true_poses = lio.read_ground_truth(args.truth)
    _, report = run_pose_protocol(frames, true_poses, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"{'distance':>10}{'rot upd/odo (deg)':>22}{'trans upd/odo (m)':>22}")
    with open(out / "rpe.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["distance_m", "rot_updated_deg", "rot_odometry_deg", "trans_updated_m", "trans_odometry_m"]
        )
        for d in report.distances:
            if d not in report.odometry:
                continue
            ro, to = report.odometry[d]
            ru, tu = report.updated[d]
            print(f"{d:>10.0f}{ru:>11.3f}/{ro:<10.3f}{tu:>11.3f}/{to:<10.3f}")
            writer.writerow([d, f"{ru:.6f}", f"{ro:.6f}", f"{tu:.6f}", f"{to:.6f}"])
    from .plotting import plot_rpe

    plot_rpe(report, out / "rpe.png")
    return 0


def _cmd_eval_map(args) -> int:
    from .evaluation import score_map

    gt_lanes, true_poses = lio.read_ground_truth(args.truth)
    dropouts = [float(x) for x in args.dropout.split(",")] if args.dropout else [0.0]

    if args.frames:
        config = _load_pipeline_config(args.config)
        frames = lio.read_frames(args.frames)
        sweep = run_dropout_sweep(frames, gt_lanes, config, dropouts, seed=args.seed)
        rows = []
        for p in sorted(sweep):
            for kind in ("single", "map"):
                r = sweep[p][kind]
                rows.append((kind, p, r))
    elif args.map:
        if args.dropout:
            print(
                "error: the dropout sweep re-runs the pipeline and needs --frames",
                file=sys.stderr,
            )
            return 2
        from .lanes import LaneCategory

        export = lio.read_map_export(args.map)
        snapshot = [
            (lm["id"], LaneCategory(lm["category"]), np.asarray(lm["control_points"]), 0, 0)
            for lm in export.landmarks
        ]
        # final-map scoring (non-causal): the same snapshot at every frame
        report = score_map([snapshot] * len(true_poses), true_poses, gt_lanes, label="final-map")
        rows = [("final-map", 0.0, report)]
    else:
        print("error: eval-map needs --frames (causal) or --map (final map)", file=sys.stderr)
        return 2

    print(f"{'method':<14}{'dropout':>8}{'F1':>8}{'Recall':>8}{'Precision':>11}")
    for kind, p, r in rows:
        print(f"{kind:<14}{p:>8.1f}{r.f1:>8.3f}{r.recall:>8.3f}{r.precision:>11.3f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "map_quality.csv", "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["method", "dropout", "f1", "recall", "precision", "tp", "n_map", "n_gt"])
            for kind, p, r in rows:
                writer.writerow(
                    [kind, p, f"{r.f1:.6f}", f"{r.recall:.6f}", f"{r.precision:.6f}", r.tp, r.n_map, r.n_gt]
                )
        if args.frames:
            from .plotting import plot_map_quality

            plot_map_quality(sweep, out / "map_quality.png")
    return 0


def _cmd_export(args) -> int:
    export = lio.read_map_export(args.map)
    out_path = args.out
    if args.format == "map-json":
        if out_path:
            lio.write_map_export(out_path, export)
        else:
            lio.write_map_export("/dev/stdout", export)
    else:
        if out_path:
            lio.write_map_csv(out_path, export)
        else:
            lio.write_map_csv("/dev/stdout", export)
    return 0


def _cmd_plot(args) -> int:
    from .plotting import plot_map_bev

    export = lio.read_map_export(args.map)
    gt_lanes = None
    if args.truth:
        gt_lanes, _ = lio.read_ground_truth(args.truth)
    plot_map_bev(export.landmarks, args.out, gt_lanes=gt_lanes)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanemap", description="Online lane mapping on frame streams."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic frame stream + ground truth")
    p.add_argument("--config", required=True, help="scenario config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("run", help="run the mapping pipeline over a frame stream")
    p.add_argument("--config", help="pipeline config JSON (defaults when omitted)")
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval-assoc", help="pairwise association protocol")
    p.add_argument("--frames", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", help="directory for CSV/figure output")
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--sigma-xy", type=float, default=3.0)
    p.add_argument("--sigma-yaw", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval_assoc)

    p = sub.add_parser("eval-pose", help="relative pose error, odometry vs updated")
    p.add_argument("--frames", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.set_defaults(func=_cmd_eval_pose)

    p = sub.add_parser("eval-map", help="map quality against ground truth")
    p.add_argument("--map", help="map export JSON (final-map scoring)")
    p.add_argument("--frames", help="frame stream (causal scoring + dropout sweep)")
    p.add_argument("--truth", required=True)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--dropout", help="comma list, e.g. 0,0.4,0.6,0.8")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for CSV/figure output")
    p.set_defaults(func=_cmd_eval_map)

    p = sub.add_parser("export", help="re-emit a map export")
    p.add_argument("--map", required=True)
    p.add_argument("--format", choices=["map-json", "csv"], default="map-json")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("plot", help="BEV plot of the map (and optional ground truth)")
    p.add_argument("--map", required=True)
    p.add_argument("--truth")
    p.add_argument("--out", required=True, help="figure path (svg/png by extension)")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
