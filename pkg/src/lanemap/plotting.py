"""Figure rendering: bird's-eye map plots and metric charts, written to
files next to the delimited reports (no interactive UI)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .spline import CatmullRomSpline


def plot_map_bev(map_landmarks, out_path, gt_lanes=None, title="lane map (BEV)"):
    """Bird's-eye view of spline samples and control points, with optional
    ground-truth centerlines.

    ``map_landmarks`` is a list of dicts with ``control_points`` (the map
    export schema) or (id, category, ctrl, ...) snapshot tuples.
    """
    fig, ax = plt.subplots(figsize=(10, 6))
    if gt_lanes is not None:
        for lane in gt_lanes:
            pts = np.asarray(lane.points)
            ax.plot(pts[:, 0], pts[:, 1], color="0.75", lw=1.0, ls="--", zorder=1)
    cmap = plt.get_cmap("tab10")
    for i, lm in enumerate(map_landmarks):
        if isinstance(lm, dict):
            ctrl = np.asarray(lm["control_points"], dtype=float)
            lane_id = lm["id"]
        else:
            lane_id, _, ctrl = lm[0], lm[1], np.asarray(lm[2], dtype=float)
        color = cmap(i % 10)
        if len(ctrl) >= 4:
            samples = CatmullRomSpline(ctrl).sample(0.5)
            ax.plot(samples[:, 0], samples[:, 1], color=color, lw=1.5, zorder=2,
                    label=f"lane {lane_id}")
        ax.scatter(ctrl[:, 0], ctrl[:, 1], color="red", s=12, zorder=3)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title)
    ax.set_aspect("equal", adjustable="datalim")
    if len(map_landmarks) <= 10:
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_rpe(report, out_path):
    """Grouped bars: odometry vs updated rotation/translation RPE."""
    distances = [d for d in report.distances if d in report.odometry]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    width = 0.35
    xs = np.arange(len(distances))
    for ax, key, unit in ((axes[0], 0, "rotation [deg]"), (axes[1], 1, "translation [m]")):
        odo = [report.odometry[d][key] for d in distances]
        upd = [report.updated[d][key] for d in distances]
        ax.bar(xs - width / 2, odo, width, label="odometry")
        ax.bar(xs + width / 2, upd, width, label="updated")
        ax.set_xticks(xs)
        ax.set_xticklabels([f"{d:.0f} m" for d in distances])
        ax.set_ylabel(unit)
        ax.legend(fontsize=8)
    fig.suptitle("relative pose error")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_map_quality(reports_by_dropout, out_path):
    """F1/recall vs dropout for the pipeline map and the single-frame
    baseline.

    ``reports_by_dropout``: {dropout: {"map": report, "single": report}}.
    """
    dropouts = sorted(reports_by_dropout)
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, metric in zip(axes, ("f1", "recall")):
        ax.plot(
            dropouts,
            [getattr(reports_by_dropout[p]["map"], metric) for p in dropouts],
            marker="o",
            label="pipeline map",
        )
        ax.plot(
            dropouts,
            [getattr(reports_by_dropout[p]["single"], metric) for p in dropouts],
            marker="s",
            label="single frame",
        )
        ax.set_xlabel("lane dropout probability")
        ax.set_ylabel(metric)
        ax.set_ylim(0.0, 1.05)
        ax.legend(fontsize=8)
    fig.suptitle("map quality vs detection dropout")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_association(rows, out_path):
    """Bar chart of F1 per association method row (method, metrics)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    names = [r[0] for r in rows]
    f1s = [r[1].f1 for r in rows]
    ax.bar(names, f1s)
    ax.set_ylabel("F1")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("lane association")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
