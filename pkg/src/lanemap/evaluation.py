"""Metrics: association precision/recall/F1, relative pose error over fixed
path lengths, and per-frame map quality against ground-truth lanes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose, rotation_angle
from .spline import CatmullRomSpline

logger = logging.getLogger(__name__)

DEFAULT_RPE_DISTANCES = (10.0, 30.0, 50.0)
DEFAULT_MAP_RANGE = 50.0
DEFAULT_DIST_THRESH = 0.5
DEFAULT_VALID_RATIO = 0.75
_MAP_SAMPLE_SPACING = 0.5


def _f1(precision: float, recall: float) -> float:
    return 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass
class AssociationMetrics:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float
    mean_time_ms: float = 0.0

    @staticmethod
    def from_counts(tp: int, fp: int, fn: int, mean_time_ms: float = 0.0):
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        return AssociationMetrics(
            tp, fp, fn, precision, recall, _f1(precision, recall), mean_time_ms
        )


def score_association(predicted: set, true_pairs: set, mean_time_ms: float = 0.0):
    """Counting metrics for predicted matches against the oracle pair set."""
    predicted = set(predicted)
    true_pairs = set(true_pairs)
    tp = len(predicted & true_pairs)
    fp = len(predicted - true_pairs)
    fn = len(true_pairs - predicted)
    return AssociationMetrics.from_counts(tp, fp, fn, mean_time_ms)


@dataclass
class RpeReport:
    """Relative pose error per evaluation distance, for the raw odometry
    and the updated trajectory (rotation degrees, translation meters)."""

    distances: tuple
    odometry: dict  # distance -> (rot_deg, trans_m)
    updated: dict


def relative_pose_error(
    true_poses: list,
    estimated_poses: list,
    distances=DEFAULT_RPE_DISTANCES,
) -> dict:
    """Mean relative pose error at the given true path lengths.

    For every start frame, the end frame is the first whose accumulated
    true path length reaches the distance; the error is the pose delta
    between true and estimated relative motion.  Distances the sequence
    never reaches are omitted with a warning.
    """
    if len(true_poses) != len(estimated_poses):
        raise ValueError("trajectories must align by frame index")
    n = len(true_poses)
    steps = [
        np.linalg.norm(true_poses[i + 1].translation - true_poses[i].translation)
        for i in range(n - 1)
    ]
    cumulative = np.concatenate([[0.0], np.cumsum(steps)])

    out = {}
    for d in distances:
        rot_errors = []
        trans_errors = []
        for start in range(n):
            target = cumulative[start] + d
            end = int(np.searchsorted(cumulative, target))
            if end >= n:
                break
            true_rel = true_poses[start].inverse().compose(true_poses[end])
            est_rel = estimated_poses[start].inverse().compose(estimated_poses[end])
            error = true_rel.inverse().compose(est_rel)
            rot_errors.append(np.rad2deg(rotation_angle(error.rotation)))
            trans_errors.append(np.linalg.norm(error.translation))
        if not rot_errors:
            logger.warning("sequence too short for RPE distance %.0f m; omitted", d)
            continue
        out[float(d)] = (float(np.mean(rot_errors)), float(np.mean(trans_errors)))
    return out


def build_rpe_report(true_poses, odom_poses, updated_poses, distances=DEFAULT_RPE_DISTANCES):
    return RpeReport(
        distances=tuple(distances),
        odometry=relative_pose_error(true_poses, odom_poses, distances),
        updated=relative_pose_error(true_poses, updated_poses, distances),
    )


@dataclass
class MapQualityReport:
    """Per-frame and aggregate recall/precision/F1 of a lane map."""

    label: str
    per_frame_recall: list = field(default_factory=list)
    per_frame_precision: list = field(default_factory=list)
    tp: int = 0
    n_map: int = 0
    n_gt: int = 0

    @property
    def recall(self) -> float:
        return self.tp / self.n_gt if self.n_gt else 0.0

    @property
    def precision(self) -> float:
        return self.tp / self.n_map if self.n_map else 0.0

    @property
    def f1(self) -> float:
        return _f1(self.precision, self.recall)


def _clip_forward(points_body: np.ndarray, max_range: float) -> np.ndarray:
    mask = (points_body[:, 0] > 0.0) & (points_body[:, 0] <= max_range)
    return points_body[mask]


def score_lane_sets(
    map_lanes: list,
    gt_lanes: list,
    dist_thresh: float = DEFAULT_DIST_THRESH,
    valid_ratio: float = DEFAULT_VALID_RATIO,
    require_category: bool = True,
):
    """Core per-frame scoring: greedy maximum-overlap one-to-one matching
    of map lanes to ground-truth lanes, counting a map lane as a true
    positive when its valid points (nearest ground-truth point within the
    threshold) exceed the ratio of the matched lane's point count.

    Both inputs are lists of (category, points) with comparable sampling.
    Returns (tp, n_map, n_gt).
    """
    n_map = len(map_lanes)
    n_gt = len(gt_lanes)
    if n_map == 0 or n_gt == 0:
        return 0, n_map, n_gt

    trees = [cKDTree(points) for _, points in gt_lanes]
    overlaps = []
    for mi, (mcat, mpoints) in enumerate(map_lanes):
        for gi, (gcat, gpoints) in enumerate(gt_lanes):
            if require_category and mcat != gcat:
                continue
            nearest, _ = trees[gi].query(mpoints)
            count = int(np.sum(nearest < dist_thresh))
            if count > 0:
                overlaps.append((count, mi, gi))

    overlaps.sort(key=lambda item: (-item[0], item[1], item[2]))
    used_map = set()
    used_gt = set()
    tp = 0
    for count, mi, gi in overlaps:
        if mi in used_map or gi in used_gt:
            continue
        used_map.add(mi)
        used_gt.add(gi)
        if count > valid_ratio * len(gt_lanes[gi][1]):
            tp += 1
    return tp, n_map, n_gt


def _snapshot_lanes_in_window(snapshot, pose: Pose, max_range: float):
    """Sampled, window-clipped body-frame point sets of a map snapshot."""
    inverse = pose.inverse()
    lanes = []
    for _, category, ctrl, _, _ in snapshot:
        if len(ctrl) < 4:
            continue
        samples = CatmullRomSpline(ctrl).sample(_MAP_SAMPLE_SPACING)
        body = _clip_forward(inverse.transform(samples), max_range)
        if len(body) >= 2:
            lanes.append((category, body))
    return lanes


def _gt_lanes_in_window(gt_lanes, pose: Pose, max_range: float):
    inverse = pose.inverse()
    out = []
    for lane in gt_lanes:
        body = _clip_forward(inverse.transform(lane.points), max_range)
        body = body[::2]  # dense 0.25 m vertices -> 0.5 m sampling
        if len(body) >= 2:
            out.append((lane.category, body))
    return out


def score_map(
    snapshots: list,
    true_poses: list,
    gt_lanes: list,
    max_range: float = DEFAULT_MAP_RANGE,
    dist_thresh: float = DEFAULT_DIST_THRESH,
    valid_ratio: float = DEFAULT_VALID_RATIO,
    require_category: bool = True,
    label: str = "map",
) -> MapQualityReport:
    """Causal map quality: frame t is scored against the snapshot taken
    after processing frame t, clipped to the forward window of the true
    pose."""
    if len(snapshots) != len(true_poses):
        raise ValueError("need one map snapshot per frame")
    report = MapQualityReport(label=label)
    for snapshot, pose in zip(snapshots, true_poses):
        map_lanes = _snapshot_lanes_in_window(snapshot, pose, max_range)
        window_gt = _gt_lanes_in_window(gt_lanes, pose, max_range)
        tp, n_map, n_gt = score_lane_sets(
            map_lanes, window_gt, dist_thresh, valid_ratio, require_category
        )
        report.tp += tp
        report.n_map += n_map
        report.n_gt += n_gt
        report.per_frame_recall.append(tp / n_gt if n_gt else 1.0)
        report.per_frame_precision.append(tp / n_map if n_map else 1.0)
    return report


def score_single_frame_detections(
    frames: list,
    gt_lanes: list,
    max_range: float = DEFAULT_MAP_RANGE,
    dist_thresh: float = DEFAULT_DIST_THRESH,
    valid_ratio: float = DEFAULT_VALID_RATIO,
    require_category: bool = True,
    label: str = "single-frame",
) -> MapQualityReport:
    """Baseline map quality using only each frame's own detections,
    resampled to the scoring density so point counts are comparable."""
    from .lanes import ObservationRejected, build_observation

    report = MapQualityReport(label=label)
    for frame in frames:
        det_lanes = []
        for det in frame.detections:
            try:
                obs = build_observation(det.points, det.category, _MAP_SAMPLE_SPACING)
            except ObservationRejected:
                continue
            body = _clip_forward(obs.points, max_range)
            if len(body) >= 2:
                det_lanes.append((det.category, body))
        window_gt = _gt_lanes_in_window(gt_lanes, frame.true_pose, max_range)
        tp, n_map, n_gt = score_lane_sets(
            det_lanes, window_gt, dist_thresh, valid_ratio, require_category
        )
        report.tp += tp
        report.n_map += n_map
        report.n_gt += n_gt
        report.per_frame_recall.append(tp / n_gt if n_gt else 1.0)
        report.per_frame_precision.append(tp / n_map if n_map else 1.0)
    return report
