"""Experiment protocols tying the simulator, pipeline, and metrics together:
pairwise association trials, pose-update evaluation, and the detection
dropout sweep for map quality."""

from __future__ import annotations

import logging
import time

import numpy as np

from .association import associate
from .config import PipelineConfig
from .evaluation import (
    AssociationMetrics,
    build_rpe_report,
    score_map,
    score_single_frame_detections,
)
from .geometry import PoseNoise
from .lanes import ObservationRejected, build_observation
from .mapping import MapState
from .pipeline import run_pipeline
from .simulate import Frame, make_association_pairs

logger = logging.getLogger(__name__)


def _frame_observations(frame: Frame, config: PipelineConfig):
    """Observations plus their instance ids; rejected detections are
    dropped from both lists."""
    observations = []
    instances = []
    for det in frame.detections:
        try:
            obs = build_observation(det.points, det.category, config.resolution, config.kappa)
        except ObservationRejected:
            continue
        observations.append(obs)
        instances.append(det.instance_id)
    return observations, instances


def _spawn_landmarks(frame: Frame, config: PipelineConfig):
    """A fresh map holding one landmark per (usable) detection of a frame."""
    pose = frame.true_pose if frame.true_pose is not None else frame.odom_pose
    state = MapState(chord_radius=config.chord_radius, endpoint_sigma=config.endpoint_sigma)
    observations, instances = _frame_observations(frame, config)
    landmark_instance = {}
    for obs, instance in zip(observations, instances):
        landmark = state.spawn_landmark(obs, pose, frame.index)
        landmark_instance[landmark.id] = instance
    return state, landmark_instance


def associate_pair_case(case, config: PipelineConfig, use_consistency: bool = True):
    """Associate one perturbed frame pair; returns (predicted instance-id
    pairs, elapsed milliseconds of the association call)."""
    state, landmark_instance = _spawn_landmarks(case.frame_a, config)
    observations, instances = _frame_observations(case.frame_b, config)

    pose_b = case.frame_b.true_pose if case.frame_b.true_pose is not None else case.frame_b.odom_pose
    pose_assoc = pose_b.compose(case.perturbation)
    noise = PoseNoise(sigma_theta=case.sigma_yaw, sigma_t=case.sigma_trans)

    start = time.perf_counter()
    result = associate(
        observations,
        state.landmarks,
        pose_assoc,
        noise,
        sample_spacing=config.chamfer_sample_spacing,
        distance_floor=config.distance_floor,
        score_floor=config.score_floor,
        score_max=config.score_max,
        use_consistency=use_consistency,
    )
    elapsed_ms = (time.perf_counter() - start) * 1e3
    predicted = {
        (landmark_instance[lm_id], instances[obs_index])
        for obs_index, lm_id in result.matches.items()
    }
    return predicted, elapsed_ms


def run_association_protocol(
    frames: list,
    config: PipelineConfig,
    *,
    stride: int = 10,
    sigma_xy: float = 3.0,
    sigma_yaw_deg: float = 2.0,
    seed: int = 0,
    use_consistency: bool = True,
) -> AssociationMetrics:
    """Pairwise association trial over a frame sequence: a pair every
    ``stride`` frames, the second frame rigidly perturbed."""
    rng = np.random.default_rng(seed)
    cases = make_association_pairs(frames, stride, rng, sigma_xy, sigma_yaw_deg)
    return score_association_cases(cases, config, use_consistency=use_consistency)


def score_association_cases(
    cases: list, config: PipelineConfig, *, use_consistency: bool = True
) -> AssociationMetrics:
    tp = fp = fn = 0
    times = []
    for case in cases:
        predicted, elapsed_ms = associate_pair_case(case, config, use_consistency)
        times.append(elapsed_ms)
        tp += len(predicted & case.true_pairs)
        fp += len(predicted - case.true_pairs)
        fn += len(case.true_pairs - predicted)
    mean_ms = float(np.mean(times)) if times else 0.0
    return AssociationMetrics.from_counts(tp, fp, fn, mean_ms)


def apply_dropout(frames: list, probability: float, rng: np.random.Generator) -> list:
    """Randomly remove whole lanes from an existing frame stream."""
    if not 0.0 <= probability <= 1.0:
        raise ValueError("dropout must be a probability")
    out = []
    for frame in frames:
        kept = [d for d in frame.detections if rng.random() >= probability]
        out.append(
            Frame(
                index=frame.index,
                true_pose=frame.true_pose,
                odom_pose=frame.odom_pose,
                detections=kept,
            )
        )
    return out


def run_pose_protocol(frames: list, true_poses: list, config: PipelineConfig):
    """Pipeline run plus the odometry-vs-updated RPE report."""
    result = run_pipeline(frames, config)
    if len(result.frame_indices) != len(true_poses):
        true_poses = [true_poses[i] for i in result.frame_indices]
    report = build_rpe_report(true_poses, result.odom_poses, result.refined_poses)
    return result, report


def run_dropout_sweep(
    frames: list,
    gt_lanes: list,
    config: PipelineConfig,
    dropouts=(0.0, 0.4, 0.6, 0.8),
    seed: int = 0,
) -> dict:
    """Map-quality comparison at several detection dropout levels.

    Returns {dropout: {"map": MapQualityReport, "single": MapQualityReport}};
    the pipeline map is scored causally from per-frame snapshots, the
    baseline from each frame's own detections.
    """
    if any(f.true_pose is None for f in frames):
        raise ValueError("dropout sweep needs true poses in the frame stream")
    out = {}
    for p in dropouts:
        rng = np.random.default_rng(seed + int(round(p * 1000)))
        dropped = apply_dropout(frames, p, rng) if p > 0 else frames
        result = run_pipeline(dropped, config, keep_history=True)
        true_poses = [f.true_pose for f in dropped if f.index in set(result.frame_indices)]
        report_map = score_map(
            result.snapshots, true_poses, gt_lanes, label=f"map@p={p:g}"
        )
        report_single = score_single_frame_detections(
            dropped, gt_lanes, label=f"single@p={p:g}"
        )
        out[float(p)] = {"map": report_map, "single": report_single}
        logger.info(
            "dropout %.1f: map F1 %.3f (R %.3f P %.3f) vs single F1 %.3f (R %.3f P %.3f)",
            p,
            report_map.f1,
            report_map.recall,
            report_map.precision,
            report_single.f1,
            report_single.recall,
            report_single.precision,
        )
    return out
