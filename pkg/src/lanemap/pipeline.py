"""Per-frame orchestration: observations -> association -> pose update ->
landmark creation/extension -> factor insertion -> incremental solve.

The pose prediction for each frame chains the previous refined pose with
the relative odometry motion, so refinement corrections persist instead of
being re-estimated from the raw drifting trajectory each frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .association import associate
from .config import PipelineConfig
from .geometry import Pose, PoseNoise
from .lanes import ObservationRejected, build_observation
from .mapping import MapState, add_frame_factors, optimize_incremental
from .pose_update import build_terms, refine_pose

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    map_state: MapState
    frame_indices: list = field(default_factory=list)
    odom_poses: list = field(default_factory=list)
    refined_poses: list = field(default_factory=list)
    true_poses: list = field(default_factory=list)
    snapshots: list | None = None  # per-frame map copies when history is kept
    events: list = field(default_factory=list)  # machine-readable log records
    raw_point_count: int = 0

    def log_event(self, code: str, **data):
        record = {"code": code, **data}
        self.events.append(record)
        logger.debug("pipeline event %s", record)


def _valid_frame(frame) -> bool:
    if frame.odom_pose is None:
        return False
    if not (
        np.all(np.isfinite(frame.odom_pose.rotation))
        and np.all(np.isfinite(frame.odom_pose.translation))
    ):
        return False
    return True


def run_pipeline(
    frames,
    config: PipelineConfig | None = None,
    *,
    keep_history: bool = False,
) -> PipelineResult:
    """Run the mapping loop over an ordered frame stream.

    Malformed frames are skipped with a logged diagnostic; empty streams
    yield an empty map.  Deterministic given (frames, config).
    """
    config = config or PipelineConfig()
    map_state = MapState(
        chord_radius=config.chord_radius,
        endpoint_sigma=config.endpoint_sigma,
        sigma_floor=config.sigma_floor,
    )
    result = PipelineResult(map_state=map_state)
    if keep_history:
        result.snapshots = []

    gate_noise = PoseNoise(
        sigma_theta=float(np.deg2rad(config.gate_sigma_theta_deg)),
        sigma_t=config.gate_sigma_trans,
    )
    prior_noise = PoseNoise(
        sigma_theta=float(np.deg2rad(config.prior_sigma_rot_deg)),
        sigma_t=config.prior_sigma_trans,
    )

    prev_odom: Pose | None = None
    prev_refined: Pose | None = None
    processed = 0

    for frame in frames:
        if not _valid_frame(frame):
            result.log_event("frame_skipped", frame=getattr(frame, "index", None), reason="bad_pose")
            continue

        # propagate the previous refinement through the relative odometry
        if prev_odom is None:
            pose_pred = frame.odom_pose.copy()
        else:
            pose_pred = prev_refined.compose(prev_odom.inverse().compose(frame.odom_pose))

        observations = []
        for det in frame.detections:
            try:
                obs = build_observation(
                    det.points, det.category, config.resolution, config.kappa
                )
            except ObservationRejected as exc:
                result.log_event(
                    "lane_rejected", frame=frame.index, reason=exc.reason
                )
                continue
            observations.append(obs)
            result.raw_point_count += len(det.points)

        assoc = associate(
            observations,
            map_state.landmarks,
            pose_pred,
            gate_noise,
            sample_spacing=config.chamfer_sample_spacing,
            distance_floor=config.distance_floor,
            score_floor=config.score_floor,
            score_max=config.score_max,
            use_consistency=config.use_consistency,
        )

        refined = pose_pred
        if config.use_pose_update and assoc.matches:
            terms = build_terms(
                observations, assoc, map_state.landmarks, pose_pred, config.pose_max_range
            )
            outcome = refine_pose(
                pose_pred,
                terms,
                prior_noise,
                config.huber_scale,
                rebuild=lambda p: build_terms(
                    observations, assoc, map_state.landmarks, p, config.pose_max_range
                ),
                max_outer=config.pose_max_outer,
                pose_tol=config.pose_tol,
            )
            if not outcome.converged:
                result.log_event("pose_update_diverged", frame=frame.index)
            refined = outcome.pose

        for obs_index, lm_id in assoc.matches.items():
            map_state.extend_landmark(
                map_state.landmarks[lm_id], observations[obs_index], refined, frame.index
            )
        for obs_index in assoc.new_lanes:
            map_state.spawn_landmark(observations[obs_index], refined, frame.index)

        add_frame_factors(map_state, observations, assoc.matches, refined, frame.index)

        processed += 1
        info = optimize_incremental(
            map_state, batch=(processed % config.batch_period == 0)
        )
        if info.diverged:
            result.log_event("map_solve_diverged", frame=frame.index)

        map_state.poses.append(refined)
        result.frame_indices.append(frame.index)
        result.odom_poses.append(frame.odom_pose)
        result.refined_poses.append(refined)
        result.true_poses.append(frame.true_pose)
        if keep_history:
            result.snapshots.append(map_state.snapshot())

        prev_odom = frame.odom_pose
        prev_refined = refined

    return result
