"""File formats: the line-delimited frame stream, the ground-truth bundle,
and the versioned map export.

Frame stream (one JSON object per line)::

    {"frame": 0,
     "odom_pose": {"q": [w, x, y, z], "t": [x, y, z]},
     "true_pose": {...},                # optional
     "lanes": [{"category": "white_dash",
                "instance_id": 3,       # optional, oracle only
                "points": [[x, y, z], ...]}, ...]}

Map export (single JSON document, version field first-class)::

    {"version": 1, "config_hash": "...", "frame_count": N,
     "landmarks": [{"id", "category", "control_points",
                    "created_frame", "last_observed_frame"}, ...]}

Rotations travel as wxyz quaternions and are normalized on read.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, quat_wxyz_from_rotation, rotation_from_quat_wxyz
from .lanes import LaneCategory
from .simulate import Frame, GroundTruthLane, RawDetection

logger = logging.getLogger(__name__)

MAP_EXPORT_VERSION = 1


class StreamFormatError(ValueError):
    """A frame-stream line could not be parsed."""


def pose_to_json(pose: Pose) -> dict:
    return {
        "q": [float(v) for v in quat_wxyz_from_rotation(pose.rotation)],
        "t": [float(v) for v in pose.translation],
    }


def pose_from_json(data: dict) -> Pose:
    return Pose(rotation_from_quat_wxyz(np.asarray(data["q"])), np.asarray(data["t"]))


def frame_to_json(frame: Frame) -> str:
    record = {
        "frame": frame.index,
        "odom_pose": pose_to_json(frame.odom_pose),
        "lanes": [
            {
                "category": det.category.value,
                "instance_id": det.instance_id,
                "points": [[float(v) for v in p] for p in det.points],
            }
            for det in frame.detections
        ],
    }
    if frame.true_pose is not None:
        record["true_pose"] = pose_to_json(frame.true_pose)
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def frame_from_json(line: str) -> Frame:
    try:
        record = json.loads(line)
        index = int(record["frame"])
        odom = pose_from_json(record["odom_pose"])
        true_pose = (
            pose_from_json(record["true_pose"]) if "true_pose" in record else None
        )
        detections = []
        for lane in record.get("lanes", []):
            points = np.asarray(lane["points"], dtype=float)
            category = LaneCategory(lane.get("category", "unknown"))
            instance = lane.get("instance_id")
            detections.append(
                RawDetection(
                    instance_id=-1 if instance is None else int(instance),
                    category=category,
                    points=points,
                )
            )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise StreamFormatError(str(exc)) from exc
    return Frame(index=index, true_pose=true_pose, odom_pose=odom, detections=detections)


def write_frames(path, frames):
    with open(path, "w") as handle:
        for frame in frames:
            handle.write(frame_to_json(frame))
            handle.write("\n")


def read_frames(path):
    """Frames from a stream file; malformed lines are skipped with a logged
    diagnostic (only an unreadable file aborts)."""
    frames = []
    with open(path) as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                frames.append(frame_from_json(line))
            except StreamFormatError as exc:
                logger.warning("skipping malformed frame line %d: %s [code=bad_frame]", lineno, exc)
    return frames


def write_ground_truth(path, lanes, poses):
    record = {
        "lanes": [
            {
                "instance_id": lane.instance_id,
                "category": lane.category.value,
                "points": [[float(v) for v in p] for p in lane.points],
            }
            for lane in lanes
        ],
        "poses": [pose_to_json(p) for p in poses],
    }
    with open(path, "w") as handle:
        json.dump(record, handle, sort_keys=True, separators=(",", ":"))


def read_ground_truth(path):
    with open(path) as handle:
        record = json.load(handle)
    lanes = [
        GroundTruthLane(
            instance_id=int(lane["instance_id"]),
            category=LaneCategory(lane["category"]),
            points=np.asarray(lane["points"], dtype=float),
        )
        for lane in record["lanes"]
    ]
    poses = [pose_from_json(p) for p in record["poses"]]
    return lanes, poses


@dataclass
class MapExport:
    """Serializable final map: per-landmark control points plus metadata."""

    version: int
    config_hash: str
    frame_count: int
    landmarks: list  # dicts with id/category/control_points/created/last


def map_export_from_state(map_state, config_hash: str, frame_count: int) -> MapExport:
    landmarks = [
        {
            "id": lm.id,
            "category": lm.category.value,
            "control_points": [[float(v) for v in p] for p in lm.ctrl],
            "created_frame": lm.created_frame,
            "last_observed_frame": lm.last_observed_frame,
        }
        for lm in map_state.landmarks.values()
    ]
    return MapExport(
        version=MAP_EXPORT_VERSION,
        config_hash=config_hash,
        frame_count=frame_count,
        landmarks=landmarks,
    )


def write_map_export(path, export: MapExport):
    record = {
        "version": export.version,
        "config_hash": export.config_hash,
        "frame_count": export.frame_count,
        "landmarks": export.landmarks,
    }
    with open(path, "w") as handle:
        json.dump(record, handle, sort_keys=True, separators=(",", ":"))


def read_map_export(path) -> MapExport:
    with open(path) as handle:
        record = json.load(handle)
    version = record.get("version")
    if version != MAP_EXPORT_VERSION:
        raise ValueError(f"unsupported map export version {version!r}")
    return MapExport(
        version=version,
        config_hash=record.get("config_hash", ""),
        frame_count=int(record.get("frame_count", 0)),
        landmarks=record["landmarks"],
    )


def write_map_csv(path, export: MapExport):
    import csv

    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["lane_id", "category", "point_index", "x", "y", "z", "created_frame", "last_observed_frame"]
        )
        for lm in export.landmarks:
            for i, (x, y, z) in enumerate(lm["control_points"]):
                writer.writerow(
                    [lm["id"], lm["category"], i, repr(x), repr(y), repr(z), lm["created_frame"], lm["last_observed_frame"]]
                )


def write_trajectory_csv(path, frame_indices, odom_poses, refined_poses, true_poses=None):
    import csv

    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        header = ["frame"]
        for prefix in ("odom", "refined") + (("true",) if true_poses else ()):
            header += [f"{prefix}_{c}" for c in ("qw", "qx", "qy", "qz", "x", "y", "z")]
        writer.writerow(header)
        for i, index in enumerate(frame_indices):
            row = [index]
            poses = [odom_poses[i], refined_poses[i]]
            if true_poses:
                poses.append(true_poses[i])
            for pose in poses:
                q = quat_wxyz_from_rotation(pose.rotation)
                row += [repr(float(v)) for v in q] + [repr(float(v)) for v in pose.translation]
            writer.writerow(row)
