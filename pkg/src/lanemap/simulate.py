"""Synthetic road scenarios: ground-truth lanes, trajectories, drifting
odometry, and noisy per-frame lane detections.

Everything is deterministic given the scenario seed.  Detections carry
their true instance ids so association and map-quality oracles are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import Pose, yaw_pose
from .lanes import LaneCategory

_GT_STEP = 0.25  # meters between ground-truth polyline vertices

PROFILES = ("straight", "curve", "merge-split")
CATEGORY_PATTERNS = ("edges-solid", "uniform")


@dataclass
class ScenarioConfig:
    seed: int = 0
    lane_count: int = 4
    lane_spacing: float = 3.5
    segment_length: float = 135.0
    lane_overrun: float = 60.0  # lanes extend past the driven segment
    profile: str = "straight"
    curve_radius: float = 200.0
    slope_amplitude: float = 0.0  # up-and-down realized as a Z sine
    slope_wavelength: float = 80.0
    detection_range: float = 50.0
    raw_point_spacing: float = 1.0
    noise_base: float = 0.05  # sigma at zero range, meters
    noise_rate: float = 0.01  # sigma growth per meter of range
    dropout: float = 0.0  # probability of removing a lane per frame
    odom_sigma_rot_deg: float = 0.0
    odom_sigma_trans: float = 0.0
    frame_spacing: float = 1.0
    category_pattern: str = "edges-solid"

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; expected {PROFILES}")
        if self.category_pattern not in CATEGORY_PATTERNS:
            raise ValueError(f"unknown category pattern {self.category_pattern!r}")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout must be a probability")
        for name in ("noise_base", "noise_rate", "odom_sigma_rot_deg", "odom_sigma_trans"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "ScenarioConfig":
        known = {f for f in ScenarioConfig.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario config keys: {sorted(unknown)}")
        return ScenarioConfig(**data)


@dataclass
class GroundTruthLane:
    """A lane centerline as a dense polyline with arc-length bookkeeping."""

    instance_id: int
    category: LaneCategory
    points: np.ndarray  # (N, 3) world frame, ~_GT_STEP apart
    cumulative: np.ndarray = field(init=False)

    def __post_init__(self):
        steps = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        self.cumulative = np.concatenate([[0.0], np.cumsum(steps)])

    @property
    def length(self) -> float:
        return float(self.cumulative[-1])


@dataclass
class RawDetection:
    """One detected lane in a frame: body-frame points plus oracle data."""

    instance_id: int
    category: LaneCategory
    points: np.ndarray  # (K, 3) body frame


@dataclass
class Frame:
    index: int
    true_pose: Pose
    odom_pose: Pose
    detections: list


def _centerline(config: ScenarioConfig, s: np.ndarray):
    """Centerline position and heading at arc length s along the road."""
    z = config.slope_amplitude * np.sin(2.0 * np.pi * s / config.slope_wavelength)
    if config.profile == "curve":
        r = config.curve_radius
        phi = s / r
        pos = np.column_stack([r * np.sin(phi), r * (1.0 - np.cos(phi)), z])
        heading = phi
    else:
        pos = np.column_stack([s, np.zeros_like(s), z])
        heading = np.zeros_like(s)
    return pos, heading


def _lane_offsets(config: ScenarioConfig, s: np.ndarray) -> np.ndarray:
    """(lane_count, len(s)) lateral offsets; the merge-split profile ramps
    the outermost lane away over the middle third of the road."""
    base = (np.arange(config.lane_count) - (config.lane_count - 1) / 2.0) * config.lane_spacing
    offsets = np.repeat(base[:, None], len(s), axis=1)
    if config.profile == "merge-split":
        start = config.segment_length / 3.0
        width = config.segment_length / 3.0
        t = np.clip((s - start) / width, 0.0, 1.0)
        ramp = t * t * (3.0 - 2.0 * t)  # smoothstep
        offsets[-1] += config.lane_spacing * ramp
    return offsets


def _lane_categories(config: ScenarioConfig) -> list:
    if config.category_pattern == "uniform":
        return [LaneCategory.WHITE_DASH] * config.lane_count
    cats = [LaneCategory.WHITE_DASH] * config.lane_count
    cats[0] = LaneCategory.WHITE_SOLID
    cats[-1] = LaneCategory.WHITE_SOLID
    return cats


def generate_scenario(config: ScenarioConfig):
    """Ground-truth lanes plus the true trajectory, deterministic given the
    config (the seed only drives noise elsewhere).  Lanes run past the
    driven segment so forward windows near the end stay populated."""
    s_dense = np.arange(
        0.0, config.segment_length + config.lane_overrun + _GT_STEP, _GT_STEP
    )
    pos, heading = _centerline(config, s_dense)
    normals = np.column_stack(
        [-np.sin(heading), np.cos(heading), np.zeros_like(heading)]
    )
    offsets = _lane_offsets(config, s_dense)
    categories = _lane_categories(config)

    lanes = []
    for i in range(config.lane_count):
        pts = pos + offsets[i][:, None] * normals
        lanes.append(GroundTruthLane(instance_id=i, category=categories[i], points=pts))

    s_frames = np.arange(0.0, config.segment_length + 1e-9, config.frame_spacing)
    frame_pos, frame_heading = _centerline(config, s_frames)
    poses = [
        yaw_pose(h, *p) for p, h in zip(frame_pos, frame_heading)
    ]
    return lanes, poses


def render_frame(
    lanes: list,
    true_pose: Pose,
    config: ScenarioConfig,
    rng: np.random.Generator,
    index: int = 0,
) -> list:
    """Noisy body-frame detections of the lanes visible ahead of the pose.

    Whole lanes are dropped with the configured probability; per-point
    Gaussian noise grows linearly with range.  Lanes with fewer than two
    in-range points are omitted.
    """
    detections = []
    inverse = true_pose.inverse()
    subsample = max(1, int(round(config.raw_point_spacing / _GT_STEP)))
    for lane in lanes:
        dropped = rng.random() < config.dropout
        if dropped:
            continue
        body = inverse.transform(lane.points)
        mask = (body[:, 0] > 0.0) & (body[:, 0] <= config.detection_range)
        body = body[mask][::subsample]
        if len(body) < 2:
            continue
        ranges = np.linalg.norm(body, axis=1)
        sigma = config.noise_base + config.noise_rate * ranges
        noisy = body + rng.normal(size=body.shape) * sigma[:, None]
        detections.append(
            RawDetection(instance_id=lane.instance_id, category=lane.category, points=noisy)
        )
    return detections


def perturb_odometry(
    true_poses: list,
    sigma_rot_deg: float,
    sigma_trans: float,
    rng: np.random.Generator,
    sigma_z: float = 0.0,
    sigma_rollpitch_deg: float = 0.0,
) -> list:
    """Odometry with drift: the relative motion between consecutive frames
    is perturbed in (x, y, yaw); z/roll/pitch noise is available but
    defaults to zero.  Frame 0 odometry equals truth."""
    if not true_poses:
        return []
    odometry = [true_poses[0].copy()]
    sigma_yaw = np.deg2rad(sigma_rot_deg)
    sigma_rp = np.deg2rad(sigma_rollpitch_deg)
    for prev, cur in zip(true_poses[:-1], true_poses[1:]):
        relative = prev.inverse().compose(cur)
        yaw = rng.normal(0.0, sigma_yaw) if sigma_yaw > 0 else 0.0
        dx = rng.normal(0.0, sigma_trans) if sigma_trans > 0 else 0.0
        dy = rng.normal(0.0, sigma_trans) if sigma_trans > 0 else 0.0
        dz = rng.normal(0.0, sigma_z) if sigma_z > 0 else 0.0
        noise = yaw_pose(yaw, dx, dy, dz)
        if sigma_rp > 0:
            from .geometry import so3_exp

            tilt = so3_exp([rng.normal(0.0, sigma_rp), rng.normal(0.0, sigma_rp), 0.0])
            noise = Pose(noise.rotation @ tilt, noise.translation)
        odometry.append(odometry[-1].compose(relative).compose(noise))
    return odometry


def simulate_sequence(config: ScenarioConfig):
    """Full scenario: (lanes, frames) with rendered detections and drifting
    odometry, deterministic under the seed."""
    rng = np.random.default_rng(config.seed)
    lanes, true_poses = generate_scenario(config)
    odom_poses = perturb_odometry(
        true_poses, config.odom_sigma_rot_deg, config.odom_sigma_trans, rng
    )
    frames = []
    for index, (true_pose, odom_pose) in enumerate(zip(true_poses, odom_poses)):
        detections = render_frame(lanes, true_pose, config, rng, index)
        frames.append(
            Frame(index=index, true_pose=true_pose, odom_pose=odom_pose, detections=detections)
        )
    return lanes, frames


@dataclass
class AssociationPairCase:
    """Two frames of one sequence with a rigid perturbation imposed on the
    second, for the pairwise association protocol."""

    frame_a: Frame
    frame_b: Frame
    perturbation: Pose  # applied in frame B's body frame
    true_pairs: set  # instance-id-equal (a, b) lane pairs
    sigma_trans: float  # rms norm of the planar perturbation, for gating
    sigma_yaw: float  # radians, for gating


def make_association_pairs(
    frames: list,
    stride: int = 10,
    rng: np.random.Generator | None = None,
    sigma_xy: float = 3.0,
    sigma_yaw_deg: float = 2.0,
) -> list:
    """Association test pairs: every ``stride`` frames, pair the frame with
    the one ``stride`` ahead and impose a random planar transform on the
    second frame's lanes (X, Y ~ N(0, sigma_xy); yaw ~ N(0, sigma_yaw))."""
    if len(frames) <= stride:
        raise ValueError("sequence shorter than the pairing stride")
    if rng is None:
        rng = np.random.default_rng(0)
    sigma_trans = float(np.hypot(sigma_xy, sigma_xy))
    cases = []
    for start in range(0, len(frames) - stride, stride):
        frame_a = frames[start]
        frame_b = frames[start + stride]
        yaw = rng.normal(0.0, np.deg2rad(sigma_yaw_deg))
        dx, dy = rng.normal(0.0, sigma_xy, size=2)
        perturb = yaw_pose(yaw, dx, dy)
        ids_a = {d.instance_id for d in frame_a.detections}
        ids_b = {d.instance_id for d in frame_b.detections}
        cases.append(
            AssociationPairCase(
                frame_a=frame_a,
                frame_b=frame_b,
                perturbation=perturb,
                true_pairs={(i, i) for i in ids_a & ids_b},
                sigma_trans=sigma_trans,
                sigma_yaw=float(np.deg2rad(sigma_yaw_deg)),
            )
        )
    return cases
