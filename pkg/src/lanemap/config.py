"""Pipeline configuration: every module knob in one serializable record.

The JSON round trip is lossless and unknown keys are rejected so stale
config files fail loudly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields


@dataclass
class PipelineConfig:
    seed: int = 0

    # observation preprocessing
    resolution: float = 0.5  # resample spacing, meters
    kappa: float = 0.01  # per-meter noise proportionality

    # spline / landmark geometry
    chord_radius: float = 3.0
    tension: float = 0.5

    # association
    gate_sigma_theta_deg: float = 1.0
    gate_sigma_trans: float = 1.0
    chamfer_sample_spacing: float = 0.5
    distance_floor: float = 0.01
    score_floor: float = 1.0
    score_max: float = 100.0
    use_consistency: bool = True

    # pose update
    use_pose_update: bool = True
    pose_max_range: float = 30.0
    huber_scale: float = 1.0
    prior_sigma_rot_deg: float = 0.3
    prior_sigma_trans: float = 0.3
    pose_max_outer: int = 5
    pose_tol: float = 1e-4

    # map optimization
    endpoint_sigma: float = 0.1
    sigma_floor: float = 0.01
    batch_period: int = 10

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        return cls.from_dict(json.loads(text))

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]
