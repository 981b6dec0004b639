"""Online monocular lane mapping with Catmull-Rom spline landmarks."""

from .association import AssociationResult, associate
from .config import PipelineConfig
from .geometry import Pose, PoseNoise
from .lanes import LaneCategory, LaneLandmark, LaneObservation, build_observation
from .mapping import MapState
from .pipeline import PipelineResult, run_pipeline
from .simulate import ScenarioConfig, simulate_sequence
from .spline import CatmullRomSpline, SplineParam

__version__ = "0.1.0"

__all__ = [
    "AssociationResult",
    "CatmullRomSpline",
    "LaneCategory",
    "LaneLandmark",
    "LaneObservation",
    "MapState",
    "PipelineConfig",
    "PipelineResult",
    "Pose",
    "PoseNoise",
    "ScenarioConfig",
    "SplineParam",
    "associate",
    "build_observation",
    "run_pipeline",
    "simulate_sequence",
    "__version__",
]
