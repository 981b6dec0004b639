"""Lane observation preprocessing and the landmark record.

Raw detections are unordered 3D points with a category.  Preprocessing
rotates them into a local reference frame (LRF) whose X-axis follows the
lane's primary direction, fits cubics y(x) and z(x), resamples at a fixed
resolution, and attaches a range-proportional noise deviation per point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.polynomial import polynomial as npoly

from .geometry import DegenerateGeometryError, Pose, UP
from .spline import CatmullRomSpline

DEFAULT_RESOLUTION = 0.5  # meters between resampled points
DEFAULT_KAPPA = 0.01  # noise deviation per meter of point range


class LaneCategory(Enum):
    """Closed set of 14 lane-marking classes plus unknown.

    Unknown matches only unknown during association.
    """

    WHITE_DASH = "white_dash"
    WHITE_SOLID = "white_solid"
    DOUBLE_WHITE_DASH = "double_white_dash"
    DOUBLE_WHITE_SOLID = "double_white_solid"
    WHITE_DASH_SOLID = "white_dash_solid"
    WHITE_SOLID_DASH = "white_solid_dash"
    YELLOW_DASH = "yellow_dash"
    YELLOW_SOLID = "yellow_solid"
    DOUBLE_YELLOW_DASH = "double_yellow_dash"
    DOUBLE_YELLOW_SOLID = "double_yellow_solid"
    YELLOW_DASH_SOLID = "yellow_dash_solid"
    YELLOW_SOLID_DASH = "yellow_solid_dash"
    LEFT_CURB = "left_curb"
    RIGHT_CURB = "right_curb"
    UNKNOWN = "unknown"


class ObservationRejected(ValueError):
    """A raw detection could not be turned into an observation."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


@dataclass
class LocalReferenceFrame:
    """Pose taking source (body/world) coordinates into lane-aligned ones."""

    transform: Pose

    def to_lrf(self, points: np.ndarray) -> np.ndarray:
        return self.transform.transform(points)

    def from_lrf(self, points: np.ndarray) -> np.ndarray:
        return self.transform.inverse().transform(points)

    @property
    def x_axis_in_source(self) -> np.ndarray:
        """Lane primary direction expressed in the source frame."""
        return self.transform.rotation[0]


def fit_lrf(raw_points: np.ndarray) -> LocalReferenceFrame:
    """Lane-aligned frame: origin at the centroid, X along the leading
    principal direction of the scatter, Z as close to up as orthonormality
    allows.  The sign puts the first raw point at negative/minimal x.
    """
    pts = np.asarray(raw_points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
        raise ValueError("fit_lrf needs at least two 3D points")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scatter = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(scatter)
    if eigvals[-1] < 1e-12:
        raise DegenerateGeometryError("all points coincide; no primary direction")
    x_axis = eigvecs[:, -1]

    first = float(centered[0] @ x_axis)
    if abs(first) < 1e-9:
        first = float((pts[0] - pts[-1]) @ x_axis)
    if first > 0.0:
        x_axis = -x_axis

    z_axis = UP - (UP @ x_axis) * x_axis
    nz = np.linalg.norm(z_axis)
    if nz < 1e-9:
        # near-vertical lane: fall back to world X for the Gram-Schmidt seed
        z_axis = np.array([1.0, 0.0, 0.0]) - x_axis[0] * x_axis
        nz = np.linalg.norm(z_axis)
    z_axis = z_axis / nz
    y_axis = np.cross(z_axis, x_axis)

    rotation = np.vstack([x_axis, y_axis, z_axis])
    return LocalReferenceFrame(Pose(rotation, -rotation @ centroid))


def fit_cubic(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Least-squares cubic y(x), coefficients in increasing order (4,).

    Degree drops to len(xs) - 1 for fewer than four points, with the higher
    coefficients zeroed.  Rank deficiency from duplicate abscissae is
    reported as an error.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) != len(ys) or len(xs) < 2:
        raise ValueError("fit_cubic needs matching x/y arrays with >= 2 points")
    degree = min(3, len(xs) - 1)
    vander = np.vander(xs, degree + 1, increasing=True)
    coeffs, _, rank, _ = np.linalg.lstsq(vander, ys, rcond=None)
    if rank < degree + 1:
        raise DegenerateGeometryError(
            "rank-deficient cubic fit (duplicate x beyond tolerance)"
        )
    out = np.zeros(4)
    out[: degree + 1] = coeffs
    return out


def eval_cubic(coeffs: np.ndarray, xs) -> np.ndarray:
    return npoly.polyval(np.asarray(xs, dtype=float), coeffs)


@dataclass
class LaneObservation:
    """Resampled lane detection in the body frame.

    ``points`` are ordered by increasing LRF x and spaced by the build
    resolution; ``sigmas[k]`` is kappa times the point's range.
    """

    points: np.ndarray  # (M, 3) body frame
    f_xy: np.ndarray  # cubic y(x) in LRF, increasing coefficients
    f_xz: np.ndarray  # cubic z(x) in LRF
    category: LaneCategory
    sigmas: np.ndarray  # (M,)
    lrf: LocalReferenceFrame

    def __len__(self) -> int:
        return len(self.points)


def build_observation(
    raw_points: np.ndarray,
    category: LaneCategory,
    resolution: float = DEFAULT_RESOLUTION,
    kappa: float = DEFAULT_KAPPA,
) -> LaneObservation:
    """Preprocess one raw detection into a LaneObservation.

    Raises ObservationRejected when the points span less than one
    resolution step along the lane direction (reason ``span_too_short``)
    or the geometry is otherwise degenerate (reason ``degenerate``).
    """
    if resolution <= 0.0 or kappa <= 0.0:
        raise ValueError("resolution and kappa must be positive")
    pts = np.asarray(raw_points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
        raise ObservationRejected("degenerate", "need at least two 3D points")
    if not np.all(np.isfinite(pts)):
        raise ObservationRejected("degenerate", "non-finite coordinates")

    try:
        lrf = fit_lrf(pts)
    except DegenerateGeometryError as exc:
        raise ObservationRejected("degenerate", str(exc)) from exc

    local = lrf.to_lrf(pts)
    order = np.argsort(local[:, 0], kind="stable")
    local = local[order]
    span = local[-1, 0] - local[0, 0]
    if span < resolution:
        raise ObservationRejected(
            "span_too_short", f"span {span:.3f} m < resolution {resolution:.3f} m"
        )

    try:
        f_xy = fit_cubic(local[:, 0], local[:, 1])
        f_xz = fit_cubic(local[:, 0], local[:, 2])
    except DegenerateGeometryError as exc:
        raise ObservationRejected("degenerate", str(exc)) from exc

    intervals = max(1, int(round(span / resolution)))
    xs = np.linspace(local[0, 0], local[-1, 0], intervals + 1)
    resampled_lrf = np.column_stack([xs, eval_cubic(f_xy, xs), eval_cubic(f_xz, xs)])
    body = lrf.from_lrf(resampled_lrf)
    sigmas = kappa * np.linalg.norm(body, axis=1)
    return LaneObservation(body, f_xy, f_xz, category, sigmas, lrf)


@dataclass
class LaneLandmark:
    """A persistent lane instance in the map.

    Control points live in the world frame; ``node_ids`` are stable
    per-control-point identifiers used by measurement factors, parallel to
    ``ctrl`` rows.  The spline is evaluable once four control points exist.
    """

    id: int
    category: LaneCategory
    created_frame: int
    last_observed_frame: int
    ctrl: np.ndarray  # (n, 3) world frame
    node_ids: list = field(default_factory=list)

    @property
    def spline(self):
        if len(self.ctrl) < 4:
            return None
        return CatmullRomSpline(self.ctrl)
