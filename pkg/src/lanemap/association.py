"""Frame-to-map lane association.

Each observation is matched to at most one landmark by a maximum-weight
one-to-one assignment.  Candidate edges require equal categories and a
gated Chamfer distance below sqrt(2) times the mean gate; edge weights
combine the reciprocal Chamfer distance with a lateral-order consistency
score computed on a graph over candidate pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .geometry import Pose, PoseNoise
from .lanes import LaneObservation

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_SPACING = 0.5  # landmark sampling for Chamfer, meters
DEFAULT_DISTANCE_FLOOR = 0.01  # meters, caps the reciprocal Chamfer score
DEFAULT_SCORE_FLOOR = 1.0  # added to S so isolated vertices keep weight
DEFAULT_SCORE_MAX = 100.0  # clamp for near-equal lateral distances
_DEGENERATE_LINE = 1e-6


def point_gate(point: np.ndarray, noise: PoseNoise, sigma_d: float) -> float:
    """Two-sigma distance bound for one observed point.

    delta = 2 ||p|| sin(sigma_theta) + 2 sigma_t + 2 sigma_d.
    """
    return float(
        2.0 * np.linalg.norm(point) * np.sin(noise.sigma_theta)
        + 2.0 * noise.sigma_t
        + 2.0 * sigma_d
    )


def point_gates(points: np.ndarray, noise: PoseNoise, sigmas: np.ndarray) -> np.ndarray:
    """Vectorized point_gate over an observation's points."""
    ranges = np.linalg.norm(np.asarray(points, dtype=float), axis=1)
    return 2.0 * ranges * np.sin(noise.sigma_theta) + 2.0 * noise.sigma_t + 2.0 * np.asarray(sigmas)


def gated_chamfer(
    obs: LaneObservation,
    pose: Pose,
    landmark_samples: np.ndarray,
    gates: np.ndarray,
):
    """Gated, match-rate-penalized Chamfer distance of an observation to
    landmark samples.

    Returns (d_ji, n_a) or None when no point passes its gate (the pair is
    then simply not a candidate).
    """
    if len(landmark_samples) == 0:
        raise ValueError("landmark samples must be nonempty")
    world = pose.transform(obs.points)
    nearest, _ = cKDTree(landmark_samples).query(world)
    mask = nearest < gates
    n_a = int(mask.sum())
    if n_a == 0:
        return None
    m = len(world)
    d_ji = float(np.sqrt(m / n_a) * nearest[mask].sum() / n_a)
    return d_ji, n_a


@dataclass(frozen=True)
class CandidatePair:
    """One retained observation-landmark hypothesis."""

    obs_index: int
    landmark_id: int
    distance: float  # gated Chamfer d_ji
    matched_count: int  # n_a
    gate_mean: float

    def __post_init__(self):
        if self.distance < 0.0 or self.matched_count < 1:
            raise ValueError("candidate pair needs d_ji >= 0 and n_a >= 1")


@dataclass
class AssociationGeometry:
    """World-frame geometry backing the lateral-order test: observation
    points per observation index and sampled points per landmark id."""

    obs_points: dict
    landmark_samples: dict


def _bev_side_and_distance(line_pts: np.ndarray, probe_pts: np.ndarray):
    """Sign and distance of a polyline's median point against the straight
    line through another polyline's start and end, in bird's-eye view."""
    start, end = line_pts[0, :2], line_pts[-1, :2]
    edge = end - start
    length = np.linalg.norm(edge)
    if length < _DEGENERATE_LINE:
        return None
    median = probe_pts[len(probe_pts) // 2, :2]
    cross = edge[0] * (median[1] - start[1]) - edge[1] * (median[0] - start[0])
    return np.sign(cross), abs(cross) / length


def lateral_order_test(
    pair_a: CandidatePair, pair_b: CandidatePair, geometry: AssociationGeometry
):
    """Lateral-sequence consistency of two candidate pairs.

    On the observation side and the landmark side alike, the start-end line
    of one pair's lane is tested against the median point of the other's;
    the pairs are consistent iff the side signs agree on both sides.
    Returns (consistent, phi_obs, phi_map) where each phi is the minimum
    point-to-line distance tested on that side.  Degenerate lines make the
    pair inconsistent.
    """
    if pair_a.obs_index == pair_b.obs_index or pair_a.landmark_id == pair_b.landmark_id:
        raise ValueError("lateral test requires pairs sharing no observation/landmark")

    obs_a = geometry.obs_points[pair_a.obs_index]
    obs_b = geometry.obs_points[pair_b.obs_index]
    map_a = geometry.landmark_samples[pair_a.landmark_id]
    map_b = geometry.landmark_samples[pair_b.landmark_id]

    checks = []
    for line, probe in ((obs_b, obs_a), (obs_a, obs_b)):
        checks.append(_bev_side_and_distance(line, probe))
    for line, probe in ((map_b, map_a), (map_a, map_b)):
        checks.append(_bev_side_and_distance(line, probe))
    if any(c is None for c in checks):
        return False, 0.0, 0.0

    (s1, d1), (s2, d2), (s3, d3), (s4, d4) = checks
    consistent = (s1 == s3) and (s2 == s4)
    return bool(consistent), float(min(d1, d2)), float(min(d3, d4))


@dataclass
class ConsistencyGraph:
    """Undirected graph over candidate pairs; an edge carries the lateral
    distances measured on the observation and landmark sides."""

    vertices: list
    edges: list = field(default_factory=list)  # (i, j, phi_obs, phi_map)


def build_consistency_graph(
    pairs: list, geometry: AssociationGeometry
) -> ConsistencyGraph:
    graph = ConsistencyGraph(vertices=list(pairs))
    for i in range(len(pairs)):
        for j in range(i + 1, len(pairs)):
            a, b = pairs[i], pairs[j]
            if a.obs_index == b.obs_index or a.landmark_id == b.landmark_id:
                continue
            consistent, phi_obs, phi_map = lateral_order_test(a, b, geometry)
            if consistent:
                graph.edges.append((i, j, phi_obs, phi_map))
    return graph


def consistency_scores(
    graph: ConsistencyGraph, score_max: float = DEFAULT_SCORE_MAX
) -> np.ndarray:
    """Per-vertex degree score S: sum over incident edges of
    1/|phi_obs - phi_map|, clamped to score_max."""
    scores = np.zeros(len(graph.vertices))
    for i, j, phi_obs, phi_map in graph.edges:
        gap = abs(phi_obs - phi_map)
        weight = score_max if gap < 1.0 / score_max else 1.0 / gap
        scores[i] += weight
        scores[j] += weight
    return scores


@dataclass
class AssociationResult:
    """One-to-one matches (observation index -> landmark id) plus the
    observation indices declared new lanes."""

    matches: dict
    new_lanes: list

    def __post_init__(self):
        if len(set(self.matches.values())) != len(self.matches):
            raise ValueError("association matches must be one-to-one")
        if set(self.matches) & set(self.new_lanes):
            raise ValueError("an observation cannot be both matched and new")


def associate(
    observations: list,
    landmarks: dict,
    pose: Pose,
    noise: PoseNoise,
    *,
    sample_spacing: float = DEFAULT_SAMPLE_SPACING,
    distance_floor: float = DEFAULT_DISTANCE_FLOOR,
    score_floor: float = DEFAULT_SCORE_FLOOR,
    score_max: float = DEFAULT_SCORE_MAX,
    use_consistency: bool = True,
) -> AssociationResult:
    """Match a frame's observations against the map landmarks.

    ``landmarks`` maps landmark id -> LaneLandmark; entries without an
    evaluable spline (fewer than four control points) are ignored.
    Setting ``use_consistency=False`` drops the lateral-order score from
    the edge weights (the distance-only ablation).
    """
    obs_world = {i: pose.transform(o.points) for i, o in enumerate(observations)}
    samples = {}
    for lm_id, lm in landmarks.items():
        spline = lm.spline
        if spline is None:
            continue
        samples[lm_id] = spline.sample(sample_spacing)

    pairs = []
    for i, obs in enumerate(observations):
        gates = point_gates(obs.points, noise, obs.sigmas)
        bound = np.sqrt(2.0) * float(gates.mean())
        for lm_id, lm in landmarks.items():
            if lm_id not in samples or lm.category != obs.category:
                continue
            hit = gated_chamfer(obs, pose, samples[lm_id], gates)
            if hit is None:
                continue
            d_ji, n_a = hit
            if d_ji >= bound:
                continue
            pairs.append(
                CandidatePair(
                    obs_index=i,
                    landmark_id=lm_id,
                    distance=d_ji,
                    matched_count=n_a,
                    gate_mean=float(gates.mean()),
                )
            )

    if not pairs:
        return AssociationResult(matches={}, new_lanes=list(range(len(observations))))

    if use_consistency:
        geometry = AssociationGeometry(obs_points=obs_world, landmark_samples=samples)
        graph = build_consistency_graph(pairs, geometry)
        scores = consistency_scores(graph, score_max)
    else:
        scores = np.zeros(len(pairs))

    lm_ids = sorted(samples)
    lm_col = {lm_id: c for c, lm_id in enumerate(lm_ids)}
    weights = np.zeros((len(observations), len(lm_ids)))
    for pair, score in zip(pairs, scores):
        distance_score = 1.0 / max(pair.distance, distance_floor)
        consistency = (score + score_floor) if use_consistency else 1.0
        weights[pair.obs_index, lm_col[pair.landmark_id]] = distance_score * consistency

    rows, cols = linear_sum_assignment(weights, maximize=True)
    matches = {}
    for r, c in zip(rows, cols):
        if weights[r, c] > 0.0:  # zero weight encodes "no candidate"
            matches[int(r)] = lm_ids[c]
    new_lanes = [i for i in range(len(observations)) if i not in matches]
    result = AssociationResult(matches=matches, new_lanes=new_lanes)
    logger.debug(
        "associate: %d obs, %d eligible landmarks, %d candidates, %d matched",
        len(observations),
        len(lm_ids),
        len(pairs),
        len(matches),
    )
    return result
