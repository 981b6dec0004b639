"""Landmark creation, spline extension, and incremental map optimization.

Control points are grown outward from observations in chord-length steps by
intersecting a sphere around the current end point with the observation's
cubic fits (lifted in the lane's local reference frame).  Matched points
then become point-to-spline factors, linear in the four control points of
their segment because the parameter u is frozen at insertion; endpoint
regularization factors pin the weakly observed first/last control points.
All factors separate per axis, so each solve reduces to one symmetric
normal system with three right-hand sides.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import DegenerateGeometryError, Pose
from .lanes import LaneLandmark, LaneObservation, eval_cubic
from .spline import basis_coefficients

logger = logging.getLogger(__name__)

DEFAULT_CHORD_RADIUS = 3.0  # meters between control points
DEFAULT_ENDPOINT_SIGMA = 0.1  # meters, endpoint regularization
DEFAULT_SIGMA_FLOOR = 0.01  # meters, floor for per-point factor weights
MIN_NODE_OBSERVATIONS = 4  # point factors before a control point may move
_EXPAND_MAX_ITER = 10
_EXPAND_TOL = 1e-3
_MAX_EXTEND_ROUNDS = 200


@dataclass(frozen=True)
class NormalPlane:
    """Half-space boundary at a spline end; ``beyond`` means on the outward
    normal's side."""

    point: np.ndarray
    normal: np.ndarray  # unit, pointing away from the lane


def compute_normal_planes(ctrl: np.ndarray, fallback_direction=None):
    """Planes through the first and last control points, normals along the
    spline tangent there (chord direction below four points).

    A single control point needs ``fallback_direction`` (the lane's primary
    direction) to orient its planes.
    """
    ctrl = np.asarray(ctrl, dtype=float)
    n = len(ctrl)
    if n == 0:
        raise ValueError("cannot compute planes of an empty control point set")
    if n == 1:
        if fallback_direction is None:
            raise ValueError("a single control point needs a fallback direction")
        d = np.asarray(fallback_direction, dtype=float)
        d = d / np.linalg.norm(d)
        return NormalPlane(ctrl[0], -d), NormalPlane(ctrl[0], d)
    if n >= 4:
        head_dir = ctrl[2] - ctrl[0]
        tail_dir = ctrl[-1] - ctrl[-3]
    else:
        head_dir = ctrl[1] - ctrl[0]
        tail_dir = ctrl[-1] - ctrl[-2]
    head_dir = head_dir / np.linalg.norm(head_dir)
    tail_dir = tail_dir / np.linalg.norm(tail_dir)
    return NormalPlane(ctrl[0], -head_dir), NormalPlane(ctrl[-1], tail_dir)


def beyond_normal_plane(
    points: np.ndarray, head: NormalPlane, tail: NormalPlane
) -> np.ndarray:
    """Points strictly outside either half-space (on-plane points are kept
    inside)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    beyond_head = (points - head.point) @ head.normal > 0.0
    beyond_tail = (points - tail.point) @ tail.normal > 0.0
    return points[beyond_head | beyond_tail]


def project_to_sphere(center: np.ndarray, radius: float, point: np.ndarray) -> np.ndarray:
    """Radial projection of a point onto the sphere (center, radius)."""
    center = np.asarray(center, dtype=float)
    point = np.asarray(point, dtype=float)
    offset = point - center
    norm = np.linalg.norm(offset)
    if norm < 1e-12:
        raise DegenerateGeometryError("cannot project the sphere center onto the sphere")
    return center + radius * offset / norm


def expand(
    inner_world: np.ndarray,
    end_world: np.ndarray,
    f_xy: np.ndarray,
    f_xz: np.ndarray,
    world_to_lrf: Pose,
    radius: float,
    max_iter: int = _EXPAND_MAX_ITER,
    tol: float = _EXPAND_TOL,
    x_support=None,
) -> np.ndarray:
    """Next control point beyond ``end_world``, at chord distance ``radius``.

    Works in the observation's LRF: a seed offset along +-X (sign from the
    end-vs-inner ordering) is alternately lifted onto the cubic fits and
    projected onto the sphere around the end point.  ``x_support`` bounds
    the lift abscissa to the observation's LRF x-range, where the cubics
    are trustworthy; without it a noisy cubic extrapolated far past the
    data can catapult the iterate onto the backward sphere intersection.
    A non-converged iterate after ``max_iter`` rounds is accepted; it
    still lies on the sphere, so the chord length is exact and the outer
    extension loop can continue past regions where sphere and curve do
    not intersect.
    """
    inner = world_to_lrf.transform(inner_world)
    end = world_to_lrf.transform(end_world)
    sign = 1.0 if end[0] >= inner[0] else -1.0
    lo, hi = (-np.inf, np.inf) if x_support is None else x_support

    def lift(x):
        x = float(np.clip(x, lo, hi))
        return np.array([x, eval_cubic(f_xy, x), eval_cubic(f_xz, x)])

    iterate = end + np.array([sign * 3.0 * radius, 0.0, 0.0])
    for _ in range(max_iter):
        lifted = lift(iterate[0])
        if np.linalg.norm(lifted - end) < 1e-9:
            break  # curve folds onto the sphere center; keep the last iterate
        moved = project_to_sphere(end, radius, lifted)
        step = np.linalg.norm(moved - iterate)
        iterate = moved
        if step < tol:
            break

    # only accept points that actually extend the curve: when the end point
    # already sits at the edge of the data support, the clamped lift points
    # backward and extension must stop rather than fold the tail over
    if sign * (iterate[0] - end[0]) < 0.25 * radius:
        lifted = lift(end[0] + sign * radius)
        if np.linalg.norm(lifted - end) < 1e-9:
            return None
        iterate = project_to_sphere(end, radius, lifted)
        if sign * (iterate[0] - end[0]) < 0.25 * radius:
            return None
    return world_to_lrf.inverse().transform(iterate)


def extend_control_points(
    ctrl,
    obs: LaneObservation,
    pose: Pose,
    radius: float = DEFAULT_CHORD_RADIUS,
):
    """Grow a control-point set to cover an observation.

    ``ctrl`` is an (n, 3) world-frame array or None/empty for a new lane
    (seeded with the observation's first point).  Candidate points beyond
    the end normal planes drive repeated expansion at whichever end is
    closer, until none remain.  Returns (new_ctrl, added_head, added_tail).
    """
    world_points = pose.transform(obs.points)
    world_to_lrf = obs.lrf.transform.compose(pose.inverse())
    lane_dir_world = world_to_lrf.rotation[0]
    lrf_x = obs.lrf.to_lrf(obs.points)[:, 0]
    x_support = (float(lrf_x.min()), float(lrf_x.max()))

    if ctrl is None or len(ctrl) == 0:
        points = [world_points[0].copy()]
        seeded = True
    else:
        points = [np.asarray(p, dtype=float) for p in np.asarray(ctrl, dtype=float)]
        seeded = False

    added_head = 0
    added_tail = 0
    candidates = world_points
    for _ in range(_MAX_EXTEND_ROUNDS):
        planes = compute_normal_planes(np.asarray(points), fallback_direction=lane_dir_world)
        candidates = beyond_normal_plane(candidates, *planes)
        if len(candidates) == 0:
            break
        v0 = candidates[0]
        if len(points) == 1:
            # orientation not established yet: extend toward the candidate
            v0_x = world_to_lrf.transform(v0)[0]
            end_x = world_to_lrf.transform(points[0])[0]
            tail_side = v0_x >= end_x
            offset = lane_dir_world if tail_side else -lane_dir_world
            inner = points[0] - offset  # synthetic inner point behind the end
            new_point = expand(
                inner, points[0], obs.f_xy, obs.f_xz, world_to_lrf, radius, x_support=x_support
            )
        else:
            # side of the plane the candidate crossed; tie broken by gap
            beyond_head = float((v0 - planes[0].point) @ planes[0].normal) > 0.0
            beyond_tail = float((v0 - planes[1].point) @ planes[1].normal) > 0.0
            if beyond_head and beyond_tail:
                head_gap = np.linalg.norm(v0 - points[0])
                tail_gap = np.linalg.norm(v0 - points[-1])
                tail_side = head_gap > tail_gap
            else:
                tail_side = beyond_tail
            if tail_side:
                new_point = expand(
                    points[-2], points[-1], obs.f_xy, obs.f_xz, world_to_lrf, radius,
                    x_support=x_support,
                )
            else:
                new_point = expand(
                    points[1], points[0], obs.f_xy, obs.f_xz, world_to_lrf, radius,
                    x_support=x_support,
                )
        if new_point is None:
            # this observation cannot push that end any further (candidates
            # there are noise spill past the data support); drop them
            plane = planes[1] if tail_side else planes[0]
            keep = (candidates - plane.point) @ plane.normal <= 0.0
            candidates = candidates[keep]
            continue
        if tail_side:
            points.append(new_point)
            added_tail += 1
        else:
            points.insert(0, new_point)
            added_head += 1
    else:
        logger.warning("control-point extension hit the round limit; truncating")

    if seeded:
        added_tail += 1  # count the seed so callers see every new row
    return np.asarray(points), added_head, added_tail


@dataclass(frozen=True)
class PointToSplineFactor:
    """One observed world point tied to the four control points of its
    segment through frozen basis coefficients."""

    node_ids: tuple
    coeffs: np.ndarray  # (4,) basis at the frozen u
    target: np.ndarray  # (3,) world point at the refined pose
    weight: float  # 1 / sigma^2


@dataclass(frozen=True)
class EndpointRegularizationFactor:
    """Frozen relative offset between an end control point and its
    neighbor."""

    end_node: int
    neighbor_node: int
    offset: np.ndarray  # (3,) frozen (end - neighbor) at creation
    weight: float


@dataclass
class OptimizeInfo:
    cost_before: float
    cost_after: float
    n_free: int
    batch: bool
    diverged: bool = False


class MapState:
    """All landmarks, the accumulated measurement factors, and the refined
    per-frame poses.

    Owned by a single pipeline sequence; factor solves read immutable
    snapshots of the factor arrays.
    """

    def __init__(
        self,
        chord_radius: float = DEFAULT_CHORD_RADIUS,
        endpoint_sigma: float = DEFAULT_ENDPOINT_SIGMA,
        sigma_floor: float = DEFAULT_SIGMA_FLOOR,
    ):
        self.chord_radius = chord_radius
        self.endpoint_sigma = endpoint_sigma
        self.sigma_floor = sigma_floor
        self.landmarks: dict = {}
        self.point_factors: list = []
        self.endpoint_factors: dict = {}  # (lane_id, "head"|"tail") -> factor
        self.poses: list = []
        self.dirty_nodes: set = set()
        self._next_landmark_id = 0
        self._next_node_id = 0
        # columnar mirror of point_factors for vectorized solves
        self._pf_size = 0
        self._pf_nodes = np.zeros((256, 4), dtype=np.int64)
        self._pf_coeffs = np.zeros((256, 4))
        self._pf_targets = np.zeros((256, 3))
        self._pf_weights = np.zeros(256)
        self._node_factor_count: dict = {}
        self._node_interior_count: dict = {}

    def _point_factor_indices(self, nodes) -> np.ndarray:
        """Indices of point factors touching any of the given nodes."""
        if self._pf_size == 0:
            return np.zeros(0, dtype=np.int64)
        flags = np.zeros(self._next_node_id, dtype=bool)
        flags[list(nodes)] = True
        mask = flags[self._pf_nodes[: self._pf_size]].any(axis=1)
        return np.nonzero(mask)[0]

    # ---- landmark lifecycle -------------------------------------------------

    def _new_nodes(self, count: int) -> list:
        ids = list(range(self._next_node_id, self._next_node_id + count))
        self._next_node_id += count
        return ids

    def spawn_landmark(self, obs: LaneObservation, pose: Pose, frame_index: int) -> LaneLandmark:
        """Create a landmark from an unmatched observation, running control
        point extension immediately."""
        ctrl, _, _ = extend_control_points(None, obs, pose, self.chord_radius)
        lane_id = self._next_landmark_id
        self._next_landmark_id += 1
        landmark = LaneLandmark(
            id=lane_id,
            category=obs.category,
            created_frame=frame_index,
            last_observed_frame=frame_index,
            ctrl=ctrl,
            node_ids=self._new_nodes(len(ctrl)),
        )
        self.landmarks[lane_id] = landmark
        self._refresh_endpoint_factors(landmark, head=True, tail=True)
        return landmark

    def extend_landmark(
        self, landmark: LaneLandmark, obs: LaneObservation, pose: Pose, frame_index: int
    ):
        """Extend a matched landmark over the new observation; endpoint
        factors at extended ends are re-frozen (the superseded factor is
        dropped)."""
        ctrl, added_head, added_tail = extend_control_points(
            landmark.ctrl, obs, pose, self.chord_radius
        )
        if added_head or added_tail:
            head_ids = self._new_nodes(added_head)
            tail_ids = self._new_nodes(added_tail)
            landmark.node_ids = head_ids + landmark.node_ids + tail_ids
            landmark.ctrl = ctrl
            self._refresh_endpoint_factors(
                landmark, head=added_head > 0, tail=added_tail > 0
            )
        landmark.last_observed_frame = frame_index
        return added_head, added_tail

    def _refresh_endpoint_factors(self, landmark: LaneLandmark, head: bool, tail: bool):
        # immature landmarks carry no factors at all
        if len(landmark.ctrl) < 4:
            return
        weight = 1.0 / self.endpoint_sigma**2
        if head or (landmark.id, "head") not in self.endpoint_factors:
            self.endpoint_factors[(landmark.id, "head")] = EndpointRegularizationFactor(
                end_node=landmark.node_ids[0],
                neighbor_node=landmark.node_ids[1],
                offset=landmark.ctrl[0] - landmark.ctrl[1],
                weight=weight,
            )
            self.dirty_nodes.update(landmark.node_ids[:2])
        if tail or (landmark.id, "tail") not in self.endpoint_factors:
            self.endpoint_factors[(landmark.id, "tail")] = EndpointRegularizationFactor(
                end_node=landmark.node_ids[-1],
                neighbor_node=landmark.node_ids[-2],
                offset=landmark.ctrl[-1] - landmark.ctrl[-2],
                weight=weight,
            )
            self.dirty_nodes.update(landmark.node_ids[-2:])

    # ---- factors ------------------------------------------------------------

    def add_point_factor(self, factor: PointToSplineFactor):
        index = len(self.point_factors)
        self.point_factors.append(factor)
        if self._pf_size == len(self._pf_weights):
            for name in ("_pf_nodes", "_pf_coeffs", "_pf_targets", "_pf_weights"):
                old = getattr(self, name)
                grown = np.zeros((2 * len(old),) + old.shape[1:], dtype=old.dtype)
                grown[: len(old)] = old
                setattr(self, name, grown)
        self._pf_nodes[index] = factor.node_ids
        self._pf_coeffs[index] = factor.coeffs
        self._pf_targets[index] = factor.target
        self._pf_weights[index] = factor.weight
        self._pf_size += 1
        for node in factor.node_ids:
            self._node_factor_count[node] = self._node_factor_count.get(node, 0) + 1
        for node in factor.node_ids[1:3]:  # interior roles carry real weight
            self._node_interior_count[node] = self._node_interior_count.get(node, 0) + 1
        self.dirty_nodes.update(factor.node_ids)

    # ---- positions ----------------------------------------------------------

    def node_positions(self) -> np.ndarray:
        """Dense (next_node_id, 3) array of current control point positions."""
        positions = np.zeros((self._next_node_id, 3))
        for landmark in self.landmarks.values():
            positions[landmark.node_ids] = landmark.ctrl
        return positions

    def _write_positions(self, positions: np.ndarray):
        for landmark in self.landmarks.values():
            landmark.ctrl = positions[landmark.node_ids].copy()

    def snapshot(self) -> list:
        """Copy of the landmark geometry for causal per-frame scoring."""
        return [
            (lm.id, lm.category, lm.ctrl.copy(), lm.created_frame, lm.last_observed_frame)
            for lm in self.landmarks.values()
        ]

    def control_point_count(self) -> int:
        return sum(len(lm.ctrl) for lm in self.landmarks.values())


def add_frame_factors(
    map_state: MapState,
    observations: list,
    matches: dict,
    pose: Pose,
    frame_index: int,
) -> int:
    """Add one point-to-spline factor per matched, parameterizable point,
    weighted by the observation's per-point deviation.  Returns the number
    of factors added; factors are never discarded afterwards."""
    added = 0
    for obs_index, lm_id in matches.items():
        landmark = map_state.landmarks[lm_id]
        spline = landmark.spline
        if spline is None:
            continue
        obs = observations[obs_index]
        world = pose.transform(obs.points)
        segments, us, valid = spline.parameterize_many(world)
        if not np.any(valid):
            continue
        coeffs = basis_coefficients(us[valid], spline.tau)
        sigmas = np.maximum(obs.sigmas[valid], map_state.sigma_floor)
        node_ids = landmark.node_ids
        for seg, c, target, sigma in zip(segments[valid], coeffs, world[valid], sigmas):
            map_state.add_point_factor(
                PointToSplineFactor(
                    node_ids=tuple(node_ids[seg : seg + 4]),
                    coeffs=c,
                    target=target,
                    weight=1.0 / sigma**2,
                )
            )
            added += 1
    logger.debug("frame %d: added %d point factors", frame_index, added)
    return added


def total_cost(map_state: MapState) -> float:
    """Weighted squared residual over every factor in the map."""
    positions = map_state.node_positions()
    indices = np.arange(map_state._pf_size)
    return _subset_cost(map_state, positions, indices, map_state.endpoint_factors.values())


def _subset_cost(map_state: MapState, positions, pf_indices, ep_factors) -> float:
    cost = 0.0
    if len(pf_indices):
        nodes = map_state._pf_nodes[pf_indices]
        coeffs = map_state._pf_coeffs[pf_indices]
        targets = map_state._pf_targets[pf_indices]
        weights = map_state._pf_weights[pf_indices]
        predicted = np.einsum("fc,fcd->fd", coeffs, positions[nodes])
        cost += float(np.sum(weights * np.sum((predicted - targets) ** 2, axis=1)))
    for factor in ep_factors:
        residual = (
            positions[factor.end_node] - positions[factor.neighbor_node] - factor.offset
        )
        cost += factor.weight * float(residual @ residual)
    return cost


def optimize_incremental(
    map_state: MapState, touched=None, batch: bool = False
) -> OptimizeInfo:
    """Re-solve the control points affected by new factors (plus their
    one-ring), holding the rest fixed; ``batch=True`` solves every
    factor-constrained node from scratch.

    The factors are linear in the control points (u frozen at insertion),
    so each solve is one exact least-squares step and never increases the
    total cost.
    """
    if touched is None:
        touched = set(map_state.dirty_nodes)
    if batch:
        free = set(map_state._pf_nodes[: map_state._pf_size].ravel().tolist())
        for factor in map_state.endpoint_factors.values():
            free.add(factor.end_node)
            free.add(factor.neighbor_node)
    else:
        if not touched:
            return OptimizeInfo(0.0, 0.0, 0, batch=False)
        free = set(touched)
        ring = map_state._point_factor_indices(touched)
        if len(ring):
            free.update(map_state._pf_nodes[ring].ravel().tolist())
        for factor in map_state.endpoint_factors.values():
            if factor.end_node in touched or factor.neighbor_node in touched:
                free.add(factor.end_node)
                free.add(factor.neighbor_node)
    # under-observed control points stay at their extension positions: a
    # node seen only through the vanishing outer basis coefficients (the
    # permanent P0/P3 roles) or through one or two points would be overfit
    counts = map_state._node_factor_count
    interior = map_state._node_interior_count
    free = {
        n
        for n in free
        if counts.get(n, 0) >= MIN_NODE_OBSERVATIONS and interior.get(n, 0) >= 1
    }
    map_state.dirty_nodes.clear()
    if not free:
        return OptimizeInfo(0.0, 0.0, 0, batch=batch)

    pf_indices = map_state._point_factor_indices(free)
    ep_factors = [
        f
        for f in map_state.endpoint_factors.values()
        if f.end_node in free or f.neighbor_node in free
    ]

    system_nodes = set(free)
    if len(pf_indices):
        system_nodes.update(map_state._pf_nodes[pf_indices].ravel().tolist())
    for factor in ep_factors:
        system_nodes.add(factor.end_node)
        system_nodes.add(factor.neighbor_node)
    system_nodes = sorted(system_nodes)
    m = len(system_nodes)
    col_lookup = np.full(map_state._next_node_id, -1, dtype=np.int64)
    col_lookup[system_nodes] = np.arange(m)

    positions = map_state.node_positions()
    x = positions[system_nodes]  # (m, 3)

    h = np.zeros((m, m))
    b = np.zeros((m, 3))
    if len(pf_indices):
        coeffs = map_state._pf_coeffs[pf_indices]
        targets = map_state._pf_targets[pf_indices]
        weights = map_state._pf_weights[pf_indices]
        cols = col_lookup[map_state._pf_nodes[pf_indices]]
        flat_idx = []
        flat_val = []
        for a in range(4):
            wc = weights * coeffs[:, a]
            for c_ in range(4):
                flat_idx.append(cols[:, a] * m + cols[:, c_])
                flat_val.append(wc * coeffs[:, c_])
        h += np.bincount(
            np.concatenate(flat_idx), weights=np.concatenate(flat_val), minlength=m * m
        ).reshape(m, m)
        b_idx = np.concatenate([cols[:, a] for a in range(4)])
        for axis in range(3):
            b_val = np.concatenate(
                [weights * coeffs[:, a] * targets[:, axis] for a in range(4)]
            )
            b[:, axis] += np.bincount(b_idx, weights=b_val, minlength=m)
    for factor in ep_factors:
        e, n_ = col_lookup[factor.end_node], col_lookup[factor.neighbor_node]
        w = factor.weight
        h[e, e] += w
        h[n_, n_] += w
        h[e, n_] -= w
        h[n_, e] -= w
        b[e] += w * factor.offset
        b[n_] -= w * factor.offset

    # untouched factors keep constant cost, so the subset cost decides
    cost_before = _subset_cost(map_state, positions, pf_indices, ep_factors)
    grad = h @ x - b  # (m, 3)
    free_rows = col_lookup[sorted(free)]
    h_ff = h[np.ix_(free_rows, free_rows)]
    rhs = -grad[free_rows]
    # rank truncation: directions seen only through vanishing basis
    # coefficients must not move (their gradient is equally vanishing)
    delta, *_ = np.linalg.lstsq(h_ff, rhs, rcond=1e-7)
    if not np.all(np.isfinite(delta)):
        logger.warning("map solve produced non-finite update; keeping estimates")
        return OptimizeInfo(cost_before, cost_before, len(free), batch, diverged=True)

    # exact quadratic cost change in step coordinates (the absolute
    # quadratic form cancels catastrophically for world-scale positions)
    cost_delta = float(
        np.sum(delta * (h_ff @ delta)) + 2.0 * np.sum(rhs * -delta)
    )
    if cost_delta > 1e-9 * max(1.0, cost_before):
        logger.warning("map solve increased cost; keeping previous estimates")
        return OptimizeInfo(cost_before, cost_before, len(free), batch, diverged=True)

    x[free_rows] += delta
    cost_after = max(cost_before + cost_delta, 0.0)
    positions[system_nodes] = x
    map_state._write_positions(positions)
    return OptimizeInfo(cost_before, cost_after, len(free), batch)


def solve_batch(map_state: MapState) -> OptimizeInfo:
    """From-scratch full solve over identical factors (the batch oracle)."""
    return optimize_incremental(map_state, batch=True)
