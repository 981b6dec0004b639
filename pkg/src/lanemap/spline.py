"""Catmull-Rom splines: evaluation, tangents, arc-length sampling, and the
coarse-to-fine projection of a 3D point onto the curve.

A spline over N+2 control points has N evaluable cubic segments; segment
``l`` blends control points (l, l+1, l+2, l+3) and interpolates control
points l+1 and l+2 at u=0 and u=1.  The first and last control points shape
the tangents but are not on the curve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DegenerateGeometryError

DEFAULT_TENSION = 0.5

# Fine-phase waypoints: three interior samples, uniform in u, giving a
# 4-piece polyline per segment.
_WAYPOINT_US = np.array([0.0, 0.25, 0.5, 0.75, 1.0])


def blending_matrix(tau: float = DEFAULT_TENSION) -> np.ndarray:
    """4x4 blending matrix; tau controls how sharply the curve blends."""
    return np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [-tau, 0.0, tau, 0.0],
            [2.0 * tau, tau - 3.0, 3.0 - 2.0 * tau, -tau],
            [-tau, 2.0 - tau, tau - 2.0, tau],
        ]
    )


def basis_coefficients(u, tau: float = DEFAULT_TENSION) -> np.ndarray:
    """Weights of the four segment control points at parameter u.

    Accepts a scalar (returns shape (4,)) or an array of parameters
    (returns (..., 4)).  The four weights sum to 1 for every u.
    """
    u = np.asarray(u, dtype=float)
    powers = np.stack([np.ones_like(u), u, u * u, u * u * u], axis=-1)
    return powers @ blending_matrix(tau)


def derivative_coefficients(u, tau: float = DEFAULT_TENSION) -> np.ndarray:
    """d/du of basis_coefficients, same shapes."""
    u = np.asarray(u, dtype=float)
    powers = np.stack(
        [np.zeros_like(u), np.ones_like(u), 2.0 * u, 3.0 * u * u], axis=-1
    )
    return powers @ blending_matrix(tau)


@dataclass(frozen=True)
class SplineParam:
    """Location on a spline: segment index plus local parameter u in [0, 1]."""

    segment: int
    u: float


class CatmullRomSpline:
    """Immutable spline over ordered 3D control points (>= 4, consecutive
    points pairwise distinct)."""

    def __init__(self, control_points: np.ndarray, tau: float = DEFAULT_TENSION):
        pts = np.asarray(control_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("control points must be an (n, 3) array")
        if len(pts) < 4:
            raise ValueError("a Catmull-Rom spline needs at least 4 control points")
        gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(gaps <= 1e-6):
            raise DegenerateGeometryError("consecutive control points must be distinct")
        self.control_points = pts
        self.tau = float(tau)

    @property
    def segment_count(self) -> int:
        return len(self.control_points) - 3

    def _check(self, param: SplineParam):
        if not 0 <= param.segment < self.segment_count:
            raise IndexError(
                f"segment {param.segment} out of range [0, {self.segment_count})"
            )
        if not 0.0 <= param.u <= 1.0:
            raise ValueError(f"parameter u={param.u} outside [0, 1]")

    def _segment_points(self, segment: int) -> np.ndarray:
        return self.control_points[segment : segment + 4]

    def evaluate(self, param: SplineParam) -> np.ndarray:
        """Curve point at (segment, u)."""
        self._check(param)
        coeffs = basis_coefficients(param.u, self.tau)
        return coeffs @ self._segment_points(param.segment)

    def derivative(self, param: SplineParam) -> np.ndarray:
        """Unnormalized curve tangent at (segment, u).

        Raises for degenerate geometry where the tangent vanishes.
        """
        self._check(param)
        coeffs = derivative_coefficients(param.u, self.tau)
        tangent = coeffs @ self._segment_points(param.segment)
        if np.linalg.norm(tangent) < 1e-12:
            raise DegenerateGeometryError("zero tangent on spline segment")
        return tangent

    def arc_length(self, subdivisions: int = 16) -> float:
        """Total chord-accumulated arc length over all segments."""
        _, cumulative = self._chord_table(subdivisions)
        return float(cumulative[-1])

    def _chord_table(self, subdivisions: int = 16):
        """Global parameter grid (segment + u) and cumulative chord length."""
        n_seg = self.segment_count
        us = np.linspace(0.0, 1.0, subdivisions + 1)
        coeffs = basis_coefficients(us, self.tau)  # (subdivisions+1, 4)
        global_u = []
        points = []
        for l in range(n_seg):
            seg_pts = coeffs @ self._segment_points(l)
            if l == 0:
                points.append(seg_pts)
                global_u.append(l + us)
            else:
                points.append(seg_pts[1:])
                global_u.append(l + us[1:])
        points = np.vstack(points)
        global_u = np.concatenate(global_u)
        steps = np.linalg.norm(np.diff(points, axis=0), axis=1)
        cumulative = np.concatenate([[0.0], np.cumsum(steps)])
        return global_u, cumulative

    def sample(self, spacing: float, subdivisions: int = 16) -> np.ndarray:
        """Points along the curve approximately ``spacing`` meters apart.

        Always includes the curve start (segment 0, u=0) and end (last
        segment, u=1).  Spacing larger than the arc length yields exactly
        those two samples.
        """
        if spacing <= 0.0:
            raise ValueError("sample spacing must be positive")
        global_u, cumulative = self._chord_table(subdivisions)
        total = cumulative[-1]
        targets = np.arange(0.0, total, spacing)
        if total - targets[-1] > 1e-9:
            targets = np.append(targets, total)
        else:
            targets[-1] = total
        params = np.interp(targets, cumulative, global_u)
        segments = np.clip(params.astype(int), 0, self.segment_count - 1)
        us = params - segments
        coeffs = basis_coefficients(us, self.tau)  # (m, 4)
        idx = segments[:, None] + np.arange(4)[None, :]
        return np.einsum("mc,mcd->md", coeffs, self.control_points[idx])

    def parameterize_many(self, points: np.ndarray):
        """Coarse-to-fine projection of a batch of points onto the curve.

        Coarse phase: the two control points nearest each query must be
        sequentially adjacent, interior (neither first nor last control
        point), and both closer to the query than they are to each other.
        Fine phase: the accepted segment is approximated by the 4-piece
        polyline through its endpoints and three uniform-in-u waypoints;
        the query's foot point on that polyline maps to u through its
        arc-length fraction.

        Returns (segments, us, valid): queries failing the coarse
        conditions have valid=False and undefined segment/u.
        """
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1
        points = np.atleast_2d(points)
        cp = self.control_points
        n = len(cp)

        d2 = ((points[:, None, :] - cp[None, :, :]) ** 2).sum(axis=2)  # (k, n)
        # stable ordering keeps ties deterministic (lower index preferred)
        nearest_two = np.argsort(d2, axis=1, kind="stable")[:, :2]
        lo = nearest_two.min(axis=1)
        hi = nearest_two.max(axis=1)

        adjacent = hi == lo + 1
        interior = (lo >= 1) & (hi <= n - 2)
        chord = np.linalg.norm(cp[np.minimum(hi, n - 1)] - cp[lo], axis=1)
        d_lo = np.sqrt(d2[np.arange(len(points)), lo])
        d_hi = np.sqrt(d2[np.arange(len(points)), hi])
        within = (d_lo < chord) & (d_hi < chord)
        valid = adjacent & interior & within

        segments = np.where(valid, lo - 1, 0).astype(int)
        us = np.zeros(len(points))
        if np.any(valid):
            us[valid] = self._refine_on_polyline(points[valid], segments[valid])
        return segments, us, valid

    def _refine_on_polyline(self, points: np.ndarray, segments: np.ndarray) -> np.ndarray:
        coeffs = basis_coefficients(_WAYPOINT_US, self.tau)  # (5, 4)
        idx = segments[:, None] + np.arange(4)[None, :]
        seg_cp = self.control_points[idx]  # (k, 4, 3)
        waypoints = np.einsum("wc,kcd->kwd", coeffs, seg_cp)  # (k, 5, 3)

        starts = waypoints[:, :-1, :]  # (k, 4, 3)
        edges = waypoints[:, 1:, :] - starts
        edge_len2 = (edges**2).sum(axis=2)
        rel = points[:, None, :] - starts
        t = (rel * edges).sum(axis=2) / np.maximum(edge_len2, 1e-18)
        t = np.clip(t, 0.0, 1.0)
        feet = starts + t[..., None] * edges
        dist2 = ((points[:, None, :] - feet) ** 2).sum(axis=2)
        best = np.argmin(dist2, axis=1)

        edge_len = np.sqrt(edge_len2)
        cum = np.concatenate(
            [np.zeros((len(points), 1)), np.cumsum(edge_len, axis=1)], axis=1
        )
        rows = np.arange(len(points))
        s_foot = cum[rows, best] + t[rows, best] * edge_len[rows, best]
        total = np.maximum(cum[:, -1], 1e-18)
        return np.clip(s_foot / total, 0.0, 1.0)

    def parameterize(self, point: np.ndarray):
        """Project one point onto the curve; None when the coarse conditions
        fail (the point is then excluded from residuals)."""
        segments, us, valid = self.parameterize_many(np.asarray(point, dtype=float))
        if not valid[0]:
            return None
        param = SplineParam(int(segments[0]), float(us[0]))
        self._assert_conditions(point, param)
        return param

    def _assert_conditions(self, point: np.ndarray, param: SplineParam):
        # re-assert the coarse acceptance conditions on every return
        lo = param.segment + 1
        cp = self.control_points
        chord = np.linalg.norm(cp[lo + 1] - cp[lo])
        assert 1 <= lo < lo + 1 <= len(cp) - 2
        assert np.linalg.norm(point - cp[lo]) < chord
        assert np.linalg.norm(point - cp[lo + 1]) < chord
