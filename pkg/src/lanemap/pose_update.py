"""Per-frame pose refinement against associated landmark splines.

Lane markings constrain the pose only laterally, so each matched point
contributes a point-to-tangent residual (I - d d^T)(T p - p(u)); an
odometry prior log(T_odom^-1 T), weighted per-axis from the pose noise,
keeps the solve well-posed along the unobservable directions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Pose,
    PoseNoise,
    pose_exp,
    pose_log,
    skew,
    so3_right_jacobian_inverse,
)
from .spline import basis_coefficients, derivative_coefficients

logger = logging.getLogger(__name__)

DEFAULT_KERNEL_SCALE = 1.0  # Huber scale, meters
_LAMBDA_MIN, _LAMBDA_MAX = 1e-6, 1e2
_MAX_INNER = 20


@dataclass
class TangentResidualTerm:
    """One matched observation point tied to its landmark foot point."""

    point_body: np.ndarray  # body-frame detection point
    point_world: np.ndarray  # world point at construction pose
    foot: np.ndarray  # p(u_k) on the landmark spline
    tangent: np.ndarray  # unit local direction d_k
    weight: float = 1.0  # robust-kernel state, updated during solves


def build_terms(
    observations: list,
    assoc,
    landmarks: dict,
    pose_init: Pose,
    max_range: float = 30.0,
) -> list:
    """Point-to-tangent terms for every matched, parameterizable point
    within ``max_range`` meters of the camera.

    Points whose coarse-to-fine projection fails are skipped, as are
    degenerate near-zero tangents.  The range cap keeps the solve anchored
    to close, accurate detections and the mature part of the map; distant
    points land on freshly extended spline ends whose uneven tangents leak
    spurious longitudinal gradients.
    """
    terms = []
    for obs_index, lm_id in assoc.matches.items():
        spline = landmarks[lm_id].spline
        if spline is None:
            continue
        body = observations[obs_index].points
        keep = np.linalg.norm(body, axis=1) <= max_range
        body = body[keep]
        if len(body) == 0:
            continue
        world = pose_init.transform(body)
        segments, us, valid = spline.parameterize_many(world)
        if not np.any(valid):
            continue
        seg = segments[valid]
        u = us[valid]
        idx = seg[:, None] + np.arange(4)[None, :]
        ctrl = spline.control_points[idx]
        feet = np.einsum("kc,kcd->kd", basis_coefficients(u, spline.tau), ctrl)
        tangents = np.einsum("kc,kcd->kd", derivative_coefficients(u, spline.tau), ctrl)
        norms = np.linalg.norm(tangents, axis=1)
        ok = norms > 1e-9
        for pb, pw, foot, tang, n in zip(
            body[valid][ok], world[valid][ok], feet[ok], tangents[ok], norms[ok]
        ):
            terms.append(TangentResidualTerm(pb, pw, foot, tang / n))
    return terms


def tangent_residual(pose: Pose, term: TangentResidualTerm) -> np.ndarray:
    """(I - d d^T)(T p - p(u)) for the current pose."""
    projector = np.eye(3) - np.outer(term.tangent, term.tangent)
    return projector @ (pose.transform(term.point_body) - term.foot)


def tangent_jacobian(pose: Pose, term: TangentResidualTerm) -> np.ndarray:
    """Jacobian of the tangent residual w.r.t. a right perturbation
    T <- T * exp([omega, v]), rotation-first (3, 6)."""
    projector = np.eye(3) - np.outer(term.tangent, term.tangent)
    j_rot = projector @ (pose.rotation @ (-skew(term.point_body)))
    j_trans = projector @ pose.rotation
    return np.hstack([j_rot, j_trans])


@dataclass
class RefineResult:
    """Outcome of one pose refinement."""

    pose: Pose
    converged: bool
    initial_cost: float
    final_cost: float
    n_terms: int
    outer_rounds: int


def refine_pose(
    pose_odom: Pose,
    terms: list,
    noise: PoseNoise,
    kernel_scale: float = DEFAULT_KERNEL_SCALE,
    *,
    rebuild=None,
    max_outer: int = 5,
    pose_tol: float = 1e-4,
) -> RefineResult:
    """Refine a pose by damped on-manifold least squares from ``pose_odom``.

    ``rebuild``, when given, is called with the current pose estimate
    between solver rounds to re-parameterize the terms against the splines
    (up to ``max_outer`` rounds, stopping once the pose change drops below
    ``pose_tol``).  Returns the odometry pose unchanged when no terms are
    available; a solve that cannot decrease the cost at any damping level
    returns the odometry pose flagged as not converged.
    """
    if not terms:
        return RefineResult(pose_odom.copy(), True, 0.0, 0.0, 0, 0)

    w_prior = np.concatenate(
        [
            np.full(3, 1.0 / max(noise.sigma_theta, 1e-6)),
            np.full(3, 1.0 / max(noise.sigma_t, 1e-6)),
        ]
    )

    pose = pose_odom.copy()
    initial_cost = None
    final_cost = 0.0
    any_accept = False
    stalled = False
    rounds = 0
    n_terms = len(terms)

    for outer in range(max_outer):
        rounds = outer + 1
        if outer > 0 and rebuild is not None:
            terms = rebuild(pose)
            if not terms:
                break
            n_terms = len(terms)
        body, feet, projectors = _stack_terms(terms)
        if initial_cost is None:
            initial_cost = _total_cost(
                pose, body, feet, projectors, pose_odom, w_prior, kernel_scale
            )

        pose, cost, accepted, step, stalled = _solve_fixed_terms(
            pose, body, feet, projectors, pose_odom, w_prior, kernel_scale
        )
        final_cost = cost
        any_accept = any_accept or accepted

        if rebuild is None or step < pose_tol:
            break

    if not any_accept and stalled:
        # gradient left but every damping retry increased the cost
        logger.warning("pose refinement diverged; keeping odometry pose")
        return RefineResult(
            pose_odom.copy(), False, float(initial_cost), float(initial_cost), n_terms, rounds
        )
    return RefineResult(pose, True, float(initial_cost), float(final_cost), n_terms, rounds)


def _stack_terms(terms: list):
    body = np.array([t.point_body for t in terms])
    feet = np.array([t.foot for t in terms])
    tangents = np.array([t.tangent for t in terms])
    projectors = np.eye(3)[None] - tangents[:, :, None] * tangents[:, None, :]
    return body, feet, projectors


def _huber_cost(norms: np.ndarray, scale: float) -> float:
    small = norms <= scale
    return float(
        np.sum(norms[small] ** 2) + np.sum(2.0 * scale * norms[~small] - scale**2)
    )


def _total_cost(pose, body, feet, projectors, anchor, w_prior, scale):
    world = pose.transform(body)
    residuals = np.einsum("kij,kj->ki", projectors, world - feet)
    norms = np.linalg.norm(residuals, axis=1)
    prior = w_prior * pose_log(anchor.inverse().compose(pose))
    return _huber_cost(norms, scale) + float(prior @ prior)


def _solve_fixed_terms(pose, body, feet, projectors, anchor, w_prior, scale):
    """Levenberg-Marquardt over a fixed term set.

    Returns (pose, cost, any_step_accepted, total_step_norm, stalled); the
    step norm measures the pose change across the whole solve and stalled
    flags a significant gradient that no damping level could descend.
    """
    start = pose.copy()
    cost = _total_cost(pose, body, feet, projectors, anchor, w_prior, scale)
    lam = 1e-4
    accepted_any = False
    stalled = False

    for _ in range(_MAX_INNER):
        world = pose.transform(body)
        residuals = np.einsum("kij,kj->ki", projectors, world - feet)
        norms = np.linalg.norm(residuals, axis=1)
        # IRLS square-root weights for the Huber kernel
        sqrt_w = np.where(norms <= scale, 1.0, np.sqrt(scale / np.maximum(norms, 1e-12)))

        j_rot = np.einsum(
            "kij,kjl->kil", projectors, pose.rotation[None] @ (-_skew_many(body))
        )
        j_trans = projectors @ pose.rotation
        jac = np.concatenate([j_rot, j_trans], axis=2) * sqrt_w[:, None, None]
        res = residuals * sqrt_w[:, None]

        rel = anchor.inverse().compose(pose)
        prior_res = w_prior * pose_log(rel)
        jr_inv = so3_right_jacobian_inverse(pose_log(rel)[:3])
        prior_jac = np.zeros((6, 6))
        prior_jac[:3, :3] = w_prior[0] * jr_inv
        prior_jac[3:, 3:] = w_prior[3] * rel.rotation

        h = np.einsum("kij,kil->jl", jac, jac) + prior_jac.T @ prior_jac
        g = np.einsum("kij,ki->j", jac, res) + prior_jac.T @ prior_res
        if np.linalg.norm(g) < 1e-9:
            break

        stepped = False
        delta = np.zeros(6)
        while lam <= _LAMBDA_MAX:
            damped = h + lam * np.diag(np.diag(h)) + 1e-12 * np.eye(6)
            try:
                delta = np.linalg.solve(damped, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = pose.compose(pose_exp(delta))
            cand_cost = _total_cost(
                candidate, body, feet, projectors, anchor, w_prior, scale
            )
            if cand_cost < cost:
                pose = candidate
                cost = cand_cost
                lam = max(lam / 10.0, _LAMBDA_MIN)
                stepped = True
                accepted_any = True
                break
            lam *= 10.0
        if not stepped:
            stalled = not accepted_any
            break
        if np.linalg.norm(delta) < 1e-10:
            break

    step_norm = float(np.linalg.norm(pose_log(start.inverse().compose(pose))))
    return pose, cost, accepted_any, step_norm, stalled


def _skew_many(vecs: np.ndarray) -> np.ndarray:
    out = np.zeros((len(vecs), 3, 3))
    out[:, 0, 1] = -vecs[:, 2]
    out[:, 0, 2] = vecs[:, 1]
    out[:, 1, 0] = vecs[:, 2]
    out[:, 1, 2] = -vecs[:, 0]
    out[:, 2, 0] = -vecs[:, 1]
    out[:, 2, 1] = vecs[:, 0]
    return out
