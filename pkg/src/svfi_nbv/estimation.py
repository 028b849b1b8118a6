"""Plane fitting with parameter covariance from noisy point samples."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .primitives import Plane
from .svfi import PlaneBelief

VARIANCE_FLOOR = 1e-10


class EstimationError(ValueError):
    pass


class TooFewPointsError(EstimationError):
    pass


class RankDeficientError(EstimationError):
    pass


class NoConsensusError(EstimationError):
    pass


@dataclass(frozen=True)
class PointSample:
    position: tuple[float, float, float]
    noise_std: float

    def __post_init__(self):
        if self.noise_std <= 0:
            raise ValueError("noise std must be positive")


def _as_points(points) -> np.ndarray:
    if len(points) and isinstance(points[0], PointSample):
        return np.array([p.position for p in points], dtype=float)
    return np.asarray(points, dtype=float).reshape(-1, 3)


def canonicalize(n: np.ndarray, d: float) -> tuple[np.ndarray, float]:
    """Fix the sign gauge: ``d >= 0``, or first nonzero normal component positive when ``d == 0``."""
    if d < 0:
        return -n, -d
    if d == 0:
        nz = n[np.nonzero(n)[0][0]]
        if nz < 0:
            return -n, 0.0
    return n, d


def _tangent_basis(n: np.ndarray) -> np.ndarray:
    """Orthonormal 3x2 basis of the plane orthogonal to ``n``."""
    u, _, _ = np.linalg.svd(n.reshape(3, 1))
    return u[:, 1:]


def fit_plane(points, min_points: int = 10, rank_tol: float = 1e-10) -> PlaneBelief:
    """Total least squares plane through the centroid with a Laplace covariance.

    The covariance lives on the tangent space of the unit-normal constraint
    (no variance along the normal itself), scaled by the residual variance,
    and each diagonal entry is floored at ``VARIANCE_FLOOR``.
    """
    pts = _as_points(points)
    n_pts = pts.shape[0]
    if n_pts < max(min_points, 3):
        raise TooFewPointsError(f"need at least {max(min_points, 3)} points, got {n_pts}")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scatter = centered.T @ centered
    w, v = np.linalg.eigh(scatter)
    if w[1] <= rank_tol * max(w[2], 1e-300):
        raise RankDeficientError("points are collinear; the plane is not determined")
    n = v[:, 0]
    d = float(n @ centroid)
    n, d = canonicalize(n, d)

    resid = pts @ n - d
    dof = max(n_pts - 3, 1)
    s2 = float(resid @ resid) / dof
    # Gauss-Newton Hessian of sum (n^T p - d)^2 over [n; d], halved
    design = np.hstack([pts, -np.ones((n_pts, 1))])
    info = design.T @ design
    basis = np.zeros((4, 3))
    basis[:3, :2] = _tangent_basis(n)
    basis[3, 2] = 1.0
    reduced = basis.T @ info @ basis
    sigma = s2 * basis @ np.linalg.solve(reduced, basis.T)
    sigma = 0.5 * (sigma + sigma.T)
    diag = np.diag(sigma).copy()
    sigma[np.diag_indices(4)] = np.maximum(diag, VARIANCE_FLOOR)
    return PlaneBelief(Plane(n, d), sigma)


def robust_fit_plane(
    points,
    inlier_threshold: float = 0.02,
    iterations: int = 100,
    seed: int = 0,
    min_points: int = 10,
) -> PlaneBelief:
    """RANSAC over 3-point hypotheses, then :func:`fit_plane` on the best consensus set."""
    pts = _as_points(points)
    n_pts = pts.shape[0]
    if n_pts < max(min_points, 3):
        raise TooFewPointsError(f"need at least {max(min_points, 3)} points, got {n_pts}")
    rng = np.random.default_rng(seed)
    # all hypotheses at once: (iterations, 3) sample indices without repeats
    idx = np.argsort(rng.random((iterations, n_pts)), axis=1)[:, :3] if n_pts <= 64 else _triplets(rng, n_pts, iterations)
    a, b, c = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
    normals = np.cross(b - a, c - a)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms >= 1e-12
    best_mask = None
    best_count = 0
    if valid.any():
        normals = normals[valid] / norms[valid, None]
        offsets = np.einsum("ij,ij->i", normals, a[valid])
        inliers = np.abs(pts @ normals.T - offsets) <= inlier_threshold
        counts = inliers.sum(axis=0)
        k = int(np.argmax(counts))  # first best hypothesis
        best_count = int(counts[k])
        best_mask = inliers[:, k]
    if best_mask is None or best_count < min_points:
        raise NoConsensusError(f"best consensus set has {best_count} points, need {min_points}")
    return fit_plane(pts[best_mask], min_points=min_points)


def _triplets(rng, n: int, m: int) -> np.ndarray:
    """``m`` rows of three distinct indices in ``range(n)``."""
    i = rng.integers(0, n, m)
    j = rng.integers(0, n - 1, m)
    j = j + (j >= i)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    k = rng.integers(0, n - 2, m)
    k = k + (k >= lo)
    k = k + (k >= hi)
    return np.stack([i, j, k], axis=1)
