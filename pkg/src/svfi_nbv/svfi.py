"""Chance-constrained point-to-plane VFIs for planes with Gaussian parameters.

A plane estimate ``pi_hat = [n; d]`` with covariance ``Sigma`` turns the
approach-rate inequality into a probabilistic one. Because the constrained
quantity

    f(pi) = n^T (J_t qdot + eta t) - eta d

is linear in the plane parameters, the chance constraint
``Pr(f >= eta d_safe) >= alpha`` is equivalent to the ordinary VFI row with
its bound lowered by ``b_alpha = Phi^-1(alpha) * sigma_f``. ``sigma_f`` depends
on ``qdot``; the row uses the command from the previous control period.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .primitives import CHANCE, ConstraintRow, Plane, point_plane_distance

_MC_CHUNK = 1 << 16


class CovarianceError(ValueError):
    pass


@dataclass(frozen=True)
class PlaneBelief:
    pi_hat: Plane
    sigma_pi: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma_pi, dtype=float)
        if s.shape != (4, 4):
            raise CovarianceError("plane covariance must be 4x4")
        if np.max(np.abs(s - s.T)) >= 1e-12:
            raise CovarianceError("plane covariance is not symmetric")
        if np.linalg.eigvalsh(s).min() < -1e-10:
            raise CovarianceError("plane covariance is not positive semidefinite")
        object.__setattr__(self, "sigma_pi", s)

    def flipped(self) -> "PlaneBelief":
        """Same plane with the opposite normal; the covariance is unchanged by the sign flip."""
        return PlaneBelief(self.pi_hat.flipped(), self.sigma_pi)


@dataclass(frozen=True)
class ChanceParams:
    alpha: float = 0.7
    eta: float = 1.0
    d_safe: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.eta < 0 or self.d_safe < 0:
            raise ValueError("eta and d_safe must be non-negative")


def std_normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


@lru_cache(maxsize=256)
def std_normal_quantile(alpha: float) -> float:
    """Inverse standard normal CDF by bisection on the erfc-based CDF."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if alpha == 0.5:
        return 0.0
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if std_normal_cdf(mid) < alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


def f_gradient(j_t, qdot_prev, t, eta: float) -> np.ndarray:
    """Gradient of f with respect to ``[n; d]``: ``[J_t qdot + eta t; -eta]``."""
    v = np.asarray(j_t, dtype=float) @ np.asarray(qdot_prev, dtype=float) + eta * np.asarray(t, dtype=float)
    return np.append(v, -eta)


def propagate_variance(grad, sigma_pi) -> float:
    var = float(grad @ np.asarray(sigma_pi, dtype=float) @ grad)
    if var < -1e-12:
        raise CovarianceError(f"propagated variance {var:.3g} is negative")
    return max(var, 0.0)


def buffer(belief: PlaneBelief, t, j_t, qdot_prev, params: ChanceParams) -> float:
    grad = f_gradient(j_t, qdot_prev, t, params.eta)
    return std_normal_quantile(params.alpha) * math.sqrt(propagate_variance(grad, belief.sigma_pi))


def surrogate_row(belief: PlaneBelief, t, j_t, qdot_prev, params: ChanceParams, label: str = "") -> ConstraintRow:
    """Deterministic surrogate ``-n^T J_t qdot <= eta (d - d_safe) - b_alpha``."""
    pi = belief.pi_hat
    d = point_plane_distance(t, pi)
    b = buffer(belief, t, j_t, qdot_prev, params)
    return ConstraintRow(
        coeffs=-(pi.n_pi @ j_t),
        bound=params.eta * (d - params.d_safe) - b,
        kind=CHANCE,
        label=label,
        meta={"distance": d, "d_safe": params.d_safe, "buffer": b},
    )


@dataclass(frozen=True)
class MonteCarloResult:
    satisfied: float  # renormalised sampled normals
    satisfied_raw: float  # Gaussian samples used as drawn
    n_samples: int

    @property
    def violation(self) -> float:
        return 1.0 - self.satisfied


def _psd_sqrt(sigma) -> np.ndarray:
    w, v = np.linalg.eigh(np.asarray(sigma, dtype=float))
    return v * np.sqrt(np.clip(w, 0.0, None))


def monte_carlo_violation_rate(
    plane: Plane,
    sigma,
    t,
    j_t,
    qdot,
    params: ChanceParams,
    n_samples: int = 100_000,
    seed: int = 0,
) -> MonteCarloResult:
    """Fraction of sampled planes ``pi ~ N(plane, sigma)`` for which the VFI holds.

    Sampling is split into fixed-size chunks with seeds spawned from ``seed``
    so the result does not depend on how the chunks are scheduled.
    """
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 1e4")
    a = np.asarray(j_t, dtype=float) @ np.asarray(qdot, dtype=float) + params.eta * np.asarray(t, dtype=float)
    mean = plane.as_vector()
    root = _psd_sqrt(sigma)
    threshold = params.eta * params.d_safe
    n_chunks = -(-n_samples // _MC_CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    ok = ok_raw = 0
    for k, child in enumerate(children):
        m = min(_MC_CHUNK, n_samples - k * _MC_CHUNK)
        z = np.random.default_rng(child).standard_normal((m, 4))
        samples = mean + z @ root.T
        normals = samples[:, :3]
        f_raw = normals @ a - params.eta * samples[:, 3]
        norms = np.linalg.norm(normals, axis=1)
        f = (normals @ a) / norms - params.eta * samples[:, 3]
        ok += int(np.count_nonzero(f >= threshold))
        ok_raw += int(np.count_nonzero(f_raw >= threshold))
    return MonteCarloResult(ok / n_samples, ok_raw / n_samples, n_samples)
