"""Ray models for the depth camera and the spherical probe, and a synthetic depth scanner."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .primitives import Line, Plane


@dataclass(frozen=True)
class DepthSensorModel:
    h_fov_deg: float = 60.0
    v_fov_deg: float = 45.0
    max_range: float = 3.0
    min_range: float = 0.3
    rays: int = 200

    def __post_init__(self):
        if not 0.0 < self.min_range < self.max_range:
            raise ValueError("need 0 < min_range < max_range")
        for fov in (self.h_fov_deg, self.v_fov_deg):
            if not 0.0 <= fov < 180.0:
                raise ValueError("field of view must lie in [0, 180) degrees")


@dataclass(frozen=True)
class ProbeSensorModel:
    radius: float = 0.4
    rays: int = 200

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("probe radius must be positive")


def rng_for(*keys: int) -> np.random.Generator:
    """Generator seeded from a tuple of non-negative integers."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def view_frame(axis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward, left and up unit vectors for a view axis, up taken from world z."""
    f = np.asarray(axis, dtype=float)
    f = f / np.linalg.norm(f)
    ref = np.array([0.0, 0.0, 1.0])
    if abs(f @ ref) > 1.0 - 1e-9:
        ref = np.array([1.0, 0.0, 0.0])
    left = np.cross(ref, f)
    left /= np.linalg.norm(left)
    up = np.cross(f, left)
    return f, left, up


def frustum_rays(model: DepthSensorModel, axis, count: int, seed) -> np.ndarray:
    """Directions with pan and tilt drawn uniformly over the field of view."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    hh = math.radians(model.h_fov_deg) / 2.0
    vh = math.radians(model.v_fov_deg) / 2.0
    h = rng.uniform(-hh, hh, count) if hh > 0 else np.zeros(count)
    v = rng.uniform(-vh, vh, count) if vh > 0 else np.zeros(count)
    f, left, up = view_frame(axis)
    cv = np.cos(v)
    dirs = (cv * np.cos(h))[:, None] * f + (cv * np.sin(h))[:, None] * left + np.sin(v)[:, None] * up
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def sphere_rays(model: ProbeSensorModel, count: int, seed) -> np.ndarray:
    """Unit directions uniform on the sphere; each ray is ``model.radius`` long."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.standard_normal((count, 3))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    while np.any(norms < 1e-12):  # measure-zero, kept for completeness
        bad = norms[:, 0] < 1e-12
        z[bad] = rng.standard_normal((int(bad.sum()), 3))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z / norms


def ray_plane_distance(origin, dirs, plane: Plane) -> np.ndarray:
    """Distance along each ray to the plane, ``inf`` when moving away or parallel."""
    o = np.asarray(origin, dtype=float)
    denom = dirs @ plane.n_pi
    num = plane.d_pi - o @ plane.n_pi
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    return np.where((np.abs(denom) > 1e-15) & (t >= 0.0), t, np.inf)


def ray_cylinder_distance(origin, dirs, line: Line) -> np.ndarray:
    """First entry distance into an infinite cylinder, ``inf`` if missed.

    Origins inside the cylinder return 0.
    """
    o = np.asarray(origin, dtype=float)
    rel = o - line.p_l
    rel_p = rel - (rel @ line.d_l) * line.d_l
    d_p = dirs - np.outer(dirs @ line.d_l, line.d_l)
    a = np.einsum("ij,ij->i", d_p, d_p)
    b = 2.0 * d_p @ rel_p
    c = rel_p @ rel_p - line.radius**2
    if c <= 0.0:
        return np.zeros(dirs.shape[0])
    disc = b * b - 4.0 * a * c
    out = np.full(dirs.shape[0], np.inf)
    ok = (a > 1e-15) & (disc >= 0.0)
    t = (-b[ok] - np.sqrt(disc[ok])) / (2.0 * a[ok])
    out[np.nonzero(ok)[0][t >= 0.0]] = t[t >= 0.0]
    return out


def first_surface(origin, dirs, planes: Sequence[Plane], lines: Sequence[Line]) -> np.ndarray:
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    t = np.full(dirs.shape[0], np.inf)
    for p in planes:
        t = np.minimum(t, ray_plane_distance(origin, dirs, p))
    for line in lines:
        t = np.minimum(t, ray_cylinder_distance(origin, dirs, line))
    return t


@dataclass(frozen=True)
class DepthScan:
    origin: np.ndarray
    hits: np.ndarray  # (m, 3) measured surface points
    no_return: np.ndarray  # (k, 3) directions of rays that saw nothing within range
    dropped: int


def simulate_depth_scan(
    planes: Sequence[Plane],
    lines: Sequence[Line],
    origin,
    axis,
    model: DepthSensorModel,
    noise_std: float = 0.0,
    dropout: float = 0.0,
    seed=0,
    count: int | None = None,
    min_range_fault: bool = False,
) -> DepthScan:
    """Analytic scan of walls and pipes from ``origin`` looking along ``axis``.

    Range noise is Gaussian; a ``dropout`` fraction of rays returns nothing
    and is left out entirely. With ``min_range_fault`` a return closer than
    the minimum range is replaced by a uniform range in ``[0, max_range]``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = model.rays if count is None else count
    o = np.asarray(origin, dtype=float)
    dirs = frustum_rays(model, axis, n, rng)
    t = first_surface(o, dirs, planes, lines)
    noise = rng.standard_normal(n) * noise_std
    drop = rng.random(n) < dropout
    fault = rng.uniform(0.0, model.max_range, n)
    measured = t + noise
    if min_range_fault:
        close = t < model.min_range
        measured = np.where(close, fault, measured)
    ret = ~drop & (t <= model.max_range) & (measured > 0.0)
    hits = o + dirs[ret] * np.minimum(measured[ret], model.max_range)[:, None]
    no_ret = dirs[~drop & ~(t <= model.max_range)]
    return DepthScan(origin=o, hits=hits, no_return=no_ret, dropped=int(drop.sum()))
