"""Coverage-first next-best-view selection.

Each candidate viewpoint is scored with two ray-cast gains over a read-only
grid: a visual gain (occupancy entropy of unobserved voxels seen by the depth
camera) and a coverage gain (occupied voxels not yet swept by the probe
sphere). The weighted sum picks the next controller set point.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._kernels import ray_info_sums
from .kinematics import TaskVector
from .sensing import DepthSensorModel, ProbeSensorModel, frustum_rays, rng_for, sphere_rays
from .worldmap import OCCUPIED, VoxelGrid, bernoulli_entropy, coverage_info_field, visual_info_field

LN2 = math.log(2.0)

VISUAL_STREAM, COVERAGE_STREAM, SAMPLE_STREAM = 0, 1, 2


class NoFreeVoxelsError(RuntimeError):
    pass


@dataclass
class Viewpoint:
    t_c: np.ndarray
    n_c: np.ndarray
    g_v: float = 0.0
    g_c: float = 0.0
    g_w: float = 0.0

    def set_point(self) -> TaskVector:
        return TaskVector(np.asarray(self.t_c, dtype=float), np.asarray(self.n_c, dtype=float))


def visual_voxel_info(pr: float, observed: bool) -> float:
    if observed:
        return 0.0
    return float(bernoulli_entropy(pr))


def coverage_voxel_info(state: int, covered: bool, quantum: float = LN2) -> float:
    return quantum if state == OCCUPIED and not covered else 0.0


def weighted_gain(g_v: float, g_c: float, beta: float) -> float:
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return beta * g_v + (1.0 - beta) * g_c


@dataclass(frozen=True)
class GainFields:
    """Per-voxel information and stopping mask shared by every candidate of one iteration."""

    occ: np.ndarray
    visual: np.ndarray
    coverage: np.ndarray

    @classmethod
    def from_grid(cls, grid: VoxelGrid, coverage_quantum: float = LN2) -> "GainFields":
        return cls(
            occ=grid.occupied_mask().astype(np.uint8),
            visual=visual_info_field(grid),
            coverage=coverage_info_field(grid, coverage_quantum),
        )


def _ray_sums(grid, origins, dirs, ranges, occ, info, backend):
    return ray_info_sums(origins, dirs, ranges, occ, info, grid.origin, grid.resolution, grid.dims, backend)


def visual_gain(grid: VoxelGrid, v: Viewpoint, model: DepthSensorModel, seed, fields: GainFields | None = None, backend=None) -> float:
    f = fields or GainFields.from_grid(grid)
    dirs = frustum_rays(model, v.n_c, model.rays, seed)
    origins = np.broadcast_to(np.asarray(v.t_c, dtype=float), dirs.shape)
    return float(np.sum(_ray_sums(grid, origins, dirs, model.max_range, f.occ, f.visual, backend)))


def coverage_gain(grid: VoxelGrid, v: Viewpoint, model: ProbeSensorModel, seed, fields: GainFields | None = None, backend=None) -> float:
    f = fields or GainFields.from_grid(grid)
    dirs = sphere_rays(model, model.rays, seed)
    origins = np.broadcast_to(np.asarray(v.t_c, dtype=float), dirs.shape)
    return float(np.sum(_ray_sums(grid, origins, dirs, model.radius, f.occ, f.coverage, backend)))


def candidate_seeds(base_seed: int, iteration: int, index: int):
    """Generators for the visual and coverage rays of one candidate."""
    return rng_for(base_seed, iteration, index, VISUAL_STREAM), rng_for(base_seed, iteration, index, COVERAGE_STREAM)


def score_candidates(
    grid: VoxelGrid,
    candidates: Sequence[Viewpoint],
    depth: DepthSensorModel,
    probe: ProbeSensorModel,
    beta: float,
    iteration: int,
    base_seed: int = 0,
    coverage_quantum: float = LN2,
    backend=None,
) -> list[Viewpoint]:
    """Fill ``g_v``, ``g_c`` and ``g_w`` in place.

    Rays for all candidates go through the kernel in one batch; per-candidate
    totals are the same sums :func:`visual_gain` and :func:`coverage_gain`
    produce with the generators from :func:`candidate_seeds`.
    """
    if not candidates:
        return []
    f = GainFields.from_grid(grid, coverage_quantum)
    vis_o, vis_d, cov_o, cov_d = [], [], [], []
    for i, v in enumerate(candidates):
        rv, rc = candidate_seeds(base_seed, iteration, i)
        dv = frustum_rays(depth, v.n_c, depth.rays, rv)
        dc = sphere_rays(probe, probe.rays, rc)
        vis_d.append(dv)
        cov_d.append(dc)
        vis_o.append(np.broadcast_to(np.asarray(v.t_c, dtype=float), dv.shape))
        cov_o.append(np.broadcast_to(np.asarray(v.t_c, dtype=float), dc.shape))
    sv = _ray_sums(grid, np.vstack(vis_o), np.vstack(vis_d), depth.max_range, f.occ, f.visual, backend)
    sc = _ray_sums(grid, np.vstack(cov_o), np.vstack(cov_d), probe.radius, f.occ, f.coverage, backend)
    sv = sv.reshape(len(candidates), depth.rays)
    sc = sc.reshape(len(candidates), probe.rays)
    for i, v in enumerate(candidates):
        v.g_v = float(np.sum(sv[i]))
        v.g_c = float(np.sum(sc[i]))
        v.g_w = weighted_gain(v.g_v, v.g_c, beta)
    return list(candidates)


def direction_from_pan_tilt(pan, tilt) -> np.ndarray:
    pan, tilt = np.asarray(pan, dtype=float), np.asarray(tilt, dtype=float)
    return np.stack([np.cos(tilt) * np.cos(pan), np.cos(tilt) * np.sin(pan), np.sin(tilt)], axis=-1)


def sample_candidates(grid: VoxelGrid, n: int, seed, allowed: Optional[np.ndarray] = None) -> list[Viewpoint]:
    """``n`` viewpoints at centres of uniformly drawn free voxels with uniform pan and tilt.

    Free here means confidently free (probability at or below the free
    threshold); ``allowed`` further restricts the voxel pool.
    """
    pool = grid.confidently_free_mask()
    if allowed is not None:
        pool = pool & allowed
    ids = np.nonzero(pool)[0]
    if ids.size == 0:
        raise NoFreeVoxelsError("no free voxels to sample candidates from")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pick = ids[rng.integers(0, ids.size, n)]
    pan = rng.uniform(-math.pi, math.pi, n)
    tilt = rng.uniform(-math.pi / 2.0, math.pi / 2.0, n)
    pos = grid.centers(pick)
    dirs = direction_from_pan_tilt(pan, tilt)
    return [Viewpoint(pos[i], dirs[i]) for i in range(n)]


def select_next(candidates: Sequence[Viewpoint]) -> tuple[Viewpoint, TaskVector]:
    """Highest weighted gain; ties go to the lowest index."""
    if not candidates:
        raise ValueError("no candidates to select from")
    best = int(np.argmax([c.g_w for c in candidates]))
    v = candidates[best]
    return v, v.set_point()


@dataclass
class PlannerState:
    control_rate: float = 100.0
    window_s: float = 4.0
    err_threshold: float = 1e-3
    stall_tol: float = 1e-4
    set_point: Optional[TaskVector] = None
    iteration: int = 0
    stopped: bool = False
    history: deque = field(default_factory=deque)

    def __post_init__(self):
        self.history = deque(self.history, maxlen=self.window_len)

    @property
    def window_len(self) -> int:
        return int(round(self.window_s * self.control_rate))

    def new_set_point(self, sp: TaskVector) -> None:
        self.set_point = sp
        self.iteration += 1
        self.history.clear()


def should_replan(state: PlannerState, err_norm: float) -> bool:
    """Record ``err_norm``; true once it is below threshold or flat over the whole window."""
    state.history.append(float(err_norm))
    if err_norm < state.err_threshold:
        return True
    if len(state.history) < state.window_len:
        return False
    return max(state.history) - min(state.history) < state.stall_tol


def should_stop(best_gain: float, threshold: float = 1.0) -> bool:
    return best_gain < threshold
