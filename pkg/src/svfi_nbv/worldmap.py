"""Dense occupancy voxel grid with coverage bookkeeping and ray traversal."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import traverse_rays

UNKNOWN, FREE, OCCUPIED, RESIDUAL = 0, 1, 2, 3
STATE_NAMES = ("unknown", "free", "occupied", "residual")

SNAPSHOT_MAGIC = b"SVFIGRID"
SNAPSHOT_VERSION = 1

_OBSERVED, _COVERED, _RESIDUAL = 1, 2, 4


class GridError(ValueError):
    pass


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class OccupancyParams:
    p_hit: float = 0.7
    p_miss: float = 0.4
    l_min: float = -2.0
    l_max: float = 3.5
    p_occ_min: float = 0.7
    p_free_max: float = 0.3

    @property
    def l_hit(self) -> float:
        return logit(self.p_hit)

    @property
    def l_miss(self) -> float:
        return logit(self.p_miss)

    @property
    def l_occ(self) -> float:
        return logit(self.p_occ_min)

    @property
    def l_free(self) -> float:
        return logit(self.p_free_max)


@dataclass
class VoxelGrid:
    origin: np.ndarray
    resolution: float
    dims: tuple
    params: OccupancyParams = field(default_factory=OccupancyParams)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        if self.resolution <= 0:
            raise GridError("resolution must be positive")
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise GridError("dims must be three positive counts")
        n = self.size
        self.logodds = np.zeros(n)
        self.observed = np.zeros(n, dtype=bool)
        self.covered = np.zeros(n, dtype=bool)
        self.residual = np.zeros(n, dtype=bool)

    @classmethod
    def cube(cls, side: float = 1.5, resolution: float = 0.05, params: OccupancyParams | None = None) -> "VoxelGrid":
        n = int(round(side / resolution))
        return cls(np.zeros(3), resolution, (n, n, n), params or OccupancyParams())

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.resolution * np.asarray(self.dims)

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.origin) and np.all(p <= self.upper))

    def ijk(self, flat):
        flat = np.asarray(flat)
        ny, nz = self.dims[1], self.dims[2]
        return np.stack([flat // (ny * nz), (flat // nz) % ny, flat % nz], axis=-1)

    def flat(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk)
        return (ijk[..., 0] * self.dims[1] + ijk[..., 1]) * self.dims[2] + ijk[..., 2]

    def index_of(self, points) -> np.ndarray:
        """Flat index of the voxel holding each point, -1 outside the grid."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        ijk = np.floor((p - self.origin) / self.resolution).astype(np.int64)
        dims = np.asarray(self.dims)
        on_top = (ijk == dims) & (p <= self.upper)
        ijk[on_top] -= 1
        inside = np.all((ijk >= 0) & (ijk < dims), axis=1)
        out = np.full(p.shape[0], -1, dtype=np.int64)
        out[inside] = self.flat(ijk[inside])
        return out

    def centers(self, flat) -> np.ndarray:
        return self.origin + (self.ijk(flat) + 0.5) * self.resolution

    def probability(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logodds))

    def occupied_mask(self) -> np.ndarray:
        # one hit from the prior lands exactly on the threshold; count it
        return self.observed & (self.logodds >= self.params.l_occ - 1e-12)

    def free_mask(self) -> np.ndarray:
        return self.observed & ~self.occupied_mask()

    def confidently_free_mask(self) -> np.ndarray:
        return self.observed & (self.logodds <= self.params.l_free + 1e-12)

    def states(self) -> np.ndarray:
        s = np.full(self.size, UNKNOWN, dtype=np.int8)
        s[self.residual] = RESIDUAL
        s[self.free_mask()] = FREE
        s[self.occupied_mask()] = OCCUPIED
        return s

    def copy(self) -> "VoxelGrid":
        g = VoxelGrid(self.origin.copy(), self.resolution, self.dims, self.params)
        g.logodds = self.logodds.copy()
        g.observed = self.observed.copy()
        g.covered = self.covered.copy()
        g.residual = self.residual.copy()
        return g

    def apply_update(self, miss_ids, hit_ids) -> None:
        """One log-odds update per voxel; a voxel in both sets counts as a hit."""
        hit_ids = np.unique(np.asarray(hit_ids, dtype=np.int64))
        miss_ids = np.setdiff1d(np.asarray(miss_ids, dtype=np.int64), hit_ids)
        p = self.params
        self.logodds[miss_ids] = np.clip(self.logodds[miss_ids] + p.l_miss, p.l_min, p.l_max)
        self.logodds[hit_ids] = np.clip(self.logodds[hit_ids] + p.l_hit, p.l_min, p.l_max)
        self.observed[miss_ids] = True
        self.observed[hit_ids] = True
        self.residual[miss_ids] = False
        self.residual[hit_ids] = False


@dataclass(frozen=True)
class RaycastResult:
    voxels: np.ndarray
    hit: bool

    @property
    def terminal(self) -> int:
        return int(self.voxels[-1]) if self.voxels.size else -1


def _check_origin(grid: VoxelGrid, origin) -> None:
    if not grid.contains(origin):
        raise GridError(f"ray origin {np.asarray(origin).tolist()} lies outside the grid")


def raycast(grid: VoxelGrid, origin, direction, max_range: float, backend=None) -> RaycastResult:
    """Exact voxel walk that stops on the first occupied voxel (included, ``hit=True``)."""
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise GridError("ray direction must be unit length")
    _check_origin(grid, origin)
    occ = grid.occupied_mask().astype(np.uint8)
    out, counts, hits = traverse_rays(origin, d, max_range, occ, grid.origin, grid.resolution, grid.dims, True, backend)
    return RaycastResult(out[0, : counts[0]].copy(), bool(hits[0]))


def raycast_many(grid: VoxelGrid, origins, directions, ranges, stop_on_occupied=True, backend=None):
    occ = grid.occupied_mask().astype(np.uint8)
    return traverse_rays(origins, directions, ranges, occ, grid.origin, grid.resolution, grid.dims, stop_on_occupied, backend)


@dataclass(frozen=True)
class ScanUpdate:
    n_rays: int
    n_miss_voxels: int
    n_hit_voxels: int


def integrate_depth_scan(grid: VoxelGrid, sensor_origin, hits, max_range: float, no_return_dirs=None, backend=None) -> ScanUpdate:
    """Fold one scan into the grid.

    Each hit ray marks the voxels it crosses as misses and the voxel holding
    the hit as occupied; a hit just beyond the grid boundary (within one
    voxel) marks the last voxel inside. Rays without a return mark their
    whole walk up to ``max_range`` as misses.
    """
    o = np.asarray(sensor_origin, dtype=float)
    _check_origin(grid, o)
    hits = np.asarray(hits, dtype=float).reshape(-1, 3)
    rel = hits - o
    dist = np.linalg.norm(rel, axis=1)
    keep = dist > 1e-12
    hits, rel, dist = hits[keep], rel[keep], dist[keep]
    dirs = rel / dist[:, None]
    miss_parts, hit_list = [], []
    empty = np.zeros(grid.size, dtype=np.uint8)
    if len(dist):
        out, counts, _ = traverse_rays(
            np.broadcast_to(o, dirs.shape), dirs, dist, empty, grid.origin, grid.resolution, grid.dims, False, backend
        )
        inside = grid.index_of(hits) >= 0
        for r in range(len(dist)):
            walk = out[r, : counts[r]]
            if walk.size == 0:
                continue
            if inside[r]:
                miss_parts.append(walk[:-1])
                hit_list.append(walk[-1])
            else:
                exit_t = _exit_distance(grid, o, dirs[r])
                if dist[r] - exit_t < grid.resolution:
                    miss_parts.append(walk[:-1])
                    hit_list.append(walk[-1])
                else:
                    miss_parts.append(walk)
    n_rays = len(dist)
    if no_return_dirs is not None:
        nr = np.asarray(no_return_dirs, dtype=float).reshape(-1, 3)
        if len(nr):
            out, counts, _ = traverse_rays(
                np.broadcast_to(o, nr.shape), nr, max_range, empty, grid.origin, grid.resolution, grid.dims, False, backend
            )
            for r in range(len(nr)):
                miss_parts.append(out[r, : counts[r]])
            n_rays += len(nr)
    miss = np.unique(np.concatenate(miss_parts)) if miss_parts else np.zeros(0, dtype=np.int64)
    hit = np.unique(np.asarray(hit_list, dtype=np.int64))
    grid.apply_update(miss, hit)
    return ScanUpdate(n_rays, int(np.setdiff1d(miss, hit).size), int(hit.size))


def _exit_distance(grid: VoxelGrid, o, d) -> float:
    t = np.inf
    for a in range(3):
        if d[a] > 0:
            t = min(t, (grid.upper[a] - o[a]) / d[a])
        elif d[a] < 0:
            t = min(t, (grid.origin[a] - o[a]) / d[a])
    return t


def mark_covered(grid: VoxelGrid, voxel_ids) -> int:
    ids = np.unique(np.asarray(voxel_ids, dtype=np.int64))
    ids = ids[(ids >= 0) & (ids < grid.size)]
    new = ids[~grid.covered[ids]]
    grid.covered[new] = True
    return int(new.size)


def bernoulli_entropy(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log(p) + (1.0 - p) * np.log1p(-p))
    return np.nan_to_num(h, nan=0.0)


def visual_info_field(grid: VoxelGrid) -> np.ndarray:
    """Per-voxel visual information: occupancy entropy for unobserved voxels, 0 otherwise."""
    return np.where(grid.observed, 0.0, bernoulli_entropy(grid.probability()))


def coverage_info_field(grid: VoxelGrid, quantum: float = math.log(2.0)) -> np.ndarray:
    """Per-voxel coverage information: ``quantum`` for occupied uncovered voxels."""
    return np.where(grid.occupied_mask() & ~grid.covered, quantum, 0.0)


@dataclass(frozen=True)
class Census:
    unknown: int
    free: int
    occupied: int
    residual: int
    covered: int
    mean_entropy: float

    @property
    def total(self) -> int:
        return self.unknown + self.free + self.occupied + self.residual

    def as_dict(self) -> dict:
        return {
            "unknown": self.unknown,
            "free": self.free,
            "occupied": self.occupied,
            "residual": self.residual,
            "covered": self.covered,
            "mean_entropy": self.mean_entropy,
        }


def state_census(grid: VoxelGrid, coverage_quantum: float = math.log(2.0)) -> Census:
    counts = np.bincount(grid.states(), minlength=4)
    s = visual_info_field(grid) + coverage_info_field(grid, coverage_quantum)
    return Census(
        unknown=int(counts[UNKNOWN]),
        free=int(counts[FREE]),
        occupied=int(counts[OCCUPIED]),
        residual=int(counts[RESIDUAL]),
        covered=int(grid.covered.sum()),
        mean_entropy=float(s.mean()),
    )


def mark_residual(grid: VoxelGrid) -> int:
    """Relabel every still-unknown voxel as residual."""
    unknown = ~grid.observed & ~grid.residual
    grid.residual[unknown] = True
    return int(unknown.sum())


_HEADER = struct.Struct("<8sI3dd3q")


def write_snapshot(path, grid: VoxelGrid) -> None:
    flags = (
        grid.observed.astype(np.uint8) * _OBSERVED
        | grid.covered.astype(np.uint8) * _COVERED
        | grid.residual.astype(np.uint8) * _RESIDUAL
    )
    with open(path, "wb") as f:
        f.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, *grid.origin, grid.resolution, *grid.dims))
        f.write(grid.logodds.astype("<f8").tobytes())
        f.write(flags.astype(np.uint8).tobytes())


def read_snapshot(path, params: OccupancyParams | None = None) -> VoxelGrid:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise GridError("snapshot is truncated")
    magic, version, ox, oy, oz, res, nx, ny, nz = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise GridError("not a grid snapshot")
    if version != SNAPSHOT_VERSION:
        raise GridError(f"unsupported snapshot version {version}")
    grid = VoxelGrid(np.array([ox, oy, oz]), res, (nx, ny, nz), params or OccupancyParams())
    n = grid.size
    body = data[_HEADER.size :]
    if len(body) != 9 * n:
        raise GridError("snapshot body has the wrong length")
    grid.logodds = np.frombuffer(body[: 8 * n], dtype="<f8").astype(float)
    flags = np.frombuffer(body[8 * n :], dtype=np.uint8)
    grid.observed = (flags & _OBSERVED) != 0
    grid.covered = (flags & _COVERED) != 0
    grid.residual = (flags & _RESIDUAL) != 0
    return grid
