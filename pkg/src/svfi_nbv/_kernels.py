"""Voxel traversal kernels.

Two interchangeable implementations of the same exact grid walk: a scalar
loop compiled with numba, and a lock-step numpy version that advances every
ray at once. Both evaluate the same floating point expressions in the same
order, so their outputs are bit-identical; ``tests/test_kernels.py`` holds
them to that.

Grid convention: voxel ``(i, j, k)`` spans ``origin + res * [i, i+1)`` on
each axis and has flat index ``(i * ny + j) * nz + k``. A ray includes a
voxel when it enters it strictly before ``max_range - RANGE_EPS``; the voxel
containing the ray origin is always included.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

RANGE_EPS = 1e-9


def max_steps_for(dims) -> int:
    return int(dims[0]) + int(dims[1]) + int(dims[2])


@njit
def _start_index(o, g, res, n):
    i = int(np.floor((o - g) / res))
    if i == n and o <= g + n * res:
        i = n - 1
    return i


@njit
def _boundary_t(o, d, g, res, i):
    if d > 0.0:
        return (g + (i + 1) * res - o) / d
    if d < 0.0:
        return (g + i * res - o) / d
    return np.inf


@njit
def _traverse_numba(origins, dirs, ranges, occ, gorigin, res, dims, stop_on_occupied, max_steps):
    n_rays = origins.shape[0]
    nx, ny, nz = dims[0], dims[1], dims[2]
    out = np.full((n_rays, max_steps), -1, dtype=np.int64)
    counts = np.zeros(n_rays, dtype=np.int64)
    hits = np.zeros(n_rays, dtype=np.bool_)
    for r in range(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        rng = ranges[r]
        ix = _start_index(ox, gorigin[0], res, nx)
        iy = _start_index(oy, gorigin[1], res, ny)
        iz = _start_index(oz, gorigin[2], res, nz)
        if ix < 0 or iy < 0 or iz < 0 or ix >= nx or iy >= ny or iz >= nz or rng <= 0.0:
            continue
        sx = 1 if dx > 0.0 else (-1 if dx < 0.0 else 0)
        sy = 1 if dy > 0.0 else (-1 if dy < 0.0 else 0)
        sz = 1 if dz > 0.0 else (-1 if dz < 0.0 else 0)
        tx = _boundary_t(ox, dx, gorigin[0], res, ix)
        ty = _boundary_t(oy, dy, gorigin[1], res, iy)
        tz = _boundary_t(oz, dz, gorigin[2], res, iz)
        c = 0
        while True:
            v = (ix * ny + iy) * nz + iz
            out[r, c] = v
            c += 1
            if stop_on_occupied and occ[v] != 0:
                hits[r] = True
                break
            if tx < ty:
                axis = 0 if tx < tz else 2
            else:
                axis = 1 if ty < tz else 2
            if axis == 0:
                t = tx
            elif axis == 1:
                t = ty
            else:
                t = tz
            if t >= rng - RANGE_EPS or c >= max_steps:
                break
            if axis == 0:
                ix += sx
                if ix < 0 or ix >= nx:
                    break
                tx = _boundary_t(ox, dx, gorigin[0], res, ix)
            elif axis == 1:
                iy += sy
                if iy < 0 or iy >= ny:
                    break
                ty = _boundary_t(oy, dy, gorigin[1], res, iy)
            else:
                iz += sz
                if iz < 0 or iz >= nz:
                    break
                tz = _boundary_t(oz, dz, gorigin[2], res, iz)
        counts[r] = c
    return out, counts, hits


@njit
def _info_sums_numba(origins, dirs, ranges, occ, info, gorigin, res, dims):
    n_rays = origins.shape[0]
    nx, ny, nz = dims[0], dims[1], dims[2]
    max_steps = nx + ny + nz
    sums = np.zeros(n_rays, dtype=np.float64)
    for r in range(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        rng = ranges[r]
        ix = _start_index(ox, gorigin[0], res, nx)
        iy = _start_index(oy, gorigin[1], res, ny)
        iz = _start_index(oz, gorigin[2], res, nz)
        if ix < 0 or iy < 0 or iz < 0 or ix >= nx or iy >= ny or iz >= nz or rng <= 0.0:
            continue
        sx = 1 if dx > 0.0 else (-1 if dx < 0.0 else 0)
        sy = 1 if dy > 0.0 else (-1 if dy < 0.0 else 0)
        sz = 1 if dz > 0.0 else (-1 if dz < 0.0 else 0)
        tx = _boundary_t(ox, dx, gorigin[0], res, ix)
        ty = _boundary_t(oy, dy, gorigin[1], res, iy)
        tz = _boundary_t(oz, dz, gorigin[2], res, iz)
        acc = 0.0
        c = 0
        while True:
            v = (ix * ny + iy) * nz + iz
            acc += info[v]
            c += 1
            if occ[v] != 0:
                break
            if tx < ty:
                axis = 0 if tx < tz else 2
            else:
                axis = 1 if ty < tz else 2
            if axis == 0:
                t = tx
            elif axis == 1:
                t = ty
            else:
                t = tz
            if t >= rng - RANGE_EPS or c >= max_steps:
                break
            if axis == 0:
                ix += sx
                if ix < 0 or ix >= nx:
                    break
                tx = _boundary_t(ox, dx, gorigin[0], res, ix)
            elif axis == 1:
                iy += sy
                if iy < 0 or iy >= ny:
                    break
                ty = _boundary_t(oy, dy, gorigin[1], res, iy)
            else:
                iz += sz
                if iz < 0 or iz >= nz:
                    break
                tz = _boundary_t(oz, dz, gorigin[2], res, iz)
        sums[r] = acc
    return sums


# --------------------------------------------------------------------------
# numpy fallback: all rays advance together, one voxel per iteration


def _np_start_index(o, g, res, n):
    i = np.floor((o - g) / res).astype(np.int64)
    on_top = (i == n) & (o <= g + n * res)
    i[on_top] = n - 1
    return i


def _np_boundary_t(o, d, g, res, i):
    t = np.full(o.shape, np.inf)
    pos = d > 0.0
    neg = d < 0.0
    t[pos] = (g + (i[pos] + 1) * res - o[pos]) / d[pos]
    t[neg] = (g + i[neg] * res - o[neg]) / d[neg]
    return t


class _LockStep:
    """Shared state of the vectorised walk."""

    def __init__(self, origins, dirs, ranges, gorigin, res, dims):
        self.o = [origins[:, a].copy() for a in range(3)]
        self.d = [dirs[:, a].copy() for a in range(3)]
        self.rng = ranges.astype(np.float64)
        self.g = [float(gorigin[a]) for a in range(3)]
        self.res = float(res)
        self.dims = [int(dims[a]) for a in range(3)]
        self.i = [_np_start_index(self.o[a], self.g[a], self.res, self.dims[a]) for a in range(3)]
        inside = np.ones(origins.shape[0], dtype=bool)
        for a in range(3):
            inside &= (self.i[a] >= 0) & (self.i[a] < self.dims[a])
        inside &= self.rng > 0.0
        self.active = inside
        self.s = [np.sign(self.d[a]).astype(np.int64) for a in range(3)]
        self.t = [_np_boundary_t(self.o[a], self.d[a], self.g[a], self.res, self.i[a]) for a in range(3)]
        self.count = np.zeros(origins.shape[0], dtype=np.int64)

    def flat(self, idx):
        ny, nz = self.dims[1], self.dims[2]
        return (self.i[0][idx] * ny + self.i[1][idx]) * nz + self.i[2][idx]

    def advance(self, idx, max_steps):
        """Step rays ``idx`` to their next voxel; deactivates finished rays."""
        tx, ty, tz = self.t[0][idx], self.t[1][idx], self.t[2][idx]
        axis = np.where(tx < ty, np.where(tx < tz, 0, 2), np.where(ty < tz, 1, 2))
        t = np.where(axis == 0, tx, np.where(axis == 1, ty, tz))
        done = (t >= self.rng[idx] - RANGE_EPS) | (self.count[idx] >= max_steps)
        self.active[idx[done]] = False
        for a in range(3):
            sel = idx[(axis == a) & ~done]
            if sel.size == 0:
                continue
            self.i[a][sel] += self.s[a][sel]
            out = (self.i[a][sel] < 0) | (self.i[a][sel] >= self.dims[a])
            self.active[sel[out]] = False
            keep = sel[~out]
            self.t[a][keep] = _np_boundary_t(
                self.o[a][keep], self.d[a][keep], self.g[a], self.res, self.i[a][keep]
            )


def _traverse_numpy(origins, dirs, ranges, occ, gorigin, res, dims, stop_on_occupied, max_steps):
    n_rays = origins.shape[0]
    out = np.full((n_rays, max_steps), -1, dtype=np.int64)
    hits = np.zeros(n_rays, dtype=bool)
    st = _LockStep(origins, dirs, ranges, gorigin, res, dims)
    while True:
        idx = np.nonzero(st.active)[0]
        if idx.size == 0:
            break
        v = st.flat(idx)
        out[idx, st.count[idx]] = v
        st.count[idx] += 1
        if stop_on_occupied:
            occupied = occ[v] != 0
            hits[idx[occupied]] = True
            st.active[idx[occupied]] = False
            idx = idx[~occupied]
        if idx.size:
            st.advance(idx, max_steps)
    return out, st.count, hits


def _info_sums_numpy(origins, dirs, ranges, occ, info, gorigin, res, dims):
    max_steps = max_steps_for(dims)
    sums = np.zeros(origins.shape[0], dtype=np.float64)
    st = _LockStep(origins, dirs, ranges, gorigin, res, dims)
    while True:
        idx = np.nonzero(st.active)[0]
        if idx.size == 0:
            break
        v = st.flat(idx)
        sums[idx] += info[v]
        st.count[idx] += 1
        occupied = occ[v] != 0
        st.active[idx[occupied]] = False
        idx = idx[~occupied]
        if idx.size:
            st.advance(idx, max_steps)
    return sums


# --------------------------------------------------------------------------
# dispatch


def _prep(origins, dirs, ranges, gorigin, dims):
    origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    dirs = np.ascontiguousarray(np.atleast_2d(dirs), dtype=np.float64)
    ranges = np.ascontiguousarray(np.broadcast_to(np.asarray(ranges, dtype=np.float64), (origins.shape[0],)))
    gorigin = np.ascontiguousarray(gorigin, dtype=np.float64)
    dims = np.ascontiguousarray(dims, dtype=np.int64)
    return origins, dirs, ranges, gorigin, dims


def _use_numba(backend):
    if backend is None:
        return USE_NUMBA
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {backend!r}")
    return backend == "numba"


def traverse_rays(origins, dirs, ranges, occ, gorigin, res, dims, stop_on_occupied=True, backend=None):
    """Walk every ray through the grid.

    Returns ``(voxels, counts, hits)``: ``voxels[r, :counts[r]]`` are the flat
    indices visited by ray ``r`` in order, ``hits[r]`` is set when the walk
    ended on an occupied voxel (only with ``stop_on_occupied``).
    """
    origins, dirs, ranges, gorigin, dims = _prep(origins, dirs, ranges, gorigin, dims)
    occ = np.ascontiguousarray(occ, dtype=np.uint8)
    steps = max_steps_for(dims)
    fn = _traverse_numba if _use_numba(backend) else _traverse_numpy
    return fn(origins, dirs, ranges, occ, gorigin, float(res), dims, bool(stop_on_occupied), steps)


def ray_info_sums(origins, dirs, ranges, occ, info, gorigin, res, dims, backend=None):
    """Sum ``info`` over the voxels of each ray, terminal occupied voxel included."""
    origins, dirs, ranges, gorigin, dims = _prep(origins, dirs, ranges, gorigin, dims)
    occ = np.ascontiguousarray(occ, dtype=np.uint8)
    info = np.ascontiguousarray(info, dtype=np.float64)
    fn = _info_sums_numba if _use_numba(backend) else _info_sums_numpy
    return fn(origins, dirs, ranges, occ, info, gorigin, float(res), dims)
