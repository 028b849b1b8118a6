import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from svfi_nbv.worldmap import (
    FREE,
    OCCUPIED,
    GridError,
    OccupancyParams,
    VoxelGrid,
    integrate_depth_scan,
    mark_covered,
    mark_residual,
    raycast,
    read_snapshot,
    state_census,
    write_snapshot,
)


def _dense_oracle(grid, origin, direction, max_range):
    """Voxels touched by points sampled every res/100 along the ray, first-seen order."""
    ts = np.arange(0.0, max_range, grid.resolution / 100.0)
    pts = origin + ts[:, None] * direction
    ids = grid.index_of(pts)
    ids = ids[ids >= 0]
    _, first = np.unique(ids, return_index=True)
    return ids[np.sort(first)]


def _chord(grid, origin, direction, max_range, voxel):
    """Length of the ray segment [0, max_range] inside one voxel."""
    lo = grid.centers([voxel])[0] - 0.5 * grid.resolution
    hi = lo + grid.resolution
    with np.errstate(divide="ignore", invalid="ignore"):
        t1, t2 = (lo - origin) / direction, (hi - origin) / direction
    t_in = max(np.max(np.where(direction != 0, np.minimum(t1, t2), -np.inf)), 0.0)
    t_out = min(np.min(np.where(direction != 0, np.maximum(t1, t2), np.inf)), max_range)
    return max(t_out - t_in, 0.0)


def _assert_matches_oracle(grid, res, o, d, r, occ=None):
    """Set equality with the sampling oracle, up to voxels it can skip: chords shorter than its step."""
    oracle = _dense_oracle(grid, o, d, r)
    if occ is not None:
        stop = np.nonzero(occ[oracle])[0]
        if stop.size:
            oracle = oracle[: stop[0] + 1]
    got, want = set(res.voxels.tolist()), set(oracle.tolist())
    assert want <= got
    for v in got - want:
        assert _chord(grid, o, d, r, v) < grid.resolution / 100.0


def test_one_meter_wall_hit_gives_19_free_and_1_occupied():
    grid = VoxelGrid.cube()
    o = np.array([0.2, 0.725, 0.725])  # on a voxel face
    summary = integrate_depth_scan(grid, o, [o + [1.0, 0.0, 0.0]], max_range=3.0)
    assert summary.n_miss_voxels == 19
    assert summary.n_hit_voxels == 1
    assert grid.observed.sum() == 20
    assert (grid.states() == OCCUPIED).sum() == 1
    assert (grid.states() == FREE).sum() == 19


def test_repeated_hits_approach_clamp():
    grid = VoxelGrid.cube()
    o = np.array([0.2, 0.725, 0.725])  # on a voxel face
    target = grid.index_of(o + [1.0, 0.0, 0.0])[0]
    prev = 0.5
    for _ in range(20):
        integrate_depth_scan(grid, o, [o + [1.0, 0.0, 0.0]], max_range=3.0)
        p = grid.probability()[target]
        assert p >= prev
        prev = p
    assert grid.logodds[target] == pytest.approx(grid.params.l_max)
    assert grid.logodds.max() <= grid.params.l_max


def test_no_return_ray_marks_only_misses():
    grid = VoxelGrid.cube()
    o = np.array([0.2, 0.725, 0.725])  # on a voxel face
    summary = integrate_depth_scan(grid, o, np.zeros((0, 3)), max_range=0.5, no_return_dirs=[[1.0, 0.0, 0.0]])
    assert summary.n_hit_voxels == 0
    assert summary.n_miss_voxels == 10
    assert np.all(grid.logodds[grid.observed] < 0)


def test_scan_origin_outside_grid_rejected():
    with pytest.raises(GridError):
        integrate_depth_scan(VoxelGrid.cube(), [-0.1, 0.5, 0.5], [[0.5, 0.5, 0.5]], 3.0)


def test_axis_ray_counts_20_voxels():
    grid = VoxelGrid.cube()
    res = raycast(grid, [0.0, 0.725, 0.725], [1.0, 0.0, 0.0], 1.0)
    assert len(res.voxels) == 20
    assert not res.hit


def test_diagonal_ray_matches_dense_sampling():
    grid = VoxelGrid(np.zeros(3), 0.05, (2, 2, 2))
    o = np.array([0.001, 0.013, 0.007])
    d = np.array([1.0, 0.8, 0.9])
    d /= np.linalg.norm(d)
    res = raycast(grid, o, d, 1.0)
    np.testing.assert_array_equal(res.voxels, _dense_oracle(grid, o, d, 1.0))


@given(st.integers(0, 2**31 - 1))
def test_random_rays_match_dense_sampling(seed):
    rng = np.random.default_rng(seed)
    grid = VoxelGrid(np.zeros(3), 0.05, (8, 8, 8))
    o = rng.uniform(0.0, 0.4, 3)
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    r = float(rng.uniform(0.05, 0.6))
    _assert_matches_oracle(grid, raycast(grid, o, d, r), o, d, r)


def test_ray_starting_in_occupied_voxel():
    grid = VoxelGrid.cube()
    o = np.array([0.7, 0.7, 0.7])
    k = grid.index_of(o)[0]
    grid.logodds[k] = 2.0
    grid.observed[k] = True
    res = raycast(grid, o, [0.0, 0.0, 1.0], 1.0)
    assert res.hit and res.voxels.tolist() == [k]


def test_raycast_requires_unit_direction_and_inside_origin():
    grid = VoxelGrid.cube()
    with pytest.raises(GridError):
        raycast(grid, [0.5, 0.5, 0.5], [1.0, 1.0, 0.0], 1.0)
    with pytest.raises(GridError):
        raycast(grid, [2.0, 0.5, 0.5], [1.0, 0.0, 0.0], 1.0)


def test_mark_covered_idempotent_and_allows_unknown():
    grid = VoxelGrid.cube()
    k = 100
    grid.observed[k] = True
    grid.logodds[k] = 2.0
    assert mark_covered(grid, [k]) == 1
    assert mark_covered(grid, [k]) == 0
    assert mark_covered(grid, [5]) == 1 and not grid.observed[5]
    assert mark_covered(grid, []) == 0


def test_census_fresh_grid_entropy_ln2():
    c = state_census(VoxelGrid.cube())
    assert c.unknown == 27000 and c.total == 27000
    assert c.mean_entropy == pytest.approx(math.log(2.0), abs=1e-12)


def test_census_known_covered_grid_has_no_coverage_term():
    grid = VoxelGrid(np.zeros(3), 0.05, (3, 3, 3))
    grid.observed[:] = True
    grid.logodds[:] = 3.5
    assert state_census(grid).mean_entropy > 0
    grid.covered[:] = True
    assert state_census(grid).mean_entropy == 0.0


def test_residual_relabel_only_unknown():
    grid = VoxelGrid(np.zeros(3), 0.05, (3, 3, 3))
    grid.observed[:5] = True
    assert mark_residual(grid) == 22
    c = state_census(grid)
    assert c.residual == 22 and c.unknown == 0 and c.total == 27


@given(st.integers(0, 2**31 - 1))
def test_random_scans_keep_partition_and_clamps(seed):
    rng = np.random.default_rng(seed)
    grid = VoxelGrid(np.zeros(3), 0.1, (6, 6, 6))
    covered_before = grid.covered.copy()
    for _ in range(4):
        o = rng.uniform(0.05, 0.55, 3)
        hits = rng.uniform(-0.1, 0.7, (15, 3))
        integrate_depth_scan(grid, o, hits, 1.0)
        mark_covered(grid, rng.integers(0, grid.size, 5))
        assert np.all(grid.covered >= covered_before)
        covered_before = grid.covered.copy()
        assert grid.logodds.min() >= grid.params.l_min and grid.logodds.max() <= grid.params.l_max
        counts = np.bincount(grid.states(), minlength=4)
        assert counts.sum() == grid.size


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    grid = VoxelGrid(np.array([0.1, -0.2, 0.3]), 0.05, (4, 5, 6), OccupancyParams())
    grid.logodds = rng.uniform(-2, 3.5, grid.size)
    grid.observed = rng.random(grid.size) < 0.5
    grid.covered = rng.random(grid.size) < 0.2
    grid.residual = ~grid.observed & (rng.random(grid.size) < 0.3)
    write_snapshot(tmp_path / "g.bin", grid)
    back = read_snapshot(tmp_path / "g.bin")
    assert back.dims == grid.dims and back.resolution == grid.resolution
    np.testing.assert_array_equal(back.origin, grid.origin)
    np.testing.assert_array_equal(back.logodds, grid.logodds)
    for name in ("observed", "covered", "residual"):
        np.testing.assert_array_equal(getattr(back, name), getattr(grid, name))


def test_snapshot_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"nope" * 20)
    with pytest.raises(GridError):
        read_snapshot(p)


def test_thousand_random_rays_match_dense_sampling():
    rng = np.random.default_rng(1000)
    grid = VoxelGrid(np.zeros(3), 0.05, (10, 10, 10))
    grid.observed[:] = True
    grid.logodds[:] = np.where(rng.random(grid.size) < 0.05, 3.0, -1.0)
    occ = grid.occupied_mask()
    for _ in range(1000):
        o = rng.uniform(0.0, 0.5, 3)
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        r = float(rng.uniform(0.05, 0.8))
        _assert_matches_oracle(grid, raycast(grid, o, d, r), o, d, r, occ)
