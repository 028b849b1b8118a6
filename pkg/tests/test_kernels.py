import numpy as np
import pytest
from hypothesis import given, strategies as st

from svfi_nbv._accel import HAS_NUMBA
from svfi_nbv._kernels import ray_info_sums, traverse_rays

pytestmark = pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")


def _scene(seed, n=12, rays=40):
    rng = np.random.default_rng(seed)
    dims = np.array([n, n, n])
    res = 0.05
    occ = (rng.random(n**3) < 0.08).astype(np.uint8)
    info = rng.random(n**3)
    origins = rng.uniform(0.0, n * res, (rays, 3))
    dirs = rng.standard_normal((rays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ranges = rng.uniform(0.0, 1.0, rays)
    return origins, dirs, ranges, occ, info, np.zeros(3), res, dims


@given(st.integers(0, 2**31 - 1), st.booleans())
def test_traversal_backends_agree(seed, stop):
    o, d, r, occ, _, g, res, dims = _scene(seed)
    a = traverse_rays(o, d, r, occ, g, res, dims, stop, backend="numba")
    b = traverse_rays(o, d, r, occ, g, res, dims, stop, backend="numpy")
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


@given(st.integers(0, 2**31 - 1))
def test_info_sum_backends_agree(seed):
    o, d, r, occ, info, g, res, dims = _scene(seed)
    a = ray_info_sums(o, d, r, occ, info, g, res, dims, backend="numba")
    b = ray_info_sums(o, d, r, occ, info, g, res, dims, backend="numpy")
    np.testing.assert_array_equal(a, b)


@given(st.integers(0, 2**31 - 1))
def test_info_sums_equal_sum_over_traversal(seed):
    o, d, r, occ, info, g, res, dims = _scene(seed)
    vox, counts, _ = traverse_rays(o, d, r, occ, g, res, dims, True, backend="numpy")
    sums = ray_info_sums(o, d, r, occ, info, g, res, dims, backend="numpy")
    for k in range(len(r)):
        assert sums[k] == pytest.approx(info[vox[k, : counts[k]]].sum(), rel=1e-12, abs=1e-15)


def test_unknown_backend_rejected():
    o, d, r, occ, _, g, res, dims = _scene(0)
    with pytest.raises(ValueError):
        traverse_rays(o, d, r, occ, g, res, dims, backend="cuda")
