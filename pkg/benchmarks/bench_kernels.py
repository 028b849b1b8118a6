"""Time the voxel traversal kernels with numba and with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--rays 20000] [--repeat 5]

Both backends are run on the same rays and their outputs compared before
timing, so a speedup is never reported for diverging results.
"""
import argparse
import time

import numpy as np

from svfi_nbv import _accel
from svfi_nbv._kernels import ray_info_sums, traverse_rays
from svfi_nbv.worldmap import VoxelGrid


def _setup(n_rays: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    grid = VoxelGrid.cube(1.5, 0.05)
    size = grid.logodds.size
    occ = (rng.random(size) < 0.02).astype(np.uint8)
    info = rng.random(size)
    origins = rng.uniform(0.2, 1.3, (n_rays, 3))
    dirs = rng.standard_normal((n_rays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ranges = rng.uniform(0.2, 3.0, n_rays)
    return grid, occ, info, origins, dirs, ranges


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rays", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    grid, occ, info, o, d, r = _setup(args.rays)
    common = (grid.origin, grid.resolution, grid.dims)

    kernels = {
        "traverse_rays": lambda b: traverse_rays(o, d, r, occ, *common, True, b),
        "ray_info_sums": lambda b: ray_info_sums(o, d, r, occ, info, *common, b),
    }
    backends = ["numpy"] + (["numba"] if _accel.HAS_NUMBA else [])
    print(f"{args.rays} rays on a {tuple(int(x) for x in grid.dims)} grid, best of {args.repeat}")
    for name, fn in kernels.items():
        ref = fn("numpy")
        row = {}
        for b in backends:
            out = fn(b)  # also compiles on first call
            same = all(np.array_equal(x, y) for x, y in zip(out, ref)) if isinstance(ref, tuple) else np.array_equal(out, ref)
            if not same:
                raise SystemExit(f"{name}: {b} output differs from numpy")
            row[b] = _best(lambda: fn(b), args.repeat)
        line = "  ".join(f"{b} {t * 1e3:8.2f} ms" for b, t in row.items())
        if "numba" in row:
            line += f"  speedup x{row['numpy'] / row['numba']:.1f}"
        print(f"{name:<14} {line}")


if __name__ == "__main__":
    main()
