"""Property and oracle suites behind ``svfi-nbv validate``.

Every check compares production code against an independent route:
central differences for Jacobians, a dual projected-gradient solver for the
QP, a sorted slab-crossing walk for the ray gains, bisection for the normal
quantile, and Monte Carlo sampling for the chance constraint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kinematics import RobotModel, default_robot_model, forward_kinematics, point_jacobian, task_jacobian
from .planner import (
    LN2,
    Viewpoint,
    candidate_seeds,
    coverage_gain,
    coverage_voxel_info,
    visual_gain,
    visual_voxel_info,
)
from .primitives import Line, point_line_distance, point_line_distance_jacobian
from .qpsolver import OPTIMAL, QProblem, QPSolver, kkt_residuals
from .sensing import DepthSensorModel, ProbeSensorModel, frustum_rays, rng_for, sphere_rays
from .svfi import std_normal_cdf, std_normal_quantile
from .worldmap import OccupancyParams, VoxelGrid

SUITES = ("chance", "jacobians", "qp", "ig-oracle", "quantile")


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    limit: float
    passed: bool
    detail: str = ""


# --------------------------------------------------------------------------
# Jacobians


def _central_difference(f: Callable, q: np.ndarray, h: float = 1e-6) -> np.ndarray:
    cols = []
    for i in range(q.size):
        e = np.zeros(q.size)
        e[i] = h
        cols.append((np.asarray(f(q + e)) - np.asarray(f(q - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def _rel_error(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def random_configuration(model: RobotModel, rng: np.random.Generator) -> np.ndarray:
    base = [rng.uniform(0.3, 1.2), rng.uniform(0.3, 1.2), rng.uniform(-math.pi, math.pi)]
    return np.concatenate([base, rng.uniform(-math.pi, math.pi, model.n_arm)])


def jacobian_checks(n_configs: int = 100, seed: int = 0, model: RobotModel | None = None, tol: float = 1e-5) -> list[Check]:
    model = model or default_robot_model()
    rng = rng_for(seed, 4)
    worst = {"task": 0.0, "point": 0.0, "point-line": 0.0}
    for _ in range(n_configs):
        q = random_configuration(model, rng)
        fd = _central_difference(lambda x: forward_kinematics(model, x).as_vector(), q)
        worst["task"] = max(worst["task"], _rel_error(task_jacobian(model, q), fd))
        for name in model.attachments:
            _, j_t = point_jacobian(model, q, name)
            fd = _central_difference(lambda x: point_jacobian(model, x, name)[0], q)
            worst["point"] = max(worst["point"], _rel_error(j_t, fd))
        d = rng.standard_normal(3)
        line = Line(rng.uniform(0.0, 1.5, 3), d / np.linalg.norm(d), 0.05)
        t, j_t = point_jacobian(model, q, "probe")
        if point_line_distance(t, line) < 1e-3:
            continue
        _, j_d = point_line_distance_jacobian(t, j_t, line)
        fd = _central_difference(lambda x: point_line_distance(point_jacobian(model, x, "probe")[0], line), q)
        worst["point-line"] = max(worst["point-line"], _rel_error(j_d, fd))
    return [Check(f"{k} jacobian vs central differences", v, tol, v < tol, f"{n_configs} configurations") for k, v in worst.items()]


# --------------------------------------------------------------------------
# QP


def random_feasible_qp(rng: np.random.Generator, n: int | None = None) -> QProblem:
    """Strictly convex QP whose constraints hold at a known point, some of them tightly."""
    n = n or int(rng.integers(2, 12))
    m_in = int(rng.integers(1, 2 * n + 1))
    m_eq = int(rng.integers(0, max(1, n // 3) + 1))
    a = rng.standard_normal((n, n))
    h = a @ a.T + rng.uniform(0.1, 2.0) * np.eye(n)
    g = rng.standard_normal(n) * rng.uniform(0.5, 5.0)
    u0 = rng.standard_normal(n)
    a_in = rng.standard_normal((m_in, n))
    gap = rng.exponential(0.5, m_in) * (rng.random(m_in) > 0.3)
    a_eq = rng.standard_normal((m_eq, n))
    lb = ub = None
    if rng.random() < 0.5:
        lb = u0 - rng.uniform(0.0, 2.0, n)
        ub = u0 + rng.uniform(0.0, 2.0, n)
    return QProblem(h, g, a_eq, a_eq @ u0, a_in, a_in @ u0 + gap, lb, ub)


def projected_gradient_qp(p: QProblem, iterations: int = 2_000_000, gap_tol: float = 1e-10, feas_tol: float = 1e-9):
    """Accelerated projected gradient on the Jacobi-scaled dual, inequality multipliers kept non-negative.

    Stops once the recovered primal point is feasible to ``feas_tol`` and the
    duality gap is below ``gap_tol`` relative; returns that primal point.
    """
    a_in, b_in, _ = p.inequality_rows()
    c = np.vstack([a_in, p.A_eq])
    b = np.concatenate([b_in, p.b_eq])
    m_in = a_in.shape[0]
    h_inv = np.linalg.inv(p.H)
    if c.shape[0] == 0:
        return -h_inv @ p.g
    q = c @ h_inv @ c.T
    scale = 1.0 / np.sqrt(np.diag(q))
    q = q * np.outer(scale, scale)
    lin = scale * (c @ h_inv @ p.g + b)
    step = 1.0 / float(np.linalg.eigvalsh(q)[-1])
    const = 0.5 * p.g @ h_inv @ p.g

    def primal(y):
        return -h_inv @ (p.g + c.T @ (scale * y))

    y = np.zeros(c.shape[0])
    z = y.copy()
    tk = 1.0
    for it in range(iterations):
        # dual objective 1/2 y^T Q y + lin^T y, minimised over y_in >= 0
        y_new = z - step * (q @ z + lin)
        y_new[:m_in] = np.maximum(y_new[:m_in], 0.0)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
        z = y_new + ((tk - 1.0) / t_new) * (y_new - y)
        if (z - y_new) @ (y_new - y) > 0.0:  # restart when momentum points uphill
            z, t_new = y_new.copy(), 1.0
        y, tk = y_new, t_new
        if it % 50 == 0:
            u = primal(y)
            viol = max(np.max(a_in @ u - b_in, initial=0.0), np.max(np.abs(p.A_eq @ u - p.b_eq), initial=0.0))
            f = p.objective(u)
            dual = -(0.5 * y @ q @ y + lin @ y + const)
            if viol <= feas_tol and abs(f - dual) <= gap_tol * max(1.0, abs(f)):
                break
    return primal(y)


def qp_checks(n_problems: int = 1000, seed: int = 0, kkt_tol: float = 1e-8, obj_tol: float = 1e-6) -> list[Check]:
    rng = rng_for(seed, 5)
    solver = QPSolver()
    worst_kkt, worst_obj, failures = 0.0, 0.0, 0
    for _ in range(n_problems):
        p = random_feasible_qp(rng)
        res = solver.solve(p, warm_start=False)
        if res.status != OPTIMAL:
            failures += 1
            continue
        r = kkt_residuals(p, res.u, res.lam_eq, res.lam_in)
        worst_kkt = max(worst_kkt, max(r.values()))
        f_ref = p.objective(projected_gradient_qp(p))
        f = p.objective(res.u)
        worst_obj = max(worst_obj, abs(f - f_ref) / max(1.0, abs(f_ref)))
    return [
        Check("qp solved to optimality", float(failures), 0.0, failures == 0, f"{n_problems} random feasible problems"),
        Check("qp max KKT residual", worst_kkt, kkt_tol, worst_kkt < kkt_tol),
        Check("qp objective vs projected-gradient oracle", worst_obj, obj_tol, worst_obj < obj_tol),
    ]


# --------------------------------------------------------------------------
# information gain


def slab_walk(grid: VoxelGrid, origin, direction, max_range: float, occ: np.ndarray, eps: float = 1e-9) -> list[int]:
    """Voxels crossed by one ray, found by sorting every grid-plane crossing.

    A voxel is listed when the ray enters it before ``max_range - eps``; the
    walk ends after the first occupied voxel or on leaving the grid.
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    res = grid.resolution
    ts = []
    for ax in range(3):
        if d[ax] == 0.0:
            continue
        planes = grid.origin[ax] + res * np.arange(grid.dims[ax] + 1)
        t = (planes - o[ax]) / d[ax]
        ts.append(t[t > 0.0])
    cuts = np.unique(np.concatenate(ts)) if ts else np.zeros(0)
    entries = np.concatenate([[0.0], cuts])
    out = []
    for k, t_in in enumerate(entries):
        if k > 0 and not t_in < max_range - eps:
            break
        t_out = entries[k + 1] if k + 1 < entries.size else t_in + res
        mid = o + d * (0.5 * (t_in + t_out))
        ijk = np.floor((mid - grid.origin) / res).astype(int)
        if np.any(ijk < 0) or np.any(ijk >= grid.dims):
            break
        v = int((ijk[0] * grid.dims[1] + ijk[1]) * grid.dims[2] + ijk[2])
        out.append(v)
        if occ[v]:
            break
    return out


def _oracle_gain(grid, origin, dirs, max_range, occ, info) -> float:
    sums = np.array([sum(info[v] for v in slab_walk(grid, origin, d, max_range, occ)) for d in dirs])
    return float(np.sum(sums))


def random_scene_grid(rng: np.random.Generator, n: int = 20) -> VoxelGrid:
    res = float(rng.uniform(0.03, 0.08))
    grid = VoxelGrid(rng.uniform(-1.0, 1.0, 3), res, (n, n, n), OccupancyParams())
    size = grid.logodds.size
    grid.observed[:] = rng.random(size) < rng.uniform(0.2, 0.9)
    grid.logodds[:] = np.where(grid.observed, rng.uniform(-2.0, 3.5, size), 0.0)
    grid.covered[:] = grid.occupied_mask() & (rng.random(size) < 0.5)
    return grid


def ig_oracle_checks(n_scenarios: int = 50, seed: int = 0, rays: int = 60, backend=None) -> list[Check]:
    rng = rng_for(seed, 7)
    depth = DepthSensorModel(rays=rays, max_range=float(rng.uniform(0.5, 1.5)))
    probe = ProbeSensorModel(radius=0.4, rays=rays)
    mismatches, worst = 0, 0.0
    for s in range(n_scenarios):
        grid = random_scene_grid(rng)
        occ = grid.occupied_mask()
        pr = grid.probability()
        states = grid.states()
        vis = np.array([visual_voxel_info(pr[i], bool(grid.observed[i])) for i in range(pr.size)])
        cov = np.array([coverage_voxel_info(int(states[i]), bool(grid.covered[i]), LN2) for i in range(pr.size)])
        pos = grid.origin + grid.resolution * rng.uniform(0.5, grid.dims[0] - 0.5, 3)
        axis = rng.standard_normal(3)
        v = Viewpoint(pos, axis / np.linalg.norm(axis))
        rv, rc = candidate_seeds(seed, s, 0)
        g_v = visual_gain(grid, v, depth, rv, backend=backend)
        g_c = coverage_gain(grid, v, probe, rc, backend=backend)
        rv, rc = candidate_seeds(seed, s, 0)
        o_v = _oracle_gain(grid, pos, frustum_rays(depth, v.n_c, depth.rays, rv), depth.max_range, occ, vis)
        o_c = _oracle_gain(grid, pos, sphere_rays(probe, probe.rays, rc), probe.radius, occ, cov)
        worst = max(worst, abs(g_v - o_v), abs(g_c - o_c))
        mismatches += int(g_v != o_v) + int(g_c != o_c)
    return [Check("gains equal brute-force traversal", float(mismatches), 0.0, mismatches == 0, f"{n_scenarios} scenarios, max |diff| {worst:.3g}")]


# --------------------------------------------------------------------------
# quantile and chance constraint


def bisection_quantile(alpha: float, tol: float = 1e-14) -> float:
    lo, hi = -40.0, 40.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if std_normal_cdf(mid) < alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def quantile_checks(n_points: int = 999, tol: float = 1e-9) -> list[Check]:
    alphas = np.arange(1, n_points + 1) / (n_points + 1)
    worst = max(abs(std_normal_quantile(a) - bisection_quantile(a)) for a in alphas)
    return [Check("normal quantile vs bisection", worst, tol, worst < tol, f"{n_points} levels")]


def chance_checks(seed: int = 0, n_geometries: int = 20, n_samples: int = 100_000) -> list[Check]:
    from .sim import run_chance_validation

    report = run_chance_validation(n_geometries=n_geometries, n_samples=n_samples, seed=seed)
    out = []
    for a in sorted({c.alpha for c in report.cells}):
        cells = [c for c in report.cells if c.alpha == a]
        margin = min(c.satisfied - c.threshold for c in cells)
        lowest = min(c.satisfied for c in cells)
        out.append(
            Check(
                f"chance alpha={a:g} satisfied fraction",
                lowest,
                cells[0].threshold,
                all(c.passed for c in cells),
                f"{len(cells)} geometries, worst margin {margin:+.4f}",
            )
        )
    return out


def run_suite(name: str, seed: int = 0) -> list[Check]:
    if name == "chance":
        return chance_checks(seed)
    if name == "jacobians":
        return jacobian_checks(seed=seed)
    if name == "qp":
        return qp_checks(seed=seed)
    if name == "ig-oracle":
        return ig_oracle_checks(seed=seed)
    if name == "quantile":
        return quantile_checks()
    raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")


def format_table(checks: list[Check]) -> str:
    width = max(len(c.name) for c in checks)
    lines = []
    for c in checks:
        tag = "PASS" if c.passed else "FAIL"
        lines.append(f"{tag}  {c.name:<{width}}  value={c.value:.3g}  limit={c.limit:.3g}  {c.detail}".rstrip())
    return "\n".join(lines)
