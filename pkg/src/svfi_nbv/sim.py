"""Closed-loop simulation: scene, integration, sensing, mapping, planning and control.

One episode runs at the control rate. Every ``scan_every`` ticks the depth
camera on the end effector scans the true scene; hits are folded into the
voxel grid and into per-wall point buffers from which the wall beliefs are
refit. Every tick the probe sphere credits coverage, the controller solves
its QP toward the current set point, and the configuration is integrated
with a zero-order hold. Set points come from a short in-place survey and
then from the next-best-view planner.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import ExperimentConfig, SceneConfig
from .controller import EMERGENCY_STOP, RECOVERED, Controller, PlaneObstacle
from .estimation import EstimationError, robust_fit_plane
from .kinematics import BASE_DOF, RobotModel, TaskVector, attachment_points, forward_kinematics, point_jacobian, point_jacobians, wrap_angle
from .planner import (
    LN2,
    NoFreeVoxelsError,
    PlannerState,
    Viewpoint,
    sample_candidates,
    score_candidates,
    select_next,
    should_replan,
    should_stop,
)
from .primitives import Line, Plane, point_line_distance, point_plane_distance
from .qpsolver import OPTIMAL, QProblem, QPSolver
from .sensing import rng_for, simulate_depth_scan, sphere_rays
from .svfi import ChanceParams, PlaneBelief, buffer, monte_carlo_violation_rate, surrogate_row
from .worldmap import VoxelGrid, integrate_depth_scan, mark_covered, mark_residual, raycast_many, state_census

WALLS = ("x_lo", "x_hi", "y_lo", "y_hi", "z_lo", "z_hi")
VERTICAL_WALLS = WALLS[:4]
AXES = "xyz"

# stream ids for rng_for
_SCENE, _SCAN, _COVER, _SAMPLE, _RANSAC, _PERTURB = range(6)

STATUS_CODES = {OPTIMAL: 0, RECOVERED: 1, EMERGENCY_STOP: 2}


# --------------------------------------------------------------------------
# scene


@dataclass(frozen=True)
class Pipe:
    axis: int
    offset: tuple  # the two coordinates across the axis, in increasing axis order
    radius: float = 0.05

    def line(self) -> Line:
        p = np.zeros(3)
        others = [a for a in range(3) if a != self.axis]
        p[others[0]], p[others[1]] = self.offset
        d = np.zeros(3)
        d[self.axis] = 1.0
        return Line(p, d, self.radius)


@dataclass(frozen=True)
class Scene:
    side: float
    pipes: tuple
    start: np.ndarray

    def walls(self) -> dict:
        """True wall planes with normals pointing into the cube."""
        out = {}
        for a in range(3):
            n = np.zeros(3)
            n[a] = 1.0
            out[f"{AXES[a]}_lo"] = Plane(n, 0.0)
            out[f"{AXES[a]}_hi"] = Plane(-n, -self.side)
        return {k: out[k] for k in WALLS}

    def lines(self) -> list[Line]:
        return [p.line() for p in self.pipes]


def _line_distance(l1: Line, l2: Line) -> float:
    c = np.cross(l1.d_l, l2.d_l)
    nc = np.linalg.norm(c)
    if nc < 1e-12:
        return point_line_distance(l1.p_l, l2)
    return abs(float((l2.p_l - l1.p_l) @ c)) / nc


def random_pipes(n: int, side: float, radius: float, rng: np.random.Generator, max_tries: int = 1000) -> tuple:
    """Axis-aligned pipes in the ring between the walls and the base area.

    At least one horizontal coordinate across each pipe lies in a band 0.15 to
    0.35 of the side length from a wall, so pipes never cross the central
    region the base moves in; the remaining coordinate is free within
    0.15 .. side - 0.15.
    """
    s = side / 1.5
    bands = [(0.15 * s, 0.35 * s), (1.15 * s, 1.35 * s)]
    lo, hi = 0.15 * s, 1.35 * s
    pipes: list[Pipe] = []
    for _ in range(max_tries):
        if len(pipes) == n:
            break
        axis = int(rng.integers(0, 3))
        band = bands[int(rng.integers(0, 2))]
        ring = float(rng.uniform(*band))
        free = float(rng.uniform(lo, hi))
        if axis == 2:
            offset = (ring, free) if rng.random() < 0.5 else (free, ring)
        else:
            # horizontal pipe: horizontal cross coordinate in the ring, height free
            offset = (ring, free)
        cand = Pipe(axis, offset, radius)
        if all(_line_distance(cand.line(), p.line()) >= 0.25 * s for p in pipes):
            pipes.append(cand)
    if len(pipes) < n:
        raise RuntimeError(f"could not place {n} separated pipes")
    return tuple(pipes)


def make_scene(cfg: SceneConfig, seed: int) -> Scene:
    if cfg.pipes is not None:
        pipes = tuple(Pipe(AXES.index(p.axis), tuple(float(v) for v in p.offset), p.radius) for p in cfg.pipes)
    else:
        pipes = random_pipes(cfg.n_pipes, cfg.side, cfg.pipe_radius, rng_for(seed, _SCENE))
    return Scene(cfg.side, pipes, np.asarray(cfg.start, dtype=float))


# --------------------------------------------------------------------------
# integration


def step(model: RobotModel, q, u, dt: float) -> tuple[np.ndarray, bool]:
    """Zero-order-hold update; returns the new configuration and whether a joint limit clamped.

    The base follows the exact unicycle arc for forward speed
    ``v = xdot cos(phi) + ydot sin(phi)`` and turn rate ``phidot``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = np.asarray(q, dtype=float).copy()
    u = np.asarray(u, dtype=float)
    x, y, phi = q[0], q[1], q[2]
    v = u[0] * math.cos(phi) + u[1] * math.sin(phi)
    w = u[2]
    if abs(w) > 1e-12:
        phi1 = phi + w * dt
        x += v / w * (math.sin(phi1) - math.sin(phi))
        y -= v / w * (math.cos(phi1) - math.cos(phi))
    else:
        phi1 = phi
        x += v * dt * math.cos(phi)
        y += v * dt * math.sin(phi)
    q[0], q[1], q[2] = x, y, wrap_angle(phi1)
    arm = q[BASE_DOF:] + u[BASE_DOF:] * dt
    lo, hi = model.joint_limits[:, 0], model.joint_limits[:, 1]
    clamped = bool(np.any(arm < lo) or np.any(arm > hi))
    q[BASE_DOF:] = np.clip(arm, lo, hi)
    return q, clamped


# --------------------------------------------------------------------------
# wall beliefs


class WallTracker:
    """Per-wall point buffers filled by nearest-wall association, refit on change."""

    def __init__(self, scene: Scene, cfg, seed: int):
        self.nominal = scene.walls()
        self.lines = scene.lines()
        self.cfg = cfg
        self.seed = seed
        self.center = np.full(3, scene.side / 2.0)
        self.points = {w: np.zeros((0, 3)) for w in WALLS}
        self.dirty = {w: False for w in WALLS}
        self.beliefs: dict[str, PlaneBelief] = {}
        self.n_fits = 0

    def add(self, pts) -> None:
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        if not len(pts):
            return
        dist = np.stack([np.abs(pts @ p.n_pi - p.d_pi) for p in self.nominal.values()], axis=1)
        nearest = np.argmin(dist, axis=1)
        ok = dist[np.arange(len(pts)), nearest] < self.cfg.association_gate
        for line in self.lines:
            rel = pts - line.p_l
            radial = rel - np.outer(rel @ line.d_l, line.d_l)
            ok &= np.linalg.norm(radial, axis=1) > line.radius + self.cfg.association_gate
        cap = self.cfg.buffer_points
        for k, w in enumerate(WALLS):
            sel = pts[ok & (nearest == k)]
            if len(sel):
                self.points[w] = np.vstack([self.points[w], sel])[-cap:]
                self.dirty[w] = True

    def refit(self) -> dict:
        for k, w in enumerate(WALLS):
            if not self.dirty[w] or len(self.points[w]) < self.cfg.min_points:
                continue
            self.dirty[w] = False
            try:
                b = robust_fit_plane(
                    self.points[w],
                    inlier_threshold=self.cfg.inlier_threshold,
                    iterations=self.cfg.ransac_iterations,
                    seed=np.random.SeedSequence([self.seed, _RANSAC, k, self.n_fits]),
                    min_points=self.cfg.min_points,
                )
            except EstimationError:
                continue
            self.n_fits += 1
            if point_plane_distance(self.center, b.pi_hat) < 0:
                b = b.flipped()
            self.beliefs[w] = b
        return self.beliefs

    def obstacles(self, d_safe_base: float, d_safe_probe: float) -> list[PlaneObstacle]:
        out = []
        for w in WALLS:
            if w not in self.beliefs:
                continue
            atts = (("base_center", d_safe_base), ("probe", d_safe_probe)) if w in VERTICAL_WALLS else (("probe", d_safe_probe),)
            out.append(PlaneObstacle(self.beliefs[w], atts, w))
        return out


# --------------------------------------------------------------------------
# reach envelope


@dataclass(frozen=True)
class ReachEnvelope:
    """Where the planner may put the probe: inside the cube with margin, clear of pipes, within arm reach."""

    base_lo: np.ndarray
    base_hi: np.ndarray
    shoulder_height: float
    tool_length: float
    reach: float
    box_lo: np.ndarray
    box_hi: np.ndarray
    lines: tuple
    line_clearance: float

    def shoulder_distance(self, p) -> np.ndarray:
        p = np.atleast_2d(p)
        dxy = np.maximum(0.0, np.maximum(self.base_lo - p[:, :2], p[:, :2] - self.base_hi))
        dz = p[:, 2] - self.shoulder_height
        return np.sqrt(np.sum(dxy**2, axis=1) + dz**2)

    def position_ok(self, p) -> np.ndarray:
        p = np.atleast_2d(p)
        ok = np.all((p >= self.box_lo) & (p <= self.box_hi), axis=1)
        ok &= self.shoulder_distance(p) <= self.reach + self.tool_length
        for line in self.lines:
            rel = p - line.p_l
            radial = rel - np.outer(rel @ line.d_l, line.d_l)
            ok &= np.linalg.norm(radial, axis=1) >= line.radius + self.line_clearance
        return ok

    def pose_ok(self, p, n) -> np.ndarray:
        wrist = np.atleast_2d(p) - self.tool_length * np.atleast_2d(n)
        return self.position_ok(p) & (self.shoulder_distance(wrist) <= self.reach)


def reach_envelope(cfg: ExperimentConfig, model: RobotModel, scene: Scene) -> ReachEnvelope:
    c = cfg.control
    side = scene.side
    base_margin = c.base_box_margin + 0.05
    box_margin = c.d_safe_probe + 0.05
    # shoulder height: first joint position with the base at the origin
    mount_z = float(model.mount[2, 3] + model.joint_offsets[0][2])
    return ReachEnvelope(
        base_lo=np.full(2, base_margin),
        base_hi=np.full(2, side - base_margin),
        shoulder_height=mount_z,
        tool_length=float(np.linalg.norm(model.tool_offset)),
        reach=cfg.planner.reach_radius,
        box_lo=np.full(3, box_margin),
        box_hi=np.full(3, side - box_margin),
        lines=tuple(scene.lines()),
        line_clearance=c.line_clearance + 0.05,
    )


def face_exposed(grid: VoxelGrid, occ: np.ndarray) -> np.ndarray:
    """Voxels with at least one in-grid face neighbour that is not occupied.

    The traversal moves between face neighbours and stops at the first
    occupied voxel, so no ray can reach a voxel that fails this test.
    """
    o = occ.reshape(tuple(int(d) for d in grid.dims))
    open_ = np.zeros(o.shape, dtype=bool)
    for ax in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax], hi[ax] = slice(None, -1), slice(1, None)
        open_[tuple(lo)] |= ~o[tuple(hi)]
        open_[tuple(hi)] |= ~o[tuple(lo)]
    return open_.ravel()


def reachable_occupied(grid: VoxelGrid, env: ReachEnvelope, probe_radius: float, mask=None) -> np.ndarray:
    """Voxels of ``mask`` (default: mapped occupied) within ``probe_radius - 2 res`` of a reachable
    probe position and with a face a ray can arrive through."""
    from scipy.spatial import cKDTree

    occ = grid.occupied_mask()
    mask = (occ if mask is None else mask) & face_exposed(grid, occ)
    all_ids = np.arange(grid.size)
    centers = grid.centers(all_ids)
    reach_pts = centers[env.position_ok(centers)]
    out = np.zeros(grid.size, dtype=bool)
    ids = np.nonzero(mask)[0]
    if not len(ids) or not len(reach_pts):
        return out
    tree = cKDTree(reach_pts)
    d, _ = tree.query(centers[ids], k=1, distance_upper_bound=probe_radius - 2 * grid.resolution)
    out[ids[np.isfinite(d)]] = True
    return out


# --------------------------------------------------------------------------
# run log


@dataclass
class RunLog:
    columns: list
    ticks: np.ndarray
    plans: list
    summary: dict
    grid: Optional[VoxelGrid] = None

    def column(self, name: str) -> np.ndarray:
        return self.ticks[:, self.columns.index(name)]

    def to_bytes(self) -> bytes:
        """Canonical serialisation; equal logs give equal bytes."""
        parts = [",".join(self.columns).encode(), np.ascontiguousarray(self.ticks, dtype="<f8").tobytes()]
        parts.append(json.dumps(self.plans, sort_keys=True, default=float).encode())
        parts.append(json.dumps(self.summary, sort_keys=True, default=float).encode())
        if self.grid is not None:
            for a in (self.grid.logodds, self.grid.observed, self.grid.covered, self.grid.residual):
                parts.append(np.ascontiguousarray(a).tobytes())
        return b"\x00".join(parts)


def _tick_columns(n: int, n_lines: int) -> list:
    cols = ["t"] + [f"q{i}" for i in range(n)] + [f"u{i}" for i in range(n)]
    cols += ["err_norm", "status", "slack_norm", "lateral_velocity", "min_hard_margin", "unknown", "covered"]
    cols += [f"true_base_{w}" for w in VERTICAL_WALLS] + [f"true_probe_{w}" for w in WALLS]
    cols += [f"margin_{w}_base" for w in VERTICAL_WALLS] + [f"margin_{w}_probe" for w in WALLS]
    cols += [f"buffer_{w}_probe" for w in WALLS]
    cols += [f"line{k}_{a}" for k in range(n_lines) for a in ("probe", "elbow")]
    return cols


def _survey_set_points(model: RobotModel, q, steps: int) -> list:
    x = forward_kinematics(model, q)
    c = np.array([q[0], q[1], 0.0])
    out = []
    for k in range(1, steps + 1):
        a = 2.0 * math.pi * k / steps
        r = np.array([[math.cos(a), -math.sin(a), 0.0], [math.sin(a), math.cos(a), 0.0], [0.0, 0.0, 1.0]])
        out.append(TaskVector(c + r @ (x.t_e - c), r @ x.n_e))
    return out


def _sample_reachable(grid, env, n, seed, iteration, tabu, tabu_radius, max_rounds=20) -> list:
    """Draw ``n`` candidates from free voxels, keeping reachable, non-tabu poses."""
    allowed = env.position_ok(grid.centers(np.arange(grid.size)))
    out: list[Viewpoint] = []
    for r in range(max_rounds):
        try:
            batch = sample_candidates(grid, n, rng_for(seed, _SAMPLE, iteration, r), allowed)
        except NoFreeVoxelsError:
            return out
        pos = np.array([v.t_c for v in batch])
        dirs = np.array([v.n_c for v in batch])
        ok = env.pose_ok(pos, dirs)
        if tabu:
            tb = np.array(tabu)
            dist = np.linalg.norm(pos[:, None, :] - tb[None, :, :], axis=2).min(axis=1)
            ok &= dist > tabu_radius
        out.extend(v for v, keep in zip(batch, ok) if keep)
        if len(out) >= n:
            return out[:n]
    return out


def run_episode(cfg: ExperimentConfig, seed: Optional[int] = None, scene: Optional[Scene] = None, keep_grid: bool = True) -> RunLog:
    seed = cfg.seed if seed is None else int(seed)
    scene = scene or make_scene(cfg.scene, seed)
    model = cfg.robot.model()
    rate = cfg.control.rate_hz
    dt = 1.0 / rate
    depth, probe = cfg.sensing.depth(), cfg.sensing.probe()
    grid = VoxelGrid.cube(scene.side, cfg.map.resolution, cfg.map.occupancy())
    walls = scene.walls()
    true_lines = scene.lines()
    ctrl_lines = list(true_lines)
    if cfg.scene.pipe_perturbation_std > 0:
        prng = rng_for(seed, _PERTURB)
        ctrl_lines = []
        for line in true_lines:
            off = prng.standard_normal(3) * cfg.scene.pipe_perturbation_std
            off -= (off @ line.d_l) * line.d_l
            ctrl_lines.append(Line(line.p_l + off, line.d_l, line.radius))
    tracker = WallTracker(scene, cfg.estimation, seed)
    ctrl = Controller(model, cfg.controller_params())
    env = reach_envelope(cfg, model, scene)
    pstate = PlannerState(rate, cfg.planner.stall_window_s, cfg.planner.err_threshold, cfg.planner.stall_tol)
    quantum = cfg.planner.coverage_sign * LN2

    q = scene.start.copy()
    n = model.n
    columns = _tick_columns(n, len(true_lines))
    col = {c: i for i, c in enumerate(columns)}
    rows: list = []
    plans: list = []
    survey = _survey_set_points(model, q, cfg.planner.survey_steps) if cfg.planner.survey else []
    tabu: list = []
    need_plan = True
    sp_kind = ""
    sp_start = 0
    estop_streak = 0
    n_estop = n_recovered = n_clamped = 0
    reason = "budget"
    max_ticks = int(round(cfg.sim.max_time_s * rate))
    estop_limit = int(round(cfg.sim.estop_abort_s * rate))
    sp_timeout = int(round(cfg.planner.setpoint_timeout_s * rate))

    tick = 0
    while tick < max_ticks:
        x = forward_kinematics(model, q)
        if tick % cfg.sensing.scan_every == 0:
            scan = simulate_depth_scan(
                list(walls.values()),
                true_lines,
                x.t_e,
                x.n_e,
                depth,
                cfg.sensing.range_noise,
                cfg.sensing.dropout,
                rng_for(seed, _SCAN, tick),
                cfg.sensing.scan_rays,
                cfg.sensing.min_range_fault,
            )
            if grid.contains(x.t_e):
                integrate_depth_scan(grid, x.t_e, scan.hits, depth.max_range, scan.no_return)
            tracker.add(scan.hits)
            tracker.refit()
        if grid.contains(x.t_e):
            dirs = sphere_rays(probe, cfg.sensing.coverage_rays, rng_for(seed, _COVER, tick))
            out, counts, hits = raycast_many(grid, np.broadcast_to(x.t_e, dirs.shape), dirs, probe.radius)
            if hits.any():
                mark_covered(grid, out[hits, counts[hits] - 1])

        if need_plan:
            need_plan = False
            census = state_census(grid, quantum)
            rec = {"iteration": pstate.iteration + 1, "tick": tick, "t": tick * dt, **census.as_dict()}
            if survey:
                sp = survey.pop(0)
                sp_kind = "survey"
                rec.update(kind="survey", g_v=np.nan, g_c=np.nan, g_w=np.nan, n_candidates=0)
            else:
                cands = _sample_reachable(grid, env, cfg.planner.candidates, seed, pstate.iteration, tabu, cfg.planner.tabu_radius)
                if not cands:
                    reason = "no-candidates"
                    plans.append({**rec, "kind": "stop", "g_v": np.nan, "g_c": np.nan, "g_w": np.nan, "n_candidates": 0})
                    break
                score_candidates(grid, cands, depth, probe, cfg.planner.beta, pstate.iteration, seed, quantum)
                best, sp = select_next(cands)
                rec.update(kind="nbv", g_v=best.g_v, g_c=best.g_c, g_w=best.g_w, n_candidates=len(cands))
                if should_stop(best.g_w, cfg.planner.stop_gain):
                    rec["kind"] = "stop"
                    rec["residual_marked"] = mark_residual(grid)
                    rec.update(state_census(grid, quantum).as_dict())
                    plans.append(_with_set_point(rec, sp))
                    reason = "stopped"
                    break
                sp_kind = "nbv"
            pstate.new_set_point(sp)
            sp_start = tick
            plans.append(_with_set_point(rec, sp))

        obstacles = tracker.obstacles(cfg.control.d_safe_base, cfg.control.d_safe_probe)
        res = ctrl.step(q, pstate.set_point, obstacles, ctrl_lines)
        if res.status == EMERGENCY_STOP:
            n_estop += 1
            estop_streak += 1
        else:
            estop_streak = 0
        n_recovered += res.status == RECOVERED

        rows.append(_tick_row(columns, col, tick * dt, q, res, model, walls, true_lines, grid, tracker, ctrl))
        if estop_streak > estop_limit:
            reason = "estop-abort"
            tick += 1
            break

        q, clamped = step(model, q, res.u, dt)
        n_clamped += clamped
        tick += 1

        reached = should_replan(pstate, res.err_norm)
        if sp_kind == "survey" and res.err_norm < 0.05:
            reached = True
        timed_out = tick - sp_start >= sp_timeout
        if reached or timed_out:
            if sp_kind == "nbv" and res.err_norm > 0.05:
                tabu.append(np.asarray(pstate.set_point.t_e, dtype=float))
            need_plan = True

    ticks = np.array(rows) if rows else np.zeros((0, len(columns)))
    summary = _summary(cfg, seed, scene, grid, env, probe, ticks, col, plans, reason, n_estop, n_recovered, n_clamped, quantum)
    return RunLog(columns, ticks, plans, summary, grid if keep_grid else None)


def _with_set_point(rec: dict, sp: TaskVector) -> dict:
    rec = dict(rec)
    for k, v in zip(("sp_x", "sp_y", "sp_z", "sp_nx", "sp_ny", "sp_nz"), sp.as_vector()):
        rec[k] = float(v)
    return rec


def _tick_row(columns, col, t, q, res, model, walls, lines, grid, tracker, ctrl):
    row = np.full(len(columns), np.nan)
    n = model.n
    row[0] = t
    row[1 : 1 + n] = q
    row[1 + n : 1 + 2 * n] = res.u
    row[col["err_norm"]] = res.err_norm
    row[col["status"]] = STATUS_CODES.get(res.status, 3)
    row[col["slack_norm"]] = res.slack_norm
    row[col["lateral_velocity"]] = -math.sin(q[2]) * res.u[0] + math.cos(q[2]) * res.u[1]
    hard = [m for lab, m in res.margins.items() if ":" in lab or lab.startswith("box_")]
    row[col["min_hard_margin"]] = min(hard) if hard else np.nan
    row[col["unknown"]] = int(np.count_nonzero(~grid.observed & ~grid.residual))
    row[col["covered"]] = int(np.count_nonzero(grid.covered))
    pj = point_jacobians(model, q, ("base_center", "probe", "elbow"))
    pts = {k: v[0] for k, v in pj.items()}
    for w in VERTICAL_WALLS:
        row[col[f"true_base_{w}"]] = point_plane_distance(pts["base_center"], walls[w])
    for w in WALLS:
        row[col[f"true_probe_{w}"]] = point_plane_distance(pts["probe"], walls[w])
    for w in VERTICAL_WALLS:
        m = res.margins.get(f"{w}:base_center")
        if m is not None:
            row[col[f"margin_{w}_base"]] = m
    for w in WALLS:
        m = res.margins.get(f"{w}:probe")
        if m is not None:
            row[col[f"margin_{w}_probe"]] = m
        if w in tracker.beliefs:
            p, j_t = pj["probe"]
            row[col[f"buffer_{w}_probe"]] = buffer(tracker.beliefs[w], p, j_t, res.u, ctrl.params.chance(ctrl.params.d_safe_probe))
    for k, line in enumerate(lines):
        row[col[f"line{k}_probe"]] = point_line_distance(pts["probe"], line)
        row[col[f"line{k}_elbow"]] = point_line_distance(pts["elbow"], line)
    return row


def _summary(cfg, seed, scene, grid, env, probe, ticks, col, plans, reason, n_estop, n_recovered, n_clamped, quantum) -> dict:
    census = state_census(grid, quantum)
    reach = reachable_occupied(grid, env, probe.radius)
    n_reach = int(reach.sum())
    covered_reach = int((reach & grid.covered).sum())
    c = cfg.control
    tol = 0.005
    if len(ticks):
        base = ticks[:, [col[f"true_base_{w}"] for w in VERTICAL_WALLS]]
        prb = ticks[:, [col[f"true_probe_{w}"] for w in WALLS]]
        base_viol = int(np.count_nonzero(np.any(base < c.d_safe_base - tol, axis=1)))
        probe_viol = int(np.count_nonzero(np.any(prb < c.d_safe_probe - tol, axis=1)))
        min_base, min_probe = float(base.min()), float(prb.min())
        unknown = ticks[:, col["unknown"]]
        max_lat = float(np.max(np.abs(ticks[:, col["lateral_velocity"]])))
        max_slack = float(np.max(ticks[:, col["slack_norm"]]))
    else:
        base_viol = probe_viol = 0
        min_base = min_probe = max_lat = max_slack = float("nan")
        unknown = np.zeros(0)
    n_ticks = len(ticks)
    u0 = float(grid.size)
    quarter = unknown[: max(1, n_ticks // 4)] if n_ticks else unknown
    return {
        "seed": seed,
        "termination": reason,
        "ticks": n_ticks,
        "sim_time_s": n_ticks / c.rate_hz,
        "planning_iterations": sum(1 for p in plans if p.get("kind") == "nbv"),
        "pipes": [{"axis": AXES[p.axis], "offset": list(p.offset), "radius": p.radius} for p in scene.pipes],
        "census": census.as_dict(),
        "voxels": grid.size,
        "reachable_occupied": n_reach,
        "reachable_occupied_covered": covered_reach,
        "reachable_coverage": covered_reach / n_reach if n_reach else 1.0,
        "unknown_fraction_start": 1.0,
        "unknown_fraction_quarter": float(quarter.min() / u0) if len(quarter) else 1.0,
        "unknown_fraction_end": census.unknown / u0,
        "base_violation_ticks": base_viol,
        "probe_violation_ticks": probe_viol,
        "min_true_base_distance": min_base,
        "min_true_probe_distance": min_probe,
        "emergency_stop_ticks": n_estop,
        "recovered_ticks": n_recovered,
        "joint_clamp_ticks": n_clamped,
        "max_lateral_velocity": max_lat,
        "max_slack": max_slack,
    }


# --------------------------------------------------------------------------
# chance-constraint validation


@dataclass(frozen=True)
class ChanceCell:
    alpha: float
    geometry: int
    sigma_scale: float
    satisfied: float
    satisfied_raw: float
    threshold: float
    boundary_residual: float
    buffer: float

    @property
    def passed(self) -> bool:
        return self.satisfied >= self.threshold


@dataclass
class ChanceReport:
    cells: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cells)


def tangent_covariance(n, normal_var: float, offset_var: float, rng: np.random.Generator) -> np.ndarray:
    """Random plane covariance with no variance along the normal itself."""
    n = np.asarray(n, dtype=float)
    u, _, _ = np.linalg.svd(n.reshape(3, 1))
    basis = np.zeros((4, 3))
    basis[:3, :2] = u[:, 1:]
    basis[3, 2] = 1.0
    a = rng.standard_normal((3, 3))
    corr = a @ a.T + 0.5 * np.eye(3)
    d = np.sqrt(np.diag(corr))
    corr = corr / np.outer(d, d)
    scale = np.sqrt([normal_var, normal_var, offset_var])
    sigma = basis @ (corr * np.outer(scale, scale)) @ basis.T
    return 0.5 * (sigma + sigma.T)


def boundary_control(belief: PlaneBelief, t, j_t, params: ChanceParams, push, iterations: int = 200, tol: float = 1e-13):
    """Velocity closest to ``push`` that satisfies the surrogate row built from itself.

    The row's buffer depends on the previous command, so the QP is iterated
    with that command fed back until it stops changing; with ``push``
    pointing into the plane the row ends up active.
    """
    n = j_t.shape[1]
    solver = QPSolver()
    qdot = np.zeros(n)
    for _ in range(iterations):
        row = surrogate_row(belief, t, j_t, qdot, params)
        res = solver.solve(QProblem(2.0 * np.eye(n), -2.0 * push, A_in=row.coeffs[None, :], b_in=[row.bound]))
        if res.status != OPTIMAL:
            raise RuntimeError(f"boundary QP returned {res.status}")
        change = float(np.max(np.abs(res.u - qdot)))
        qdot = res.u
        if change < tol:
            break
    row = surrogate_row(belief, t, j_t, qdot, params)
    return qdot, float(row.bound - row.coeffs @ qdot), row.meta["buffer"]


def run_chance_validation(
    alphas=(0.5, 0.7, 0.9, 0.95),
    n_geometries: int = 20,
    n_samples: int = 100_000,
    seed: int = 0,
    normal_var_range=(1e-7, 1e-5),
    offset_var_range=(1e-6, 1e-4),
    eta: float = 1.0,
    d_safe: float = 0.1,
    model: RobotModel | None = None,
) -> ChanceReport:
    """Monte Carlo check of the surrogate on random robot and plane geometries."""
    from .kinematics import default_robot_model

    model = model or default_robot_model()
    report = ChanceReport()
    for g in range(n_geometries):
        rng = rng_for(seed, 99, g)
        q = np.concatenate([[rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0), rng.uniform(-math.pi, math.pi)], rng.uniform(-1.5, 1.5, model.n_arm)])
        t, j_t = point_jacobian(model, q, "probe")
        nvec = rng.standard_normal(3)
        nvec /= np.linalg.norm(nvec)
        dist = rng.uniform(d_safe + 0.05, d_safe + 0.5)
        plane = Plane(nvec, float(nvec @ t - dist))
        nv = math.exp(rng.uniform(*np.log(normal_var_range)))
        ov = math.exp(rng.uniform(*np.log(offset_var_range)))
        sigma = tangent_covariance(nvec, nv, ov, rng)
        belief = PlaneBelief(plane, sigma)
        push = -3.0 * (j_t.T @ nvec)
        for a in alphas:
            params = ChanceParams(alpha=a, eta=eta, d_safe=d_safe)
            qdot, resid, b = boundary_control(belief, t, j_t, params, push)
            mc = monte_carlo_violation_rate(plane, sigma, t, j_t, qdot, params, n_samples, seed=int(rng_for(seed, 98, g).integers(2**31)) + int(a * 1000))
            thr = a - 3.0 * math.sqrt(a * (1.0 - a) / n_samples)
            report.cells.append(ChanceCell(a, g, nv, mc.satisfied, mc.satisfied_raw, thr, resid, b))
    return report
