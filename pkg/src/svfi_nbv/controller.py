"""Whole-body velocity controller posed as one QP per tick.

Decision vector ``[qdot; s]``: configuration velocities followed by one
non-negative slack per slack-eligible row. The cost is

    ||J qdot + kappa x_err||^2 + lambda_c ||qdot||^2 + lambda_s ||s||^2

and the constraints are the nonholonomic equality, slack-relaxed joint
velocity limits and point-to-line VFIs, hard workspace rows, and one
chance-constrained surrogate per (wall belief, attachment) pair.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kinematics import RobotModel, TaskVector, forward_kinematics, nonholonomic_row, point_jacobians, task_jacobian
from .primitives import CHANCE, EQUALITY, HARD, SLACK, ConstraintRow, Line, Plane, point_line_vfi_row, point_plane_vfi_row
from .qpsolver import INFEASIBLE, OPTIMAL, QProblem, QPSolver
from .svfi import ChanceParams, PlaneBelief, surrogate_row

EMERGENCY_STOP = "emergency-stop"
RECOVERED = "recovered"


@dataclass(frozen=True)
class ControllerParams:
    kappa: float = 6.0
    lambda_c: float = 1.2
    lambda_s: float = 5e3
    eta: float = 1.0
    alpha: float = 0.7
    d_safe_base: float = 0.5
    d_safe_probe: float = 0.1
    line_clearance: float = 0.075
    workspace_lo: tuple = (0.0, 0.0, 0.0)
    workspace_hi: tuple = (1.5, 1.5, 1.5)
    base_box_margin: float = 0.5
    probe_box_margin: float = 0.1
    line_attachments: tuple = ("probe", "elbow")
    joint_position_limits: bool = False
    tol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        if self.kappa <= 0 or self.lambda_c <= 0 or self.lambda_s <= 0:
            raise ValueError("kappa, lambda_c and lambda_s must be positive")

    def chance(self, d_safe: float) -> ChanceParams:
        return ChanceParams(alpha=self.alpha, eta=self.eta, d_safe=d_safe)


@dataclass(frozen=True)
class PlaneObstacle:
    """A wall belief and the attachments it constrains, as ``(name, d_safe)`` pairs."""

    belief: PlaneBelief
    attachments: tuple = (("base_center", 0.5), ("probe", 0.1))
    label: str = "plane"


@dataclass(frozen=True)
class ControlTick:
    u: np.ndarray
    slack: np.ndarray
    margins: dict
    distances: dict
    err_norm: float
    status: str
    iterations: int = 0

    @property
    def slack_norm(self) -> float:
        return float(np.max(np.abs(self.slack), initial=0.0))


def task_error(x: TaskVector, target: TaskVector) -> np.ndarray:
    """``x - x_d`` with the direction part as the raw difference of unit vectors."""
    return np.concatenate([x.t_e - target.t_e, x.n_e - target.n_e])


def build_objective(J, x_err, kappa: float, lambda_c: float, lambda_s: float, n_slack: int):
    """Hessian and gradient of the tracking cost over ``[qdot; s]``."""
    J = np.asarray(J, dtype=float)
    n = J.shape[1]
    H = np.zeros((n + n_slack, n + n_slack))
    H[:n, :n] = 2.0 * (J.T @ J + lambda_c * np.eye(n))
    H[n:, n:] = 2.0 * lambda_s * np.eye(n_slack)
    g = np.zeros(n + n_slack)
    g[:n] = 2.0 * kappa * J.T @ np.asarray(x_err, dtype=float)
    return H, g


def _as_obstacle(b, params: ControllerParams) -> PlaneObstacle:
    if isinstance(b, PlaneObstacle):
        return b
    return PlaneObstacle(b, (("base_center", params.d_safe_base), ("probe", params.d_safe_probe)))


def collect_constraints(
    model: RobotModel,
    q,
    qdot_prev,
    beliefs: Sequence = (),
    lines: Sequence[Line] = (),
    params: ControllerParams = ControllerParams(),
) -> list[ConstraintRow]:
    q = np.asarray(q, dtype=float)
    qdot_prev = np.zeros(model.n) if qdot_prev is None else np.asarray(qdot_prev, dtype=float)
    rows: list[ConstraintRow] = []
    n_slack = 0

    w, w0 = nonholonomic_row(q)
    rows.append(ConstraintRow(w, w0, EQUALITY, "nonholonomic"))

    eye = np.eye(model.n)
    for i, vmax in enumerate(model.velocity_limits):
        for sign, tag in ((1.0, "max"), (-1.0, "min")):
            rows.append(ConstraintRow(sign * eye[i], float(vmax), SLACK, f"qdot{i}_{tag}", slack_index=n_slack))
            n_slack += 1

    if params.joint_position_limits:
        for k, (lo, hi) in enumerate(model.joint_limits):
            i = 3 + k
            rows.append(ConstraintRow(eye[i], params.eta * (hi - q[i]), HARD, f"joint{k}_upper"))
            rows.append(ConstraintRow(-eye[i], params.eta * (q[i] - lo), HARD, f"joint{k}_lower"))

    beliefs = [_as_obstacle(b, params) for b in beliefs]
    names = {"base_center", "probe"} | set(params.line_attachments if lines else ())
    names |= {name for obs in beliefs for name, _ in obs.attachments}
    pj = point_jacobians(model, q, sorted(names))

    lo, hi = np.asarray(params.workspace_lo, float), np.asarray(params.workspace_hi, float)
    boxes = [("base_center", params.base_box_margin, 2), ("probe", params.probe_box_margin, 3)]
    for name, margin, n_axes in boxes:
        point, j_t = pj[name]
        for ax in range(n_axes):
            n_lo = np.zeros(3)
            n_lo[ax] = 1.0
            tag = "xyz"[ax]
            rows.append(point_plane_vfi_row(point, j_t, Plane(n_lo, lo[ax]), margin, params.eta, f"box_{name}_{tag}lo"))
            rows.append(point_plane_vfi_row(point, j_t, Plane(-n_lo, -hi[ax]), margin, params.eta, f"box_{name}_{tag}hi"))

    for k, obs in enumerate(beliefs):
        for name, d_safe in obs.attachments:
            point, j_t = pj[name]
            label = f"{obs.label or 'plane' + str(k)}:{name}"
            rows.append(surrogate_row(obs.belief, point, j_t, qdot_prev, params.chance(d_safe), label))

    for k, line in enumerate(lines):
        for name in params.line_attachments:
            point, j_t = pj[name]
            row = point_line_vfi_row(point, j_t, line, line.radius + params.line_clearance, params.eta, f"line{k}:{name}")
            rows.append(row.with_slack(n_slack))
            n_slack += 1
    return rows


def assemble(rows: Sequence[ConstraintRow], H, g, n: int) -> QProblem:
    n_slack = H.shape[0] - n
    a_eq, b_eq, a_in, b_in, keys = [], [], [], [], []
    for r in rows:
        c = np.zeros(n + n_slack)
        c[:n] = r.coeffs
        if r.kind == EQUALITY:
            a_eq.append(c)
            b_eq.append(r.bound)
            continue
        if r.kind == SLACK:
            c[n + r.slack_index] = -1.0
        a_in.append(c)
        b_in.append(r.bound)
        keys.append(r.label)
    lb = np.full(n + n_slack, -np.inf)
    lb[n:] = 0.0
    return QProblem(
        H,
        g,
        np.array(a_eq).reshape(-1, n + n_slack),
        np.array(b_eq),
        np.array(a_in).reshape(-1, n + n_slack),
        np.array(b_in),
        lb=lb,
        row_keys=keys,
    )


@dataclass
class Controller:
    """Tick-synchronous controller state: solver warm start and the last command."""

    model: RobotModel
    params: ControllerParams = field(default_factory=ControllerParams)
    qdot_prev: Optional[np.ndarray] = None

    def __post_init__(self):
        self.solver = QPSolver(tol=self.params.tol, max_iter=self.params.max_iter)
        if self.qdot_prev is None:
            self.qdot_prev = np.zeros(self.model.n)

    def step(self, q, target: TaskVector, beliefs: Sequence = (), lines: Sequence[Line] = ()) -> ControlTick:
        return control_step(self, q, target, beliefs, lines)


def control_step(ctrl: Controller, q, target: TaskVector, beliefs: Sequence = (), lines: Sequence[Line] = ()) -> ControlTick:
    p = ctrl.params
    model = ctrl.model
    q = np.asarray(q, dtype=float)
    n = model.n
    x = forward_kinematics(model, q)
    x_err = task_error(x, target)
    J = task_jacobian(model, q)
    rows = collect_constraints(model, q, ctrl.qdot_prev, beliefs, lines, p)
    n_slack = sum(1 for r in rows if r.kind == SLACK)
    H, g = build_objective(J, x_err, p.kappa, p.lambda_c, p.lambda_s, n_slack)

    res = ctrl.solver.solve(assemble(rows, H, g, n))
    status = res.status
    if status == INFEASIBLE:
        # a boundary already crossed that the base cannot move away from
        # (e.g. heading parallel to the wall) makes the QP infeasible; hold
        # those boundaries instead of demanding retreat
        held = [
            ConstraintRow(r.coeffs, 0.0, r.kind, r.label, r.slack_index, r.meta)
            if r.kind in (HARD, CHANCE) and r.bound < 0
            else r
            for r in rows
        ]
        retry = ctrl.solver.solve(assemble(held, H, g, n), warm_start=False)
        if retry.status == OPTIMAL:
            res, rows, status = retry, held, RECOVERED
    if status in (OPTIMAL, RECOVERED):
        u = res.u[:n].copy()
        slack = res.u[n:].copy()
    else:
        status = EMERGENCY_STOP if status == INFEASIBLE else status
        u = np.zeros(n)
        slack = np.zeros(n_slack)
    if status == "max-iter":
        status = EMERGENCY_STOP

    margins, distances = {}, {}
    for r in rows:
        m = r.margin(u)
        if r.kind == SLACK:
            m += slack[r.slack_index]
        margins[r.label] = m
        if "distance" in r.meta:
            distances[r.label] = r.meta["distance"]
    ctrl.qdot_prev = u
    return ControlTick(
        u=u,
        slack=slack,
        margins=margins,
        distances=distances,
        err_norm=float(np.linalg.norm(x_err)),
        status=status,
        iterations=res.iterations,
    )
