import math

import numpy as np
import pytest

from svfi_nbv.controller import (
    EMERGENCY_STOP,
    RECOVERED,
    Controller,
    ControllerParams,
    PlaneObstacle,
    assemble,
    build_objective,
    collect_constraints,
)
from svfi_nbv.kinematics import TaskVector, forward_kinematics, point_jacobian
from svfi_nbv.primitives import CHANCE, EQUALITY, SLACK, Line, Plane
from svfi_nbv.qpsolver import QPSolver
from svfi_nbv.svfi import PlaneBelief

Q0 = np.array([0.75, 0.75, 0.0, 0.0, 1.3, -2.5, 0.0, 0.9, 0.0])


def _unconstrained(J, x_err, kappa=6.0, lambda_c=1.2):
    H, g = build_objective(J, x_err, kappa, lambda_c, 5e3, 0)
    return QPSolver().solve(assemble([], H, g, J.shape[1])).u


def test_closed_form_step():
    e1 = np.eye(6)[0]
    u = _unconstrained(np.eye(6), e1)
    assert u[0] == pytest.approx(-6 / 2.2, abs=1e-12)
    np.testing.assert_allclose(u[1:], 0.0, atol=1e-14)
    np.testing.assert_array_equal(_unconstrained(np.eye(6), np.zeros(6)), 0.0)


def test_damping_scales_isotropic_step(rng):
    x = rng.standard_normal(6)
    for lam in (0.5, 1.2, 3.0):
        u = _unconstrained(np.eye(6), x, lambda_c=lam)
        assert np.linalg.norm(u) == pytest.approx(6 * np.linalg.norm(x) / (1 + lam), rel=1e-12)


def _count(rows, kind):
    return sum(1 for r in rows if r.kind == kind)


def test_row_counts(model):
    p = ControllerParams(joint_position_limits=False)
    rows = collect_constraints(model, Q0, None, (), (), p)
    assert _count(rows, EQUALITY) == 1
    assert _count(rows, CHANCE) == 0
    assert _count(rows, SLACK) == 2 * model.n
    assert {r.label for r in rows if r.label.startswith("box_")} and all(
        r.label.startswith(("nonholonomic", "qdot", "box_")) for r in rows
    )
    belief = PlaneBelief(Plane(np.array([1.0, 0.0, 0.0]), 0.0), 1e-6 * np.eye(4))
    rows = collect_constraints(model, Q0, None, [belief], (), p)
    assert _count(rows, CHANCE) == 2
    line = Line(np.array([1.3, 0.0, 0.4]), np.array([0.0, 1.0, 0.0]), 0.05)
    rows = collect_constraints(model, Q0, None, (), [line], p)
    line_rows = [r for r in rows if r.label.startswith("line")]
    assert len(line_rows) == 2
    assert len({r.slack_index for r in line_rows}) == 2


def test_free_space_convergence_and_nonholonomy(model):
    ctrl = Controller(model, ControllerParams())
    x0 = forward_kinematics(model, Q0)
    target = TaskVector(x0.t_e + np.array([0.05, 0.03, -0.04]), x0.n_e)
    from svfi_nbv.sim import step

    q = Q0.copy()
    errs = []
    for _ in range(300):
        res = ctrl.step(q, target)
        assert res.status == "optimal"
        assert abs(-math.sin(q[2]) * res.u[0] + math.cos(q[2]) * res.u[1]) < 1e-9
        assert all(m > -1e-9 for m in res.margins.values())
        errs.append(res.err_norm)
        q, _ = step(model, q, res.u, 0.01)
    # damping lambda_c = 1.2 slows the slow directions; the decay is still monotone
    assert errs[-1] < 0.5 * errs[0]
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_active_chance_row_limits_approach(model):
    # a wall just beyond the probe in +x, target behind it
    t, j = point_jacobian(model, Q0, "probe")
    wall = Plane(np.array([-1.0, 0.0, 0.0]), -(t[0] + 0.15))
    belief = PlaneBelief(wall, 1e-5 * np.eye(4))
    p = ControllerParams(joint_position_limits=False, workspace_hi=(3.0, 3.0, 3.0))
    ctrl = Controller(model, p)
    x0 = forward_kinematics(model, Q0)
    target = TaskVector(x0.t_e + np.array([0.5, 0.0, 0.0]), x0.n_e)
    obs = PlaneObstacle(belief, (("probe", 0.1),), "wall")
    res = ctrl.step(Q0, target, [obs])
    row = [r for r in collect_constraints(model, Q0, np.zeros(model.n), [obs], (), p) if r.label == "wall:probe"][0]
    approach = -(wall.n_pi @ (j @ res.u))
    assert approach <= row.meta["distance"] - 0.1 - row.meta["buffer"] + 1e-9
    assert res.margins["wall:probe"] == pytest.approx(0.0, abs=1e-7)


def test_recovery_and_emergency_stop(model):
    # base already inside the margin of a wall parallel to its heading: it cannot retreat
    t, _ = point_jacobian(model, Q0, "base_center")
    wall = Plane(np.array([0.0, 1.0, 0.0]), t[1] - 0.4)
    obs = PlaneObstacle(PlaneBelief(wall, 1e-8 * np.eye(4)), (("base_center", 0.5),), "side")
    ctrl = Controller(model, ControllerParams(joint_position_limits=False, workspace_lo=(-3, -3, -3), workspace_hi=(3, 3, 3)))
    res = ctrl.step(Q0, forward_kinematics(model, Q0), [obs])
    assert res.status == RECOVERED
    assert abs(res.u[1]) < 1e-9
    # a solver that runs out of iterations gives no command to trust
    x0 = forward_kinematics(model, Q0)
    far = TaskVector(x0.t_e + np.array([0.4, 0.3, 0.2]), x0.n_e)
    res = Controller(model, ControllerParams(max_iter=1)).step(Q0, far, [obs])
    assert res.status == EMERGENCY_STOP
    np.testing.assert_array_equal(res.u, 0.0)


def test_params_validation():
    with pytest.raises(ValueError):
        ControllerParams(kappa=0.0)
