import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from svfi_nbv.qpsolver import INFEASIBLE, OPTIMAL, QProblem, QPSolver, kkt_residuals
from svfi_nbv.validation import projected_gradient_qp, random_feasible_qp


def test_unconstrained():
    a = np.array([1.0, -2.0, 0.5])
    r = QPSolver().solve(QProblem(2 * np.eye(3), -2 * a))
    assert r.status == OPTIMAL
    np.testing.assert_allclose(r.u, a, atol=1e-14)


def test_active_box():
    a = np.array([0.0, -1.0, 0.2])
    b = np.array([0.5, 0.0, 1.0])
    r = QPSolver().solve(QProblem(2 * np.eye(3), -2 * a, lb=b))
    np.testing.assert_allclose(r.u, b, atol=1e-12)
    assert set(r.active) == {("lb", 0), ("lb", 1), ("lb", 2)}


def test_small_problem_matches_projected_gradient():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((8, 8))
    p = QProblem(a @ a.T + np.eye(8), rng.standard_normal(8), A_in=rng.standard_normal((4, 8)), b_in=rng.uniform(-0.5, 0.5, 4))
    r = QPSolver().solve(p)
    ref = projected_gradient_qp(p)
    assert abs(p.objective(r.u) - p.objective(ref)) <= 1e-6 * max(1.0, abs(p.objective(ref)))


@given(st.integers(0, 2**32 - 1))
def test_random_feasible_problems_satisfy_kkt(seed):
    p = random_feasible_qp(np.random.default_rng(seed))
    r = QPSolver().solve(p, warm_start=False)
    assert r.status == OPTIMAL
    assert max(kkt_residuals(p, r.u, r.lam_eq, r.lam_in).values()) < 1e-8


def test_infeasible_detected():
    p = QProblem(np.eye(2), np.zeros(2), A_in=[[1.0, 0.0], [-1.0, 0.0]], b_in=[-1.0, -1.0])
    r = QPSolver().solve(p)
    assert r.status == INFEASIBLE
    np.testing.assert_array_equal(r.u, 0.0)


def test_equality_and_inequality():
    # min |u|^2 s.t. u0 + u1 = 1, u0 <= 0.2
    p = QProblem(2 * np.eye(2), np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[1.0], A_in=[[1.0, 0.0]], b_in=[0.2])
    r = QPSolver().solve(p)
    np.testing.assert_allclose(r.u, [0.2, 0.8], atol=1e-12)
    assert r.lam_in[0] > 0


def test_warm_start_gives_same_answer_in_fewer_steps():
    rng = np.random.default_rng(3)
    p = random_feasible_qp(rng, n=10)
    cold = QPSolver().solve(p, warm_start=False)
    s = QPSolver()
    s.solve(p)
    warm = s.solve(p)
    np.testing.assert_allclose(warm.u, cold.u, atol=1e-9)
    assert warm.iterations <= cold.iterations


def test_semidefinite_hessian_is_regularised():
    h = np.diag([2.0, 0.0])
    p = QProblem(h, np.array([-2.0, 0.0]), A_in=[[0.0, 1.0]], b_in=[1.0])
    r = QPSolver().solve(p)
    assert r.status == OPTIMAL
    assert r.u[0] == pytest.approx(1.0, abs=1e-6)


def test_problem_validation():
    with pytest.raises(ValueError):
        QProblem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2))
    with pytest.raises(ValueError):
        QProblem(np.eye(2), np.zeros(2), A_in=np.eye(2), b_in=[1.0])
