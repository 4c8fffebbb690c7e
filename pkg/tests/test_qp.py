import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_miqp.miqp import MiqpProblem, max_violation
from hybrid_miqp.qp import QpStatus, QpSubproblem, kkt_residual, solve_qp


def _qp(Q, c, A=None, b=None, lb=None, ub=None):
    n = len(c)
    A = np.zeros((0, n)) if A is None else np.asarray(A, float)
    b = np.zeros(0) if b is None else np.asarray(b, float)
    return MiqpProblem(np.asarray(Q, float), c, A, b, np.zeros(n, bool), lb, ub)


def _random_qp(seed, n=5, m=3, rank=None):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((n, rank or n))
    y0 = rng.uniform(-1, 1, n)
    A = rng.standard_normal((m, n))
    b = A @ y0 + rng.uniform(0.0, 1.0, m)
    return _qp(R @ R.T, rng.standard_normal(n) * 3, A, b, lb=np.full(n, -4.0),
               ub=np.full(n, 4.0))


def test_active_lower_bound():
    # objective y^2 with y >= 1, written as the row -y <= -1
    res = solve_qp(QpSubproblem(_qp([[1.0]], [0.0], [[-1.0]], [-1.0])))
    assert res.status is QpStatus.OPTIMAL
    assert res.y[0] == pytest.approx(1.0, abs=1e-10)
    assert res.objective == pytest.approx(1.0, abs=1e-10)


def test_unconstrained_minimum():
    res = solve_qp(QpSubproblem(_qp(np.eye(2), [-2.0, 0.0])))
    assert res.status is QpStatus.OPTIMAL
    np.testing.assert_allclose(res.y, [1.0, 0.0], atol=1e-12)
    assert res.objective == pytest.approx(-1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_matches_conic_reference(seed, cvx_qp):
    p = _random_qp(seed)
    res = solve_qp(QpSubproblem(p))
    ref, _ = cvx_qp(p)()
    assert res.status is QpStatus.OPTIMAL
    assert res.objective == pytest.approx(ref, abs=1e-8)
    assert res.kkt_residual <= 1e-8
    assert max_violation(p, res.y) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_singular_hessian_matches_reference(seed, cvx_qp):
    p = _random_qp(100 + seed, n=6, m=4, rank=2)
    res = solve_qp(QpSubproblem(p))
    ref, _ = cvx_qp(p)()
    assert res.status is QpStatus.OPTIMAL
    assert res.objective == pytest.approx(ref, abs=1e-7)


def test_equality_pair_is_eliminated():
    # min |y|^2 with y1 + y2 = 1 given as two opposite rows
    p = _qp(np.eye(2), [0.0, 0.0], [[1.0, 1.0], [-1.0, -1.0]], [1.0, -1.0])
    res = solve_qp(QpSubproblem(p))
    np.testing.assert_allclose(res.y, [0.5, 0.5], atol=1e-12)
    # one representative per pair, nothing left for the active-set stage
    assert p.qp_structure.eq_rows.size == 1
    assert len(p.qp_structure.ineq_rows) == 0


def test_infeasible_rows():
    p = _qp(np.eye(1), [0.0], [[-1.0], [1.0]], [-1.0, 0.0])
    assert solve_qp(QpSubproblem(p)).status is QpStatus.INFEASIBLE


def test_crossed_bounds_are_infeasible_without_iterating():
    p = _qp(np.eye(2), [0.0, 0.0], lb=[0.0, 0.0], ub=[1.0, 1.0])
    res = solve_qp(QpSubproblem(p, extra_lb=np.array([0.8, 0.0]), extra_ub=np.array([0.5, 1.0])))
    assert res.status is QpStatus.INFEASIBLE
    assert res.inner_iterations == 0


def test_unbounded_linear_direction():
    p = _qp(np.zeros((2, 2)), [-1.0, 0.0], [[0.0, 1.0]], [1.0])
    assert solve_qp(QpSubproblem(p)).status is QpStatus.UNBOUNDED


def test_iteration_ceiling():
    p = _random_qp(7, n=8, m=6)
    res = solve_qp(QpSubproblem(p), max_inner_iters=1)
    assert res.status is QpStatus.ITER_LIMIT
    assert res.inner_iterations <= 1


def test_kkt_residual_reproducible():
    p = _random_qp(11)
    sub = QpSubproblem(p)
    res = solve_qp(sub)
    assert abs(kkt_residual(sub, res.y) - res.kkt_residual) <= 1e-12


def test_warm_start_reaches_same_optimum():
    p = _random_qp(5, n=7, m=5)
    base = solve_qp(QpSubproblem(p))
    ub = np.full(p.n, 4.0)
    ub[0] = np.floor(base.y[0] * 0.5)
    child = QpSubproblem(p, extra_ub=ub)
    cold = solve_qp(child)
    warm = solve_qp(child, warm=base.warm)
    assert warm.status is cold.status is QpStatus.OPTIMAL
    assert warm.objective == pytest.approx(cold.objective, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5))
def test_tightening_bounds_never_lowers_objective(seed, shrink):
    p = _random_qp(seed)
    loose = solve_qp(QpSubproblem(p))
    lb = -4.0 + 3.0 * np.asarray(shrink)
    tight = solve_qp(QpSubproblem(p, extra_lb=lb))
    if tight.status is QpStatus.OPTIMAL:
        assert tight.objective >= loose.objective - 1e-9
    else:
        assert tight.status is QpStatus.INFEASIBLE
