import math

import cvxpy as cp
import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


class CvxQp:
    """Independent reference for the QP pieces: a conic solver through cvxpy.

    Built once per problem with the bounds as parameters so enumeration over
    integer assignments reuses the compiled problem.
    """

    def __init__(self, p):
        self.p = p
        w, V = np.linalg.eigh(p.Q)
        F = (V * np.sqrt(np.clip(w, 0.0, None))).T
        self.y = cp.Variable(p.n)
        self.lb = cp.Parameter(p.n)
        self.ub = cp.Parameter(p.n)
        lo = np.where(np.isfinite(p.lb), p.lb, -1e6)
        hi = np.where(np.isfinite(p.ub), p.ub, 1e6)
        self._free_lo, self._free_hi = lo, hi
        cons = [self.y >= self.lb, self.y <= self.ub]
        if p.m:
            cons.append(p.A @ self.y <= p.b)
        self.prob = cp.Problem(cp.Minimize(cp.sum_squares(F @ self.y) + p.c @ self.y), cons)

    def __call__(self, _p=None, lb=None, ub=None):
        lb = self.p.lb if lb is None else lb
        ub = self.p.ub if ub is None else ub
        self.lb.value = np.where(np.isfinite(lb), lb, self._free_lo)
        self.ub.value = np.where(np.isfinite(ub), ub, self._free_hi)
        try:
            self.prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-11, tol_gap_rel=1e-11,
                            tol_feas=1e-11)
        except cp.error.SolverError:
            self.prob.solve(solver=cp.CLARABEL)
        if self.prob.status not in ("optimal", "optimal_inaccurate"):
            return math.inf, None
        y = np.asarray(self.y.value)
        return float(y @ self.p.Q @ y + self.p.c @ y), y


@pytest.fixture
def cvx_qp():
    return CvxQp
