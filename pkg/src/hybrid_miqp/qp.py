"""Convex QP relaxations for branch-and-bound.

The solver is a primal active-set method. Row pairs of ``A`` that encode an
equality (``a'y <= b`` together with ``-a'y <= -b``) are detected once per
problem and eliminated through an orthonormal null-space basis, so every
relaxation of the same instance works in the reduced coordinates
``y = y_p + Z w``. Remaining rows and the (node-dependent) variable bounds
are handled by the active-set iteration. A phase-1 linear program restores
feasibility from an arbitrary start, which is what makes parent solutions
usable as warm starts for child nodes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import DimensionError, IndefiniteError
from .miqp import FEAS_TOL, MiqpProblem, eval_objective

KKT_TOL = 1e-8
_ROW_ZERO = 1e-13
_ACTIVE_TOL = 1e-7


class QpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITER_LIMIT = "IterLimit"
    UNBOUNDED = "Unbounded"


@dataclass(frozen=True)
class QpSubproblem:
    """A relaxation of ``base`` with branching bounds intersected in."""

    base: MiqpProblem
    extra_lb: np.ndarray | None = None
    extra_ub: np.ndarray | None = None

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lb, ub = self.base.lb, self.base.ub
        if self.extra_lb is not None:
            lb = np.maximum(lb, self.extra_lb)
        if self.extra_ub is not None:
            ub = np.minimum(ub, self.extra_ub)
        return lb, ub


@dataclass(frozen=True)
class QpWarm:
    """Reduced-space point and working set carried from a previous solve."""

    w: np.ndarray
    working: tuple[int, ...]


@dataclass(frozen=True)
class QpResult:
    status: QpStatus
    y: np.ndarray | None
    objective: float
    inner_iterations: int
    warm: QpWarm | None = field(default=None, repr=False)
    # float, or a zero-argument callable evaluated on first access
    _kkt: object = field(default=np.inf, repr=False, compare=False)

    @property
    def kkt_residual(self) -> float:
        if callable(self._kkt):
            object.__setattr__(self, "_kkt", float(self._kkt()))
        return self._kkt


class EqualityReduction:
    """Equality elimination shared by every relaxation of one problem."""

    def __init__(self, problem, eq_rows, ineq_rows, y_p, Z, consistent):
        self.problem = problem
        self.eq_rows = eq_rows
        self.ineq_rows = ineq_rows
        self.y_p = y_p
        self.Z = Z
        self.consistent = consistent
        Q, c = problem.Q, problem.c
        H = 2.0 * (Z.T @ Q @ Z)
        self.H = 0.5 * (H + H.T)
        self.g = Z.T @ (2.0 * (Q @ y_p) + c)
        A_in = problem.A[ineq_rows]
        self.G = A_in @ Z
        self.h = problem.b[ineq_rows] - A_in @ y_p
        self.n_general = len(ineq_rows)
        self.is_lp = not np.any(self.H)

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    @classmethod
    def from_problem(cls, p: MiqpProblem) -> "EqualityReduction":
        seen: dict[bytes, list[int]] = {}
        paired = np.zeros(p.m, dtype=bool)
        eq_rows = []
        for i in range(p.m):
            row = np.append(p.A[i], p.b[i]) + 0.0
            neg = (-row) + 0.0
            partners = seen.get(neg.tobytes())
            if partners:
                j = partners.pop(0)
                paired[i] = paired[j] = True
                eq_rows.append(j)
            else:
                seen.setdefault(row.tobytes(), []).append(i)
        eq_rows = np.array(sorted(eq_rows), dtype=int)
        ineq_rows = np.flatnonzero(~paired)
        n = p.n
        if eq_rows.size == 0:
            return cls(p, eq_rows, ineq_rows, np.zeros(n), np.eye(n), True)
        E, e = p.A[eq_rows], p.b[eq_rows]
        U, s, Vt = np.linalg.svd(E, full_matrices=True)
        rank = int(np.sum(s > 1e-11 * s[0])) if s.size else 0
        y_p = Vt[:rank].T @ ((U[:, :rank].T @ e) / s[:rank])
        resid = float(np.max(np.abs(E @ y_p - e))) if e.size else 0.0
        consistent = resid <= 1e-9 * max(1.0, float(np.max(np.abs(e))))
        Z = Vt[rank:].T.copy()
        return cls(p, eq_rows, ineq_rows, y_p, Z, consistent)

    def to_reduced(self, y) -> np.ndarray:
        return self.Z.T @ (np.asarray(y, dtype=float) - self.y_p)

    def to_full(self, w) -> np.ndarray:
        return self.y_p + self.Z @ w

    def node_rows(self, lb, ub):
        """Normalized inequality rows for a node.

        Returns ``(C, r, ids, ok)``; ``ids`` are stable global row ids
        (general rows, then lower bounds at ``mg + j``, then upper bounds at
        ``mg + n + j``) and ``ok`` is False if a constant row is violated.
        """
        n, mg = self.problem.n, self.n_general
        lo = np.flatnonzero(np.isfinite(lb))
        hi = np.flatnonzero(np.isfinite(ub))
        C = np.vstack([self.G, -self.Z[lo], self.Z[hi]])
        r = np.concatenate([self.h, self.y_p[lo] - lb[lo], ub[hi] - self.y_p[hi]])
        ids = np.concatenate([np.arange(mg), mg + lo, mg + n + hi])
        norms = np.linalg.norm(C, axis=1) if C.size else np.zeros(0)
        zero = norms < _ROW_ZERO
        ok = not np.any(r[zero] < -FEAS_TOL)
        keep = ~zero
        C = C[keep] / norms[keep, None]
        r = r[keep] / norms[keep]
        return C, r, ids[keep], ok


def _independent(rows: np.ndarray, candidates, tol=1e-9) -> list[int]:
    """Greedy subset of ``candidates`` whose rows are linearly independent."""
    if not len(candidates):
        return []
    d = rows.shape[1]
    if len(candidates) <= d:
        # unpivoted QR: |R_kk| is the part of row k outside the span of the
        # rows before it, which is exactly the greedy test
        R = scipy.linalg.qr(rows[list(candidates)].T, mode="r", check_finite=False)[0]
        keep = np.abs(np.diag(R)) > tol
        return [int(i) for i, k in zip(candidates, keep) if k]
    basis = np.zeros((min(len(candidates), d), d))
    k = 0
    chosen = []
    for i in candidates:
        v = rows[i].astype(float, copy=True)
        if k:
            B = basis[:k]
            v -= B.T @ (B @ v)
            v -= B.T @ (B @ v)
        nv = np.linalg.norm(v)
        if nv > tol and k < d:
            basis[k] = v / nv
            k += 1
            chosen.append(i)
    return chosen


class _Outcome(enum.Enum):
    OPTIMAL = 0
    UNBOUNDED = 1
    ITER_LIMIT = 2
    STOPPED = 3


class _WorkingQR:
    """QR factors of the working-set matrix ``C[W].T``, updated in place."""

    _REFRESH = 64

    def __init__(self, C, W):
        self.C = C
        self.d = C.shape[1]
        self.W = list(W)
        self._factor()

    def _factor(self):
        self.updates = 0
        if self.W:
            self.Q, self.R = scipy.linalg.qr(self.C[self.W].T, mode="full", check_finite=False)
        else:
            self.Q, self.R = np.eye(self.d), np.zeros((self.d, 0))

    @property
    def null(self):
        return self.Q[:, len(self.W):]

    def add(self, i):
        self.W.append(i)
        self.updates += 1
        if self.updates >= self._REFRESH or len(self.W) == 1:
            self._factor()
        else:
            self.Q, self.R = scipy.linalg.qr_insert(
                self.Q, self.R, self.C[i], len(self.W) - 1, which="col", check_finite=False)

    def remove(self, pos):
        self.W.pop(pos)
        self.updates += 1
        if self.updates >= self._REFRESH or not self.W:
            self._factor()
        else:
            self.Q, self.R = scipy.linalg.qr_delete(
                self.Q, self.R, pos, 1, which="col", check_finite=False)

    def multipliers(self, grad):
        k = len(self.W)
        return -scipy.linalg.solve_triangular(self.R[:k, :k], self.Q[:, :k].T @ grad,
                                              check_finite=False)


_BLAND_AFTER = 25


def _active_set(H, g, C, r, w, W, max_iter, kkt_tol, is_lp, stop_row=None):
    """Primal active-set iteration from a feasible ``w``.

    ``W`` lists local row indices currently held at equality. If
    ``stop_row`` is given the iteration ends as soon as that row is added.
    After a run of degenerate steps pivots fall back to smallest-index
    selection to rule out cycling.
    Returns ``(outcome, w, W, iterations, lam)``.
    """
    ws = _WorkingQR(C, W)
    it = 0
    at_min = False
    degenerate_run = 0
    lam = np.zeros(0)
    while True:
        if it >= max_iter:
            return _Outcome.ITER_LIMIT, w, ws.W, it, lam
        it += 1
        grad = g + H @ w if not is_lp else g
        scale = max(1.0, float(np.max(np.abs(grad)))) if grad.size else 1.0
        k = len(ws.W)
        Z = ws.null

        p = None
        if Z.shape[1] and not at_min:
            Zg = Z.T @ grad
            if np.max(np.abs(Zg)) > kkt_tol * scale:
                p = _eqp_direction(H, Z, Zg, is_lp, kkt_tol * scale)
        at_min = False

        if p is None:
            if k == 0:
                return _Outcome.OPTIMAL, w, ws.W, it, lam
            lam = ws.multipliers(grad)
            neg = np.flatnonzero(lam < -kkt_tol * scale)
            if neg.size == 0:
                return _Outcome.OPTIMAL, w, ws.W, it, lam
            if degenerate_run > _BLAND_AFTER:
                q = min(neg, key=lambda i: ws.W[i])
            else:
                q = min(neg, key=lambda i: (lam[i], ws.W[i]))
            ws.remove(int(q))
            continue

        direction, ray = p
        Cp = C @ direction
        pn = float(np.linalg.norm(direction))
        cand = Cp > 1e-11 * pn
        if ws.W:
            cand[ws.W] = False
        idx = np.flatnonzero(cand)
        alpha_max = np.inf if ray else 1.0
        block = -1
        if idx.size:
            slack = np.maximum(r[idx] - C[idx] @ w, 0.0)
            alphas = slack / Cp[idx]
            amin = float(np.min(alphas))
            if amin <= alpha_max:
                # idx is sorted, so the first tie is the smallest row index
                block = int(idx[np.flatnonzero(alphas <= amin * (1 + 1e-12) + 1e-300)[0]])
                alpha_max = amin
        if not np.isfinite(alpha_max):
            return _Outcome.UNBOUNDED, w, ws.W, it, lam
        degenerate_run = degenerate_run + 1 if alpha_max * pn <= 1e-14 else 0
        w = w + alpha_max * direction
        if block >= 0:
            ws.add(block)
            if stop_row is not None and block == stop_row:
                return _Outcome.STOPPED, w, ws.W, it, lam
        else:
            at_min = True


def _eqp_direction(H, Z, Zg, is_lp, gtol):
    """Step of the equality-constrained subproblem in the null space ``Z``.

    Returns ``(direction, is_ray)``. Zero-curvature descent directions give a
    ray that is followed until a constraint blocks.
    """
    if is_lp:
        return -(Z @ Zg), True
    Hr = Z.T @ H @ Z
    lam, U = np.linalg.eigh(0.5 * (Hr + Hr.T))
    top = max(1.0, float(np.max(np.abs(lam)))) if lam.size else 1.0
    if lam.size and lam[0] < -1e-8 * top:
        raise IndefiniteError(f"reduced Hessian has eigenvalue {lam[0]:.3e}")
    pos = lam > 1e-10 * top
    comp = -(U.T @ Zg)
    null = comp[~pos]
    if null.size and np.max(np.abs(null)) > gtol:
        return Z @ (U[:, ~pos] @ null), True
    return Z @ (U[:, pos] @ (comp[pos] / lam[pos])), False


def _phase1(C, r, w0, warm_rows, max_iter, feas_tol):
    """Find a feasible reduced point by minimizing the worst violation.

    Returns ``(w, W, iterations, status)`` with status one of OPTIMAL
    (feasible point found), INFEASIBLE or ITER_LIMIT.
    """
    m, d = C.shape
    viol = C @ w0 - r
    t0 = float(np.max(viol)) if m else 0.0
    if t0 <= 1e-12:
        active = [i for i in warm_rows if abs(viol[i]) <= 1e-10]
        return w0, _independent(C, active), 0, QpStatus.OPTIMAL
    violated = viol > 1e-12
    Ca = np.zeros((m + 1, d + 1))
    Ca[:m, :d] = C
    Ca[:m, d] = -violated.astype(float)
    Ca[m, d] = -1.0
    ra = np.append(r, 0.0)
    wa = np.append(w0, t0)
    ga = np.zeros(d + 1)
    ga[d] = 1.0
    slack = ra - Ca @ wa
    tight = [int(i) for i in np.flatnonzero(violated & (np.abs(slack[:m]) <= 1e-10 * max(1.0, t0)))]
    start = tight + [i for i in warm_rows if not violated[i] and abs(slack[i]) <= 1e-10]
    W0 = _independent(Ca, start)
    outcome, wa, W, it, _ = _active_set(
        np.zeros((d + 1, d + 1)), ga, Ca, ra, wa, W0, max_iter, 1e-12, True, stop_row=m)
    t = wa[d]
    w = wa[:d]
    if outcome is _Outcome.STOPPED or t <= feas_tol:
        status = QpStatus.OPTIMAL
    elif outcome is _Outcome.ITER_LIMIT:
        status = QpStatus.ITER_LIMIT
    else:
        status = QpStatus.INFEASIBLE
    rows = [i for i in W if i < m]
    return w, _independent(C, rows), it, status


def _reduced_kkt(red: EqualityReduction, C, r, w, grad_w):
    slack = r - C @ w
    act = np.flatnonzero(slack <= _ACTIVE_TOL)
    scale = max(1.0, float(np.max(np.abs(grad_w)))) if grad_w.size else 1.0
    if act.size:
        lam, _ = scipy.optimize.nnls(C[act].T, -grad_w, maxiter=50 * max(1, act.size))
        res = C[act].T @ lam + grad_w
        comp = float(np.max(lam * np.abs(slack[act]))) if lam.size else 0.0
    else:
        res = grad_w
        comp = 0.0
    stat = float(np.max(np.abs(res))) if res.size else 0.0
    return max(stat, comp) / scale


def kkt_residual(sub: QpSubproblem, y) -> float:
    """Scaled KKT residual of ``y`` for the relaxation ``sub``.

    Stationarity is measured in the equality null space with nonnegative
    multipliers fitted on the near-active rows; the result is divided by
    ``max(1, |reduced gradient|_inf)``. Depends on ``y`` alone.
    """
    p = sub.base
    y = np.asarray(y, dtype=float)
    if y.shape != (p.n,):
        raise DimensionError(f"y has length {y.size}, expected {p.n}")
    red = p.qp_structure
    lb, ub = sub.bounds()
    C, r, _, _ = red.node_rows(lb, ub)
    w = red.to_reduced(y)
    grad_w = red.Z.T @ (2.0 * (p.Q @ y) + p.c)
    return _reduced_kkt(red, C, r, w, grad_w)


def solve_qp(sub: QpSubproblem, kkt_tol: float = KKT_TOL, max_inner_iters: int | None = None,
             feas_tol: float = FEAS_TOL, warm: QpWarm | None = None, y0=None) -> QpResult:
    """Solve the convex relaxation ``sub``.

    ``warm`` (the ``warm`` field of a previous result on the same base
    problem) seeds the start point and working set. Otherwise the start is
    ``y0`` (default zero) clipped to the bounds.
    """
    p = sub.base
    red = p.qp_structure
    n = p.n
    if max_inner_iters is None:
        max_inner_iters = 200 * max(n, 1)
    lb, ub = sub.bounds()

    def _infeasible(it=0):
        return QpResult(QpStatus.INFEASIBLE, None, np.inf, it)

    if not red.consistent or np.any(lb > ub + feas_tol):
        return _infeasible()
    C, r, ids, ok = red.node_rows(lb, ub)
    if not ok:
        return _infeasible()
    local = {int(g): i for i, g in enumerate(ids)}

    if warm is not None:
        w0 = np.array(warm.w, dtype=float)
        warm_rows = [local[g] for g in warm.working if g in local]
    else:
        start = np.zeros(n) if y0 is None else np.asarray(y0, dtype=float)
        start = np.clip(start, np.minimum(lb, ub), ub)
        w0 = red.to_reduced(start)
        warm_rows = []

    w, W, it1, p1 = _phase1(C, r, w0, warm_rows, max_inner_iters, feas_tol)
    if p1 is QpStatus.INFEASIBLE:
        return _infeasible(it1)
    if p1 is QpStatus.ITER_LIMIT:
        return QpResult(QpStatus.ITER_LIMIT, None, np.inf, it1)
    outcome, w, W, it2, _ = _active_set(
        red.H, red.g, C, r, w, W, max_inner_iters - it1, kkt_tol, red.is_lp)
    iters = it1 + it2
    if outcome is _Outcome.UNBOUNDED:
        return QpResult(QpStatus.UNBOUNDED, None, -np.inf, iters)
    y = red.to_full(w)
    status = QpStatus.OPTIMAL if outcome is _Outcome.OPTIMAL else QpStatus.ITER_LIMIT

    def kkt():
        grad_w = red.Z.T @ (2.0 * (p.Q @ y) + p.c)
        return _reduced_kkt(red, C, r, red.to_reduced(y), grad_w)

    return QpResult(
        status=status,
        y=y,
        objective=eval_objective(p, y),
        inner_iterations=iters,
        warm=QpWarm(w=w, working=tuple(int(ids[i]) for i in W)),
        _kkt=kkt,
    )
