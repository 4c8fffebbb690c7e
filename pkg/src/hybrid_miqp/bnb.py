"""Budget-limited branch-and-bound for convex MIQPs.

One *solver iterate* is: pop the open node with the smallest bound (FIFO
among equal bounds), solve its QP relaxation, then fathom or branch on the
most fractional integer variable. The root relaxation is solved during
setup so that a certified bound exists even when no iterate is allowed; the
first iterate consumes that cached solution.

Exit criteria, checked between iterates only:

* gap ``incumbent - best_bound <= gap_tol * max(1, |incumbent|)`` (Optimal)
* ``iterate_limit``, ``soft_time_limit_s`` or ``node_memory_limit``
  (BudgetExhausted, incumbent kept)
* empty tree without a feasible leaf (Infeasible)
"""

from __future__ import annotations

import enum
import heapq
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, InfeasibleError, NoIncumbentWithinBudget, UnboundedError
from .miqp import FEAS_TOL, INT_TOL, MiqpProblem, MiqpSolution, check_feasibility
from .qp import KKT_TOL, QpStatus, QpSubproblem, QpWarm, solve_qp


class SolveStatus(enum.Enum):
    OPTIMAL = "Optimal"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass(frozen=True)
class SolverBudget:
    """Suboptimal solver parameters. ``None`` means unlimited.

    ``node_memory_limit`` caps the number of simultaneously open nodes, a
    deterministic stand-in for a memory limit. ``max_inner_iters`` bounds QP
    iterations inside each relaxation.
    """

    soft_time_limit_s: float | None = None
    iterate_limit: int | None = None
    node_memory_limit: int | None = None
    gap_tol: float = 1e-9
    max_inner_iters: int | None = None

    def __post_init__(self):
        if self.soft_time_limit_s is not None and not self.soft_time_limit_s > 0:
            raise ValueError("soft_time_limit_s must be positive")
        if self.iterate_limit is not None and (int(self.iterate_limit) != self.iterate_limit
                                               or self.iterate_limit < 0):
            raise ValueError("iterate_limit must be a nonnegative integer")
        if self.node_memory_limit is not None and not self.node_memory_limit > 0:
            raise ValueError("node_memory_limit must be positive")
        if not self.gap_tol > 0:
            raise ValueError("gap_tol must be positive")
        if self.max_inner_iters is not None and not self.max_inner_iters > 0:
            raise ValueError("max_inner_iters must be positive")

    @property
    def deterministic(self) -> bool:
        return self.soft_time_limit_s is None

    @property
    def tag(self) -> str:
        parts = []
        if self.iterate_limit is not None:
            parts.append(f"it{self.iterate_limit}")
        if self.soft_time_limit_s is not None:
            parts.append(f"t{round(self.soft_time_limit_s * 1000):d}ms")
        if self.node_memory_limit is not None:
            parts.append(f"mem{self.node_memory_limit}")
        return "_".join(parts) or "opt"


@dataclass(frozen=True)
class WarmStart:
    y0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y0", np.asarray(self.y0, dtype=float).reshape(-1))


@dataclass(frozen=True)
class TraceRow:
    iterate: int
    node_id: int
    bound: float
    incumbent: float
    live_nodes: int
    elapsed_s: float


@dataclass(frozen=True)
class SolverResult:
    status: SolveStatus
    incumbent: MiqpSolution | None
    best_bound: float
    eps_achieved: float
    iterates_used: int
    nodes_explored: int
    peak_live_nodes: int
    wall_time_s: float
    qp_iterations: int = 0
    memory_mb: float = 0.0
    warm_used: bool = False
    trace: tuple[TraceRow, ...] = field(default=(), repr=False)

    @property
    def objective(self) -> float:
        return self.incumbent.objective if self.incumbent is not None else math.inf

    def write_trace(self, path) -> None:
        lines = ["iterate,node_id,bound,incumbent,live_nodes,elapsed_s"]
        for t in self.trace:
            lines.append(f"{t.iterate},{t.node_id},{t.bound!r},{t.incumbent!r},"
                         f"{t.live_nodes},{t.elapsed_s:.6f}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class _Node:
    node_id: int
    depth: int
    lb: np.ndarray
    ub: np.ndarray
    bound: float
    warm: QpWarm | None = None
    solved: object = None


def _snap(p: MiqpProblem, y: np.ndarray) -> np.ndarray:
    y = y.copy()
    idx = p.int_indices
    y[idx] = np.clip(np.round(y[idx]), p.lb[idx], p.ub[idx])
    return y


def repair_warm_start(p: MiqpProblem, warm: WarmStart, feas_tol: float = FEAS_TOL,
                      int_tol: float = INT_TOL) -> MiqpSolution | None:
    """Round and fix the integer entries of ``warm.y0``, re-solve the rest.

    Returns a feasible solution or ``None`` when the fixed QP is infeasible.
    """
    y0 = warm.y0
    if y0.shape != (p.n,):
        raise DimensionError(f"warm start has length {y0.size}, expected {p.n}")
    fixed = _snap(p, y0)
    idx = p.int_indices
    lb, ub = p.lb.copy(), p.ub.copy()
    lb[idx] = fixed[idx]
    ub[idx] = fixed[idx]
    res = solve_qp(QpSubproblem(p, lb, ub), feas_tol=feas_tol, y0=fixed)
    if res.status is not QpStatus.OPTIMAL:
        return None
    y = res.y.copy()
    y[idx] = fixed[idx]
    sol = check_feasibility(p, y, feas_tol, int_tol)
    return sol if sol.feasible else None


def _node_bytes(p: MiqpProblem) -> int:
    d = p.qp_structure.dim
    return 16 * p.n + 8 * d + 8 * p.n + 256


def solve_bnb(p: MiqpProblem, budget: SolverBudget = SolverBudget(), warm: WarmStart | None = None,
              *, feas_tol: float = FEAS_TOL, int_tol: float = INT_TOL, kkt_tol: float = KKT_TOL,
              raise_on_starved: bool = True) -> SolverResult:
    """Branch-and-bound under ``budget``.

    The returned incumbent is feasible and within ``eps_achieved`` of the
    certified bound. If a budget stops the search before any feasible point
    is known, :class:`NoIncumbentWithinBudget` is raised with the partial
    result attached (or the result is returned when ``raise_on_starved`` is
    False).
    """
    start = time.perf_counter()
    int_idx = p.int_indices
    qp_iters = 0
    incumbent: MiqpSolution | None = None
    warm_used = False
    if warm is not None:
        incumbent = repair_warm_start(p, warm, feas_tol, int_tol)
        warm_used = incumbent is not None

    def qp(lb, ub, warm_qp=None):
        nonlocal qp_iters
        r = solve_qp(QpSubproblem(p, lb, ub), kkt_tol=kkt_tol,
                     max_inner_iters=budget.max_inner_iters, feas_tol=feas_tol, warm=warm_qp)
        qp_iters += r.inner_iterations
        return r

    def tol(obj):
        return budget.gap_tol * max(1.0, abs(obj))

    root_res = qp(p.lb, p.ub)
    trace: list[TraceRow] = []
    counters = {"iterates": 0, "nodes": 0, "peak": 1}

    def finish(status, open_nodes):
        if open_nodes:
            bound = min(b for b, _, _ in open_nodes)
        elif status is SolveStatus.INFEASIBLE:
            bound = math.inf
        else:
            bound = incumbent.objective if incumbent is not None else -math.inf
        if incumbent is not None:
            bound = min(bound, incumbent.objective)
            eps = incumbent.objective - bound
        else:
            eps = math.inf
        res = SolverResult(
            status=status,
            incumbent=incumbent,
            best_bound=bound,
            eps_achieved=eps,
            iterates_used=counters["iterates"],
            nodes_explored=counters["nodes"],
            peak_live_nodes=counters["peak"],
            wall_time_s=time.perf_counter() - start,
            qp_iterations=qp_iters,
            memory_mb=counters["peak"] * _node_bytes(p) / 2**20,
            warm_used=warm_used,
            trace=tuple(trace),
        )
        if status is SolveStatus.BUDGET_EXHAUSTED and incumbent is None and raise_on_starved:
            raise NoIncumbentWithinBudget("budget exhausted without a feasible point", res)
        return res

    if root_res.status is QpStatus.INFEASIBLE:
        return finish(SolveStatus.INFEASIBLE if incumbent is None else SolveStatus.OPTIMAL, [])
    if root_res.status is QpStatus.UNBOUNDED:
        return finish(SolveStatus.UNBOUNDED, [])
    root_bound = root_res.objective if root_res.status is QpStatus.OPTIMAL else -math.inf
    root = _Node(0, 0, p.lb.copy(), p.ub.copy(), root_bound, solved=root_res)
    seq = 0
    open_nodes: list = [(root.bound, seq, root)]
    next_id = 1

    while True:
        if incumbent is not None:
            best = open_nodes[0][0] if open_nodes else incumbent.objective
            if incumbent.objective - best <= tol(incumbent.objective):
                return finish(SolveStatus.OPTIMAL, open_nodes)
        if not open_nodes:
            return finish(SolveStatus.INFEASIBLE, [])
        if budget.iterate_limit is not None and counters["iterates"] >= budget.iterate_limit:
            return finish(SolveStatus.BUDGET_EXHAUSTED, open_nodes)
        if (budget.soft_time_limit_s is not None
                and time.perf_counter() - start >= budget.soft_time_limit_s):
            return finish(SolveStatus.BUDGET_EXHAUSTED, open_nodes)

        _, _, node = heapq.heappop(open_nodes)
        counters["iterates"] += 1
        res = node.solved if node.solved is not None else qp(node.lb, node.ub, node.warm)
        node.solved = None
        counters["nodes"] += 1

        children = []
        if res.status is QpStatus.INFEASIBLE:
            pass
        elif res.status is not QpStatus.OPTIMAL:
            free = [j for j in int_idx if node.lb[j] < node.ub[j]]
            if free:
                j = free[0]
                mid = math.floor(0.5 * (node.lb[j] + node.ub[j]))
                children = [(j, mid, node.bound, None)]
        elif incumbent is not None and res.objective >= incumbent.objective - tol(incumbent.objective):
            pass
        else:
            y = res.y
            frac = np.abs(y[int_idx] - np.round(y[int_idx])) if int_idx.size else np.zeros(0)
            if frac.size == 0 or np.max(frac) <= int_tol:
                cand = check_feasibility(p, _snap(p, y), feas_tol, int_tol)
                if not cand.feasible:
                    cand = check_feasibility(p, y, feas_tol, int_tol)
                if cand.feasible and (incumbent is None or cand.objective < incumbent.objective):
                    incumbent = cand
            else:
                # most fractional; argmax returns the smallest index on ties
                k = int(np.argmax(np.minimum(y[int_idx] - np.floor(y[int_idx]),
                                             np.ceil(y[int_idx]) - y[int_idx])))
                j = int(int_idx[k])
                children = [(j, math.floor(y[j]), max(node.bound, res.objective), res.warm)]

        for j, split, bound, wq in children:
            down_ub = node.ub.copy()
            down_ub[j] = split
            up_lb = node.lb.copy()
            up_lb[j] = split + 1
            for lb, ub in ((node.lb, down_ub), (up_lb, node.ub)):
                if np.any(lb > ub):
                    continue
                seq += 1
                child = _Node(next_id, node.depth + 1, lb, ub, bound, warm=wq)
                next_id += 1
                heapq.heappush(open_nodes, (bound, seq, child))

        inc_obj = incumbent.objective if incumbent is not None else math.inf
        if incumbent is not None:
            cutoff = inc_obj - tol(inc_obj)
            if any(e[0] >= cutoff for e in open_nodes):
                open_nodes = [e for e in open_nodes if e[0] < cutoff]
                heapq.heapify(open_nodes)
        counters["peak"] = max(counters["peak"], len(open_nodes))
        trace.append(TraceRow(
            iterate=counters["iterates"],
            node_id=node.node_id,
            bound=min(open_nodes[0][0], inc_obj) if open_nodes else inc_obj,
            incumbent=inc_obj,
            live_nodes=len(open_nodes),
            elapsed_s=time.perf_counter() - start,
        ))
        if budget.node_memory_limit is not None and len(open_nodes) > budget.node_memory_limit:
            return finish(SolveStatus.BUDGET_EXHAUSTED, open_nodes)


def certified_value(p: MiqpProblem, **kwargs) -> float:
    """Optimal value ``V`` from an unbudgeted solve."""
    res = solve_bnb(p, SolverBudget(), **kwargs)
    if res.status is SolveStatus.INFEASIBLE:
        raise InfeasibleError("problem is infeasible")
    if res.status is SolveStatus.UNBOUNDED:
        raise UnboundedError("problem is unbounded below")
    return res.incumbent.objective

