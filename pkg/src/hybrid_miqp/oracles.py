"""Random instances and brute-force references for cross-checking the solver."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .miqp import MiqpProblem
from .qp import QpStatus, QpSubproblem, solve_qp


def random_miqp(rng: np.random.Generator, n_bin: int, n_cont: int, m: int | None = None,
                rank: int | None = None, with_equality: bool = False,
                return_point: bool = False):
    """Feasible, bounded MIQP with ``n_bin`` binaries first.

    A random integral point is made feasible by construction (returned as
    well when ``return_point``); continuous variables get finite boxes so a
    singular ``Q`` cannot be unbounded.
    """
    n = n_bin + n_cont
    if m is None:
        m = int(rng.integers(1, n + 2))
    r = n if rank is None else rank
    R = rng.standard_normal((n, r))
    Q = R @ R.T / max(r, 1)
    c = 2.0 * rng.standard_normal(n)
    y_star = np.concatenate([rng.integers(0, 2, n_bin).astype(float),
                             rng.uniform(-2.0, 2.0, n_cont)])
    A = rng.standard_normal((m, n))
    b = A @ y_star + rng.uniform(0.0, 1.5, m)
    if with_equality and n_cont:
        a = np.zeros(n)
        a[n_bin:] = rng.standard_normal(n_cont)
        a[:n_bin] = rng.integers(-1, 2, n_bin)
        rhs = float(a @ y_star)
        A = np.vstack([A, a, -a])
        b = np.concatenate([b, [rhs, -rhs]])
    lb = np.concatenate([np.zeros(n_bin), np.full(n_cont, -5.0)])
    ub = np.concatenate([np.ones(n_bin), np.full(n_cont, 5.0)])
    mask = np.zeros(n, dtype=bool)
    mask[:n_bin] = True
    p = MiqpProblem(Q, c, A, b, mask, lb, ub, name="random")
    return (p, y_star) if return_point else p


def enumerate_optimum(p: MiqpProblem, qp=None) -> tuple[float, np.ndarray | None]:
    """Minimum over every integer assignment of the fixed continuous QP.

    ``qp(problem, lb, ub)`` returns ``(objective, y)`` or ``(inf, None)``;
    it defaults to the package relaxation solver.
    """
    idx = p.int_indices
    ranges = [range(int(math.ceil(p.lb[j])), int(math.floor(p.ub[j])) + 1) for j in idx]
    best, arg = math.inf, None
    for combo in itertools.product(*ranges):
        lb, ub = p.lb.copy(), p.ub.copy()
        lb[idx] = combo
        ub[idx] = combo
        if qp is None:
            res = solve_qp(QpSubproblem(p, lb, ub))
            obj, y = (res.objective, res.y) if res.status is QpStatus.OPTIMAL else (math.inf, None)
        else:
            obj, y = qp(p, lb, ub)
        if obj < best:
            best, arg = obj, y
    return best, arg
