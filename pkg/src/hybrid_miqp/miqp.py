"""Dense parametric MIQP instances.

A problem is ``minimize y'Qy + c'y  s.t.  Ay <= b,  lb <= y <= ub`` with a
boolean mask marking integer entries of ``y``. There is no 1/2 factor on
the quadratic term.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DimensionError, IndefiniteError, UnboundedIntegerError

FEAS_TOL = 1e-6
INT_TOL = 1e-6


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MiqpProblem:
    """One instance of the parametric MIQP.

    ``Q`` must be symmetric positive semidefinite and every masked
    variable must have finite bounds so branch-and-bound terminates.
    """

    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    int_mask: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    name: str = field(default="")

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise DimensionError(f"Q must be square, got {Q.shape}")
        c = np.asarray(self.c, dtype=float).reshape(-1)
        if c.shape != (n,):
            raise DimensionError(f"c has length {c.size}, expected {n}")
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        if A.ndim != 2 or A.shape[1] != n:
            raise DimensionError(f"A has shape {A.shape}, expected (m, {n})")
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if b.shape != (A.shape[0],):
            raise DimensionError(f"b has length {b.size}, expected {A.shape[0]}")
        mask = np.asarray(self.int_mask, dtype=bool).reshape(-1)
        if mask.shape != (n,):
            raise DimensionError(f"int_mask has length {mask.size}, expected {n}")
        lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        if lb.shape != (n,) or ub.shape != (n,):
            raise DimensionError("lb/ub must have length n")

        scale = max(1.0, float(np.max(np.abs(Q)))) if n else 1.0
        if n and np.max(np.abs(Q - Q.T)) > 1e-12 * scale:
            raise DimensionError("Q is not symmetric")
        Q = 0.5 * (Q + Q.T)
        if n:
            lam_min = float(np.linalg.eigvalsh(Q)[0])
            if lam_min < -1e-9 * float(np.linalg.norm(Q, 2)):
                raise IndefiniteError(f"Q has minimum eigenvalue {lam_min:.3e}")
        if np.any(mask & ~(np.isfinite(lb) & np.isfinite(ub))):
            raise UnboundedIntegerError("integer variables need finite lb and ub")

        set_ = object.__setattr__
        set_(self, "Q", _frozen(Q))
        set_(self, "c", _frozen(c))
        set_(self, "A", _frozen(A))
        set_(self, "b", _frozen(b))
        set_(self, "int_mask", _frozen(mask, bool))
        set_(self, "lb", _frozen(lb))
        set_(self, "ub", _frozen(ub))

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def int_indices(self) -> np.ndarray:
        return np.flatnonzero(self.int_mask)

    @cached_property
    def qp_structure(self):
        # Equality pairs and null-space basis, shared by every relaxation of
        # this instance. Built lazily by the relaxation solver.
        from .qp import EqualityReduction

        return EqualityReduction.from_problem(self)

    def with_bounds(self, lb, ub) -> "MiqpProblem":
        return MiqpProblem(self.Q, self.c, self.A, self.b, self.int_mask, lb, ub, self.name)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        def _bnd(v):
            return [None if not np.isfinite(x) else float(x) for x in v]

        return {
            "n": self.n,
            "m": self.m,
            "Q": self.Q.tolist(),
            "c": self.c.tolist(),
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "int_mask": self.int_mask.tolist(),
            "lb": _bnd(self.lb),
            "ub": _bnd(self.ub),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MiqpProblem":
        n, m = int(d["n"]), int(d["m"])
        lb = [-np.inf if x is None else x for x in d.get("lb", [None] * n)]
        ub = [np.inf if x is None else x for x in d.get("ub", [None] * n)]
        A = np.asarray(d["A"], dtype=float).reshape(m, n)
        p = cls(np.asarray(d["Q"], dtype=float).reshape(n, n), d["c"], A, d["b"],
                d.get("int_mask", [False] * n), lb, ub)
        return p

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MiqpProblem":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class MiqpSolution:
    y: np.ndarray
    objective: float
    feasible: bool
    max_violation: float
    integrality_residual: float


def _check_len(p: MiqpProblem, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape != (p.n,):
        raise DimensionError(f"y has length {y.size}, expected {p.n}")
    return y


def eval_objective(p: MiqpProblem, y) -> float:
    """Return ``y'Qy + c'y``."""
    y = _check_len(p, y)
    return float(y @ p.Q @ y + p.c @ y)


def max_violation(p: MiqpProblem, y) -> float:
    """Infinity-norm violation of ``Ay <= b`` and the variable bounds."""
    y = _check_len(p, y)
    viol = 0.0
    if p.m:
        viol = max(viol, float(np.max(p.A @ y - p.b)))
    if p.n:
        viol = max(viol, float(np.max(p.lb - y)), float(np.max(y - p.ub)))
    return max(0.0, viol)


def integrality_residual(p: MiqpProblem, y) -> float:
    y = _check_len(p, y)
    idx = p.int_indices
    if idx.size == 0:
        return 0.0
    return float(np.max(np.abs(y[idx] - np.round(y[idx]))))


def check_feasibility(p: MiqpProblem, y, feas_tol: float = FEAS_TOL,
                      int_tol: float = INT_TOL) -> MiqpSolution:
    if feas_tol <= 0 or int_tol <= 0:
        raise ValueError("tolerances must be positive")
    y = _check_len(p, y)
    viol = max_violation(p, y)
    ires = integrality_residual(p, y)
    return MiqpSolution(
        y=y.copy(),
        objective=eval_objective(p, y),
        feasible=bool(viol <= feas_tol and ires <= int_tol),
        max_violation=viol,
        integrality_residual=ires,
    )
