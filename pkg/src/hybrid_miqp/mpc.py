"""Rendezvous MPC with an l1 thrust annulus, assembled as a dense MIQP.

Decision vector layout (all blocks stage-major)::

    zeta  N x 6      predicted states, zeta_1 pinned to the measured state
    v     (N-1) x 3  thrust
    v+    (N-1) x 3  positive part of v
    v-    (N-1) x 3  negative part of v
    z     (N-1) x 3  binaries selecting the sign of each thrust component

``v_min <= |v_k|_1 <= v_max`` is encoded with ``v = v+ - v-``,
``v+ <= v_max z``, ``v- <= v_max (1 - z)`` and two rows bounding
``sum(v+) + sum(v-)``. Equalities are emitted as pairs of opposite rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bnb import WarmStart
from .cw import CwParams, discretize
from .miqp import MiqpProblem

STATE_DIM = 6
CTRL_DIM = 3


def _default_q_state():
    return np.diag([1e-2, 1e-2, 1e-2, 1.0, 1.0, 1.0])


def _default_q_ctrl():
    return np.diag([1.0, 1.0, 1.0])


def _default_box():
    return np.array([0.1, 0.1, 0.1, 0.01, 0.01, 0.01])


@dataclass(frozen=True)
class MpcConfig:
    N: int = 15
    cw: CwParams = field(default_factory=CwParams)
    Q_state: np.ndarray = field(default_factory=_default_q_state)
    Q_ctrl: np.ndarray = field(default_factory=_default_q_ctrl)
    v_min: float = 0.0
    v_max: float = 0.05
    terminal_box: np.ndarray = field(default_factory=_default_box)
    c_seed: int = 0
    c_scale: float = 1e-3

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError("N must be an integer >= 2")
        if not 0 <= self.v_min <= self.v_max:
            raise ValueError("need 0 <= v_min <= v_max")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        if self.c_scale < 0:
            raise ValueError("c_scale must be nonnegative")
        qs = np.asarray(self.Q_state, dtype=float)
        qc = np.asarray(self.Q_ctrl, dtype=float)
        box = np.asarray(self.terminal_box, dtype=float).reshape(-1)
        if qs.shape != (6, 6) or qc.shape != (3, 3):
            raise ValueError("Q_state must be 6x6 and Q_ctrl 3x3")
        for name, q in (("Q_state", qs), ("Q_ctrl", qc)):
            if not np.allclose(q, q.T) or np.linalg.eigvalsh(0.5 * (q + q.T))[0] < -1e-12:
                raise ValueError(f"{name} must be symmetric PSD")
        if box.shape != (6,) or np.any(box <= 0):
            raise ValueError("terminal_box needs 6 positive half-widths")
        object.__setattr__(self, "Q_state", qs)
        object.__setattr__(self, "Q_ctrl", qc)
        object.__setattr__(self, "terminal_box", box)

    @property
    def terminal_scale(self) -> float:
        """Largest Euclidean norm of a state inside the terminal box."""
        return float(np.linalg.norm(self.terminal_box))


@dataclass(frozen=True)
class MpcDecisionLayout:
    N: int
    zeta: np.ndarray
    v: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray
    z: np.ndarray

    @classmethod
    def for_horizon(cls, N: int) -> "MpcDecisionLayout":
        S = N - 1
        off = 0

        def block(rows, cols):
            nonlocal off
            idx = np.arange(off, off + rows * cols).reshape(rows, cols)
            off += rows * cols
            return idx

        zeta = block(N, STATE_DIM)
        v = block(S, CTRL_DIM)
        vp = block(S, CTRL_DIM)
        vm = block(S, CTRL_DIM)
        z = block(S, CTRL_DIM)
        return cls(N, zeta, v, vp, vm, z)

    @property
    def n(self) -> int:
        return int(self.z[-1, -1]) + 1

    @property
    def control(self) -> np.ndarray:
        return self.v[0]


@dataclass(frozen=True)
class L1Rows:
    """Rows over local variables ordered ``[v, v+, v-, z]`` (stage-major)."""

    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    int_mask: np.ndarray
    families: dict

    def problem(self) -> MiqpProblem:
        n = self.A.shape[1]
        return MiqpProblem(np.zeros((n, n)), np.zeros(n), self.A, self.b, self.int_mask,
                           self.lb, self.ub)


def reformulate_l1(v_min: float, v_max: float, stages: int, dims: int = CTRL_DIM) -> L1Rows:
    """Binary reformulation of ``v_min <= |v_k|_1 <= v_max`` for each stage.

    Nonnegativity of ``v+`` and ``v-`` is carried as variable lower bounds;
    the other five families are rows.
    """
    if not 0 <= v_min <= v_max:
        raise ValueError("need 0 <= v_min <= v_max")
    k = stages * dims
    n = 4 * k
    V, P, M, Zb = (np.arange(k) + i * k for i in range(4))
    rows, rhs, fam = [], [], {}

    def add(name, r, b):
        start = len(rows)
        rows.extend(r)
        rhs.extend(b)
        fam.setdefault(name, []).extend(range(start, len(rows)))

    split = np.zeros((k, n))
    split[np.arange(k), V] = 1.0
    split[np.arange(k), P] = -1.0
    split[np.arange(k), M] = 1.0
    add("split", split, np.zeros(k))
    add("split", -split, np.zeros(k))

    neg = np.zeros((k, n))
    neg[np.arange(k), M] = 1.0
    neg[np.arange(k), Zb] = v_max
    add("minus_le_vmax_1_minus_z", neg, np.full(k, v_max))

    pos = np.zeros((k, n))
    pos[np.arange(k), P] = 1.0
    pos[np.arange(k), Zb] = -v_max
    add("plus_le_vmax_z", pos, np.zeros(k))

    total = np.zeros((stages, n))
    for s in range(stages):
        total[s, P[s * dims:(s + 1) * dims]] = 1.0
        total[s, M[s * dims:(s + 1) * dims]] = 1.0
    add("norm_le_vmax", total, np.full(stages, v_max))
    add("norm_ge_vmin", -total, np.full(stages, -v_min))

    lb = np.concatenate([np.full(k, -np.inf), np.zeros(k), np.zeros(k), np.zeros(k)])
    ub = np.concatenate([np.full(k, np.inf), np.full(k, np.inf), np.full(k, np.inf), np.ones(k)])
    mask = np.zeros(n, dtype=bool)
    mask[Zb] = True
    fam["nonnegativity"] = "lb"
    return L1Rows(np.array(rows), np.array(rhs), lb, ub, mask,
                  {key: (val if isinstance(val, str) else np.array(val)) for key, val in fam.items()})


def cost_vector(cfg: MpcConfig, k: int, n: int) -> np.ndarray:
    """Time-varying linear cost for sample ``k``.

    Drawn from a Philox stream keyed by ``cfg.c_seed`` with the counter
    offset by ``k`` so any sample can be regenerated in isolation.
    """
    if cfg.c_scale == 0:
        return np.zeros(n)
    bitgen = np.random.Philox(key=int(cfg.c_seed), counter=[0, 0, 0, int(k)])
    return cfg.c_scale * np.random.Generator(bitgen).standard_normal(n)


_cache: dict = {}


def _static_part(cfg: MpcConfig):
    # Everything except the initial-state right-hand side and c(k).
    key = (cfg.N, cfg.cw, cfg.Q_state.tobytes(), cfg.Q_ctrl.tobytes(), cfg.v_min, cfg.v_max,
           cfg.terminal_box.tobytes())
    hit = _cache.get(key)
    if hit is not None:
        return hit
    N = cfg.N
    lay = MpcDecisionLayout.for_horizon(N)
    n = lay.n
    lti = discretize(cfg.cw)
    blocks_A, blocks_b = [], []

    def pair(rows, rhs):
        blocks_A.extend([rows, -rows])
        blocks_b.extend([rhs, -rhs])

    init = np.zeros((STATE_DIM, n))
    init[np.arange(STATE_DIM), lay.zeta[0]] = 1.0
    pair(init, np.zeros(STATE_DIM))

    dyn = np.zeros(((N - 1) * STATE_DIM, n))
    for s in range(N - 1):
        r = slice(s * STATE_DIM, (s + 1) * STATE_DIM)
        dyn[r, lay.zeta[s + 1]] = np.eye(STATE_DIM)
        dyn[r, lay.zeta[s]] = -lti.A
        dyn[r, lay.v[s]] = -lti.B
    pair(dyn, np.zeros(dyn.shape[0]))

    l1 = reformulate_l1(cfg.v_min, cfg.v_max, N - 1, CTRL_DIM)
    cols = np.concatenate([lay.v.ravel(), lay.v_plus.ravel(), lay.v_minus.ravel(), lay.z.ravel()])
    l1_rows = np.zeros((l1.A.shape[0], n))
    l1_rows[:, cols] = l1.A
    blocks_A.append(l1_rows)
    blocks_b.append(l1.b)

    term = np.zeros((2 * STATE_DIM, n))
    term[np.arange(STATE_DIM), lay.zeta[-1]] = 1.0
    term[STATE_DIM + np.arange(STATE_DIM), lay.zeta[-1]] = -1.0
    blocks_A.append(term)
    blocks_b.append(np.concatenate([cfg.terminal_box, cfg.terminal_box]))

    A = np.vstack(blocks_A)
    b = np.concatenate(blocks_b)
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[cols] = l1.lb
    ub[cols] = l1.ub
    mask = np.zeros(n, dtype=bool)
    mask[cols] = l1.int_mask

    Q = np.zeros((n, n))
    for s in range(N):
        Q[np.ix_(lay.zeta[s], lay.zeta[s])] = cfg.Q_state
    for s in range(N - 1):
        Q[np.ix_(lay.v[s], lay.v[s])] = cfg.Q_ctrl
    out = (lay, lti, Q, A, b, lb, ub, mask)
    _cache[key] = out
    return out


def build_mpc(cfg: MpcConfig, x_now, k: int) -> tuple[MiqpProblem, MpcDecisionLayout]:
    """MIQP for sample ``k`` with the first predicted state pinned to ``x_now``."""
    x_now = np.asarray(x_now, dtype=float).reshape(-1)
    if x_now.shape != (STATE_DIM,):
        raise ValueError("x_now must have 6 entries")
    lay, _, Q, A, b, lb, ub, mask = _static_part(cfg)
    b = b.copy()
    # The initial-state pair occupies the first 12 rows.
    b[:STATE_DIM] = x_now
    b[STATE_DIM:2 * STATE_DIM] = -x_now
    c = cost_vector(cfg, k, lay.n)
    return MiqpProblem(Q, c, A, b, mask, lb, ub, name=f"mpc_k{k}"), lay


def shift_warm_start(prev_y, layout: MpcDecisionLayout, cfg: MpcConfig) -> WarmStart:
    """Shift a previous plan forward one stage.

    Control-like blocks repeat their last stage; the last predicted state is
    propagated through the discrete dynamics with that repeated thrust.
    """
    prev = np.asarray(prev_y, dtype=float)
    if prev.shape != (layout.n,):
        raise ValueError("prev_y does not match the layout")
    y = np.empty_like(prev)
    for blk in (layout.v, layout.v_plus, layout.v_minus, layout.z):
        y[blk[:-1].ravel()] = prev[blk[1:].ravel()]
        y[blk[-1]] = prev[blk[-1]]
    zeta = layout.zeta
    y[zeta[:-1].ravel()] = prev[zeta[1:].ravel()]
    lti = discretize(cfg.cw)
    y[zeta[-1]] = lti.A @ prev[zeta[-1]] + lti.B @ prev[layout.v[-1]]
    return WarmStart(y)


def extract_control(y, layout: MpcDecisionLayout) -> np.ndarray:
    return np.asarray(y, dtype=float)[layout.control].copy()
