"""Closed-loop MIQP feedback as a hybrid system.

The hybrid state is ``(y, x, tau)``: the solver's decision vector, the plant
state and a sample timer. When ``tau`` reaches ``dt`` the controller jumps
(re-solves the MPC under a budget and resets ``tau``); otherwise the plant
flows with the first planned thrust held. Each jump and each flow appends
one record, so a run of ``K`` samples has ``2K`` records indexed by hybrid
time ``(t, j)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bnb import SolverBudget, SolveStatus, certified_value, solve_bnb
from .cw import flow_exact, propagate
from .errors import ControllerStarved, HybridContractError, NoIncumbentWithinBudget
from .mpc import MpcConfig, build_mpc, extract_control, shift_warm_start

JUMP = "jump"
FLOW = "flow"
LYAP_TOL = 1e-6

CSV_HEADER = ("t,j,tau,x1,x2,x3,x4,x5,x6,u1,u2,u3,"
              "f_sub,V,gap,eps,L,iterates,nodes,wall_s")


@dataclass(frozen=True)
class HybridState:
    """``y`` is ``None`` until the first jump has produced a plan."""

    y: np.ndarray | None
    x: np.ndarray
    tau: float


@dataclass(frozen=True)
class TrajectoryRecord:
    kind: str
    t: float
    j: int
    tau: float
    x: np.ndarray
    u: np.ndarray
    f_sub: float | None = None
    V: float | None = None
    gap: float | None = None
    eps: float | None = None
    L: float | None = None
    iterates: int | None = None
    nodes: int | None = None
    wall_s: float | None = None
    status: str = ""
    warm_used: bool | None = None


@dataclass
class HybridTrajectory:
    dt: float
    flow_interval: float
    terminal_scale: float
    records: list[TrajectoryRecord] = field(default_factory=list)
    starved_samples: list[int] = field(default_factory=list)

    @property
    def jumps(self) -> list[TrajectoryRecord]:
        return [r for r in self.records if r.kind == JUMP]

    @property
    def flows(self) -> list[TrajectoryRecord]:
        return [r for r in self.records if r.kind == FLOW]

    def write_csv(self, path, include_wall_time: bool = False) -> None:
        write_trajectory_csv(self, path, include_wall_time)


@dataclass(frozen=True)
class StabilityReport:
    sigma_hat: float
    converged: bool
    lyap_jump_violations: int
    divergence_flag: bool
    threshold: float
    divergence_ceiling: float
    beta_hat: float
    lambda_hat: float
    envelope_ok: bool
    mean_gap: float


def lyapunov(f_sub: float, V: float, x) -> float:
    """``(f_sub - V) + 0.5 |x|^2``."""
    x = np.asarray(x, dtype=float)
    if f_sub < V - 1e-6:
        raise ValueError("f_sub lies below the value function")
    return float(f_sub - V) + 0.5 * float(x @ x)


@dataclass(frozen=True)
class JumpOptions:
    oracle: bool = False
    warm_start: bool = True
    starved_policy: str = "hold"

    def __post_init__(self):
        if self.starved_policy not in ("hold", "abort"):
            raise ValueError("starved_policy must be 'hold' or 'abort'")


def jump(state: HybridState, cfg: MpcConfig, budget: SolverBudget, k: int,
         oracle: bool = False, *, t: float = 0.0, j: int = 0,
         options: JumpOptions | None = None) -> tuple[HybridState, TrajectoryRecord]:
    """Solve the sample-``k`` MPC at ``state.x`` and reset the timer.

    ``t`` and ``j`` are the hybrid time before the jump; the record carries
    ``j + 1``. Raises :class:`ControllerStarved` only under the abort policy.
    """
    opts = options or JumpOptions(oracle=oracle)
    if oracle and not opts.oracle:
        opts = replace(opts, oracle=True)
    dt = cfg.cw.dt
    if state.tau != dt:
        raise HybridContractError(f"jump requires tau = {dt}, got {state.tau}")
    p, lay = build_mpc(cfg, state.x, k)
    warm = None
    if opts.warm_start and state.y is not None and state.y.shape == (lay.n,):
        warm = shift_warm_start(state.y, lay, cfg)
    t0 = time.perf_counter()
    try:
        res = solve_bnb(p, budget, warm)
        why = "" if res.incumbent is not None else res.status.value
    except NoIncumbentWithinBudget as exc:
        res, why = exc.result, "Starved"
    if why:
        # no usable plan: the budget ran out first, or the MPC is infeasible
        if opts.starved_policy == "abort":
            raise ControllerStarved(f"no incumbent at sample {k} ({why})", sample=k)
        u = extract_control(state.y, lay) if state.y is not None else np.zeros(3)
        rec = TrajectoryRecord(
            JUMP, t, j + 1, 0.0, state.x.copy(), u, eps=math.inf,
            iterates=res.iterates_used, nodes=res.nodes_explored,
            wall_s=time.perf_counter() - t0, status=why)
        return HybridState(state.y, state.x.copy(), 0.0), rec
    wall = time.perf_counter() - t0
    y = res.incumbent.y
    f_sub = res.incumbent.objective
    V = gap = L = None
    if opts.oracle:
        # an Optimal result already certifies its own value
        V = f_sub if res.status is SolveStatus.OPTIMAL else certified_value(p)
        gap = abs(f_sub - V)
        L = gap + 0.5 * float(state.x @ state.x)
    rec = TrajectoryRecord(
        JUMP, t, j + 1, 0.0, state.x.copy(), extract_control(y, lay), f_sub, V, gap,
        res.eps_achieved, L, res.iterates_used, res.nodes_explored, wall, res.status.value,
        res.warm_used)
    return HybridState(y, state.x.copy(), 0.0), rec


def flow(state: HybridState, u, cw, *, timer_skew: float = 0.0,
         t: float = 0.0, j: int = 0, last: TrajectoryRecord | None = None
         ) -> tuple[HybridState, TrajectoryRecord]:
    """Hold ``u`` until the timer reaches ``dt``.

    The timer runs at rate ``1 + timer_skew``, so the plant flows for
    ``dt / (1 + timer_skew)`` seconds. ``last`` (the preceding jump record)
    supplies the solver columns carried through the flow.
    """
    if state.tau != 0.0:
        raise HybridContractError(f"flow requires tau = 0, got {state.tau}")
    u = np.asarray(u, dtype=float)
    h = cw.dt / (1.0 + timer_skew)
    x = propagate(cw, state.x, u, h) if h <= cw.dt else flow_exact(cw, state.x, u, h)
    gap = last.gap if last is not None else None
    L = gap + 0.5 * float(x @ x) if gap is not None else None
    rec = TrajectoryRecord(
        FLOW, t + h, j, cw.dt, x.copy(), u.copy(),
        f_sub=last.f_sub if last is not None else None,
        V=last.V if last is not None else None, gap=gap,
        eps=last.eps if last is not None else None, L=L, status="")
    return HybridState(state.y, x, cw.dt), rec


def scheduled_budget(budget: SolverBudget, schedule, k: int, samples: int) -> SolverBudget:
    """Iterate limit interpolated linearly from ``schedule[0]`` to ``schedule[1]``."""
    if schedule is None:
        return budget
    a, b = schedule
    frac = k / (samples - 1) if samples > 1 else 0.0
    return replace(budget, iterate_limit=int(round(a + (b - a) * frac)))


def run_hybrid(cfg: MpcConfig, budget: SolverBudget, x0, samples: int, oracle: bool = False,
               seed: int | None = None, *, warm_start: bool = True,
               starved_policy: str = "hold", timer_skew: float = 0.0,
               iterate_schedule=None) -> HybridTrajectory:
    """Simulate ``samples`` jump/flow pairs from ``x0``.

    ``seed`` keys the random linear-cost stream (overriding ``cfg.c_seed``).
    The timer starts at ``dt`` so the first event is a jump.
    """
    if int(samples) != samples or samples < 1:
        raise ValueError("samples must be a positive integer")
    if not timer_skew > -1.0:
        raise ValueError("timer_skew must exceed -1")
    if seed is not None:
        cfg = replace(cfg, c_seed=int(seed))
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (6,):
        raise ValueError("x0 must have 6 entries")
    dt = cfg.cw.dt
    opts = JumpOptions(oracle=oracle, warm_start=warm_start, starved_policy=starved_policy)
    traj = HybridTrajectory(dt=dt, flow_interval=dt / (1.0 + timer_skew),
                            terminal_scale=cfg.terminal_scale)
    state = HybridState(None, x.copy(), dt)
    t, j = 0.0, 0
    for k in range(samples):
        b_k = scheduled_budget(budget, iterate_schedule, k, samples)
        try:
            state, rec = jump(state, cfg, b_k, k, t=t, j=j, options=opts)
        except ControllerStarved as exc:
            exc.trajectory = traj
            traj.starved_samples.append(k)
            raise
        if rec.f_sub is None:
            traj.starved_samples.append(k)
        traj.records.append(rec)
        j = rec.j
        state, rec = flow(state, rec.u, cfg.cw, timer_skew=timer_skew, t=t, j=j, last=rec)
        traj.records.append(rec)
        t = rec.t
    validate_trajectory(traj)
    return traj


def validate_trajectory(traj: HybridTrajectory) -> bool:
    """Check alternation, timer resets and monotone hybrid time.

    Raises :class:`HybridContractError` on the first defect.
    """
    dt = traj.dt
    prev = None
    for i, r in enumerate(traj.records):
        where = f"record {i}"
        if not 0.0 <= r.tau <= dt:
            raise HybridContractError(f"{where}: tau {r.tau} outside [0, {dt}]")
        if np.asarray(r.x).shape != (6,) or np.asarray(r.u).shape != (3,):
            raise HybridContractError(f"{where}: bad state or control shape")
        expected = JUMP if i % 2 == 0 else FLOW
        if r.kind != expected:
            raise HybridContractError(f"{where}: expected {expected}, got {r.kind}")
        if r.kind == JUMP:
            if r.tau != 0.0:
                raise HybridContractError(f"{where}: tau not reset at jump")
            pj, pt = (prev.j, prev.t) if prev is not None else (0, 0.0)
            if prev is not None and prev.tau != dt:
                raise HybridContractError(f"{where}: jump before the timer expired")
            if r.j != pj + 1:
                raise HybridContractError(f"{where}: jump count {r.j} after {pj}")
            if r.t != pt:
                raise HybridContractError(f"{where}: flow time changed across a jump")
        else:
            if r.tau != dt:
                raise HybridContractError(f"{where}: flow ended with tau {r.tau}")
            if r.j != prev.j:
                raise HybridContractError(f"{where}: jump count changed during flow")
            if not r.t >= prev.t:
                raise HybridContractError(f"{where}: flow time decreased")
            if not math.isclose(r.t - prev.t, traj.flow_interval, rel_tol=1e-9,
                                abs_tol=1e-9 * dt):
                raise HybridContractError(f"{where}: flow advanced {r.t - prev.t}")
        prev = r
    return True


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trajectory_csv(traj: HybridTrajectory, path, include_wall_time: bool = False) -> None:
    """One row per record. Wall time is blank unless requested so that
    deterministic runs give identical files."""
    lines = [CSV_HEADER]
    for r in traj.records:
        cells = [_fmt(r.t), str(r.j), _fmt(r.tau)]
        cells += [_fmt(v) for v in r.x]
        cells += [_fmt(v) for v in r.u]
        cells += [_fmt(r.f_sub), _fmt(r.V), _fmt(r.gap), _fmt(r.eps), _fmt(r.L),
                  _fmt(r.iterates), _fmt(r.nodes),
                  _fmt(r.wall_s) if include_wall_time else ""]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _gap_trace(traj: HybridTrajectory) -> np.ndarray:
    out = []
    for r in traj.jumps:
        if r.gap is not None:
            out.append(r.gap)
        elif r.eps is not None:
            out.append(r.eps)
        else:
            out.append(math.inf)
    return np.array(out, dtype=float)


def stability_report(traj: HybridTrajectory, tail_fraction: float = 0.25,
                     divergence_ceiling: float | None = None,
                     threshold: float | None = None, lyap_tol: float = LYAP_TOL) -> StabilityReport:
    """Empirical boundedness and divergence diagnostics for one run.

    ``threshold`` defaults to the terminal-box scale. ``divergence_ceiling``
    defaults to 1e3 times the median gap over the first quarter of samples,
    floored at the largest ``|f_sub|`` of that window: exact early solves give
    a zero median, and a gap is only called divergent once it outgrows the
    transient cost itself.
    """
    if not traj.records:
        raise ValueError("empty trajectory")
    if not 0.0 < tail_fraction < 1.0:
        raise ValueError("tail_fraction must lie in (0, 1)")
    thr = traj.terminal_scale if threshold is None else float(threshold)
    jumps = traj.jumps
    K = len(jumps)
    tail = max(1, math.ceil(tail_fraction * K))
    tail_recs = traj.records[2 * (K - tail):]
    sigma_hat = max(float(np.linalg.norm(r.x)) for r in tail_recs)

    gaps = _gap_trace(traj)
    early = max(1, math.ceil(0.25 * K))
    if divergence_ceiling is None:
        eg = gaps[:early]
        eg = eg[np.isfinite(eg)]
        fs = [abs(r.f_sub) for r in jumps[:early] if r.f_sub is not None]
        floor = max(fs) if fs and max(fs) > 0 else 1e-6
        med = float(np.median(eg)) if eg.size else 0.0
        divergence_ceiling = max(1e3 * med, floor)
    tail_gaps = gaps[K - tail:]
    diverged = bool(np.any(~np.isfinite(tail_gaps)) or np.max(tail_gaps) > divergence_ceiling)
    if K >= 10:
        last = gaps[-10:]
        if np.all(np.isfinite(last)) and np.all(np.diff(last) > 0) and last[-1] > 1e-8:
            diverged = True

    violations = 0
    for prev, cur in zip(traj.records[1::2], traj.records[2::2]):
        if prev.L is not None and cur.L is not None and cur.L - prev.L > lyap_tol:
            violations += 1

    beta, lam, env_ok = _envelope(traj, sigma_hat)
    finite = gaps[np.isfinite(gaps)]
    mean_gap = float(np.mean(finite)) if finite.size == gaps.size and gaps.size else math.inf
    return StabilityReport(
        sigma_hat=sigma_hat,
        converged=bool(sigma_hat <= thr and not diverged),
        lyap_jump_violations=violations,
        divergence_flag=diverged,
        threshold=thr,
        divergence_ceiling=float(divergence_ceiling),
        beta_hat=beta,
        lambda_hat=lam,
        envelope_ok=env_ok,
        mean_gap=mean_gap,
    )


def _envelope(traj: HybridTrajectory, sigma_hat: float):
    # Fit |x| <= beta |x0| exp(-lam s) + sigma_hat with s = t/dt + j.
    norms = np.array([np.linalg.norm(r.x) for r in traj.records])
    s = np.array([r.t / traj.dt + r.j for r in traj.records])
    x0 = norms[0]
    if x0 == 0.0:
        return 0.0, 0.0, bool(np.all(norms <= sigma_hat))
    excess = norms - sigma_hat
    keep = excess > 1e-12 * x0
    lam = 0.0
    if np.count_nonzero(keep) >= 2:
        slope = np.polyfit(s[keep], np.log(excess[keep] / x0), 1)[0]
        lam = max(0.0, -float(slope))
    beta = float(np.max(np.maximum(excess, 0.0) * np.exp(lam * s)) / x0)
    bound = beta * x0 * np.exp(-lam * s) + sigma_hat
    return beta, lam, bool(np.all(norms <= bound * (1 + 1e-12) + 1e-15))

