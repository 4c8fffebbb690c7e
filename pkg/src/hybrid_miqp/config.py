"""Scenario configuration files.

Configs are YAML mappings. Every key is optional except ``x0``::

    x0: [20, -15, 5, 0.01, 0, -0.005]   # plant state at t = 0 (m, m/s)
    samples: 30                          # jump/flow pairs per run
    seeds: [0]                           # one run per seed and budget
    x0_spread: 0.0                       # per-seed Gaussian jitter of x0 (scalar or 6 values)
    oracle: false                        # certify V for the gap column
    warm_start: true                     # seed each solve with the shifted plan
    starved_policy: hold                 # hold | abort
    timer_skew: 0.0                      # timer runs at rate 1 + skew
    iterate_schedule: null               # [first, last] iterate limit, linear in k
    tail_fraction: 0.25
    record_wall_time: false              # wall_s column and summary timing
    output_dir: null
    mpc:
      N: 15
      gamma: 1.13e-3
      mass: 100.0
      dt: 300.0
      Q_state: [0.01, 0.01, 0.01, 1, 1, 1]   # diagonal, or a full 6x6 list
      Q_ctrl: [1, 1, 1]                      # diagonal, or a full 3x3 list
      v_min: 0.0
      v_max: 0.05
      terminal_box: [0.1, 0.1, 0.1, 0.01, 0.01, 0.01]
      c_scale: 1.0e-3
      c_seed: 0
    budgets:                             # omitted keys are unlimited
      - {iterate_limit: 5}
      - {soft_time_limit_s: 0.5}
      - {node_memory_limit: 20, gap_tol: 1.0e-6}
      - {}
    oracle_check:
      instances: 20
      max_binaries: 6
      max_continuous: 8
      horizons: [3, 4]
      seed: 0
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bnb import SolverBudget
from .cw import CwParams
from .errors import ConfigError
from .mpc import MpcConfig

TOP_KEYS = {"x0", "samples", "seeds", "x0_spread", "oracle", "warm_start", "starved_policy",
            "timer_skew", "iterate_schedule", "tail_fraction", "record_wall_time",
            "output_dir", "mpc", "budgets", "oracle_check"}
MPC_KEYS = {"N", "gamma", "mass", "dt", "Q_state", "Q_ctrl", "v_min", "v_max",
            "terminal_box", "c_scale", "c_seed"}
BUDGET_KEYS = {"soft_time_limit_s", "iterate_limit", "node_memory_limit", "gap_tol",
               "max_inner_iters"}
CHECK_KEYS = {"instances", "max_binaries", "max_continuous", "horizons", "seed"}


@dataclass(frozen=True)
class OracleCheckConfig:
    instances: int = 20
    max_binaries: int = 6
    max_continuous: int = 8
    horizons: tuple = (3, 4)
    seed: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    mpc: MpcConfig
    budgets: tuple
    x0: np.ndarray
    samples: int = 30
    seeds: tuple = (0,)
    x0_spread: np.ndarray = field(default_factory=lambda: np.zeros(6))
    oracle: bool = False
    output_dir: str | None = None
    starved_policy: str = "hold"
    warm_start: bool = True
    timer_skew: float = 0.0
    iterate_schedule: tuple | None = None
    tail_fraction: float = 0.25
    record_wall_time: bool = False
    oracle_check: OracleCheckConfig = field(default_factory=OracleCheckConfig)

    def __post_init__(self):
        if not self.budgets:
            raise ConfigError("at least one budget is required", "budgets")
        if not self.seeds:
            raise ConfigError("at least one seed is required", "seeds")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1", "samples")

    def initial_state(self, seed: int) -> np.ndarray:
        if not np.any(self.x0_spread):
            return self.x0.copy()
        rng = np.random.default_rng(seed)
        return self.x0 + self.x0_spread * rng.standard_normal(6)

    def to_dict(self) -> dict:
        """Effective configuration with every default filled in."""
        m = self.mpc

        def budget(b):
            return {k: getattr(b, k) for k in sorted(BUDGET_KEYS)}

        return {
            "x0": self.x0.tolist(),
            "samples": self.samples,
            "seeds": list(self.seeds),
            "x0_spread": self.x0_spread.tolist(),
            "oracle": self.oracle,
            "warm_start": self.warm_start,
            "starved_policy": self.starved_policy,
            "timer_skew": self.timer_skew,
            "iterate_schedule": list(self.iterate_schedule) if self.iterate_schedule else None,
            "tail_fraction": self.tail_fraction,
            "record_wall_time": self.record_wall_time,
            "output_dir": self.output_dir,
            "mpc": {
                "N": m.N, "gamma": m.cw.gamma, "mass": m.cw.mass, "dt": m.cw.dt,
                "Q_state": m.Q_state.tolist(), "Q_ctrl": m.Q_ctrl.tolist(),
                "v_min": m.v_min, "v_max": m.v_max, "terminal_box": m.terminal_box.tolist(),
                "c_scale": m.c_scale, "c_seed": m.c_seed,
            },
            "budgets": [budget(b) for b in self.budgets],
            "oracle_check": {
                "instances": self.oracle_check.instances,
                "max_binaries": self.oracle_check.max_binaries,
                "max_continuous": self.oracle_check.max_continuous,
                "horizons": list(self.oracle_check.horizons),
                "seed": self.oracle_check.seed,
            },
        }


def _line_map(node, path=(), out=None) -> dict:
    # 1-based source lines of every key path, for error messages
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = path + (str(k.value),)
            out[p] = k.start_mark.line + 1
            _line_map(v, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            p = path + (i,)
            out[p] = v.start_mark.line + 1
            _line_map(v, p, out)
    return out


class _Reader:
    def __init__(self, lines):
        self.lines = lines

    def fail(self, msg, path):
        name = ".".join(str(p) for p in path)
        line = None
        for cut in range(len(path), 0, -1):
            line = self.lines.get(tuple(path[:cut]))
            if line is not None:
                break
        raise ConfigError(msg, name, line)

    def check_keys(self, d, allowed, path):
        if not isinstance(d, dict):
            self.fail("expected a mapping", path)
        for k in d:
            if k not in allowed:
                self.fail(f"unknown key '{k}'", path + (str(k),))

    def num(self, d, key, default, path, *, integer=False, lo=None, lo_strict=False,
            allow_none=False):
        p = path + (key,)
        v = d.get(key, default)
        if v is None and allow_none:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail("expected a number", p)
        if integer and int(v) != v:
            self.fail("expected an integer", p)
        if lo is not None and (v <= lo if lo_strict else v < lo):
            self.fail(f"must be {'>' if lo_strict else '>='} {lo}", p)
        return int(v) if integer else float(v)

    def flag(self, d, key, default, path):
        v = d.get(key, default)
        if not isinstance(v, bool):
            self.fail("expected true or false", path + (key,))
        return v

    def vector(self, d, key, default, size, path):
        p = path + (key,)
        v = d.get(key, default)
        try:
            arr = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            self.fail("expected a list of numbers", p)
        if arr.ndim == 0:
            arr = np.full(size, float(arr))
        if arr.shape != (size,) or not np.all(np.isfinite(arr)):
            self.fail(f"expected {size} finite numbers", p)
        return arr

    def matrix(self, d, key, default_diag, size, path):
        p = path + (key,)
        v = d.get(key, default_diag)
        try:
            arr = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            self.fail("expected a list of numbers", p)
        if arr.shape == (size,):
            arr = np.diag(arr)
        if arr.shape != (size, size):
            self.fail(f"expected {size} diagonal entries or a {size}x{size} matrix", p)
        return arr


def parse_config(data, lines=None) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from an already parsed mapping."""
    rd = _Reader(lines or {})
    if data is None:
        data = {}
    rd.check_keys(data, TOP_KEYS, ())
    if "x0" not in data:
        rd.fail("missing required field", ("x0",))
    x0 = rd.vector(data, "x0", None, 6, ())

    mpc_d = data.get("mpc") or {}
    mp = ("mpc",)
    rd.check_keys(mpc_d, MPC_KEYS, mp)
    N = rd.num(mpc_d, "N", 15, mp, integer=True)
    if N < 2:
        rd.fail("N must be >= 2", mp + ("N",))
    gamma = rd.num(mpc_d, "gamma", 1.13e-3, mp, lo=0, lo_strict=True)
    mass = rd.num(mpc_d, "mass", 100.0, mp, lo=0, lo_strict=True)
    dt = rd.num(mpc_d, "dt", 300.0, mp, lo=0, lo_strict=True)
    v_min = rd.num(mpc_d, "v_min", 0.0, mp, lo=0)
    v_max = rd.num(mpc_d, "v_max", 0.05, mp, lo=0, lo_strict=True)
    if v_min > v_max:
        rd.fail("v_min must not exceed v_max", mp + ("v_min",))
    q_state = rd.matrix(mpc_d, "Q_state", [1e-2, 1e-2, 1e-2, 1.0, 1.0, 1.0], 6, mp)
    q_ctrl = rd.matrix(mpc_d, "Q_ctrl", [1.0, 1.0, 1.0], 3, mp)
    box = rd.vector(mpc_d, "terminal_box", [0.1, 0.1, 0.1, 0.01, 0.01, 0.01], 6, mp)
    if np.any(box <= 0):
        rd.fail("half-widths must be positive", mp + ("terminal_box",))
    c_scale = rd.num(mpc_d, "c_scale", 1e-3, mp, lo=0)
    c_seed = rd.num(mpc_d, "c_seed", 0, mp, integer=True, lo=0)
    try:
        mpc = MpcConfig(N=N, cw=CwParams(gamma, mass, dt), Q_state=q_state, Q_ctrl=q_ctrl,
                        v_min=v_min, v_max=v_max, terminal_box=box, c_seed=c_seed,
                        c_scale=c_scale)
    except ValueError as exc:
        field_name = "Q_ctrl" if "Q_ctrl" in str(exc) else "Q_state" if "Q_state" in str(exc) else ""
        rd.fail(str(exc), mp + ((field_name,) if field_name else ()))

    raw_budgets = data.get("budgets", [{}])
    if not isinstance(raw_budgets, list) or not raw_budgets:
        rd.fail("expected a non-empty list", ("budgets",))
    budgets = []
    for i, bd in enumerate(raw_budgets):
        bp = ("budgets", i)
        bd = bd or {}
        rd.check_keys(bd, BUDGET_KEYS, bp)
        kw = {
            "soft_time_limit_s": rd.num(bd, "soft_time_limit_s", None, bp, lo=0,
                                        lo_strict=True, allow_none=True),
            "iterate_limit": rd.num(bd, "iterate_limit", None, bp, integer=True, lo=0,
                                    allow_none=True),
            "node_memory_limit": rd.num(bd, "node_memory_limit", None, bp, integer=True,
                                        lo=0, lo_strict=True, allow_none=True),
            "gap_tol": rd.num(bd, "gap_tol", 1e-9, bp, lo=0, lo_strict=True),
            "max_inner_iters": rd.num(bd, "max_inner_iters", None, bp, integer=True, lo=0,
                                      lo_strict=True, allow_none=True),
        }
        budgets.append(SolverBudget(**kw))

    samples = rd.num(data, "samples", 30, (), integer=True, lo=1)
    seeds = data.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        rd.fail("expected a non-empty list of integers", ("seeds",))
    for i, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            rd.fail("seeds must be nonnegative integers", ("seeds", i))
    spread = rd.vector(data, "x0_spread", 0.0, 6, ())
    if np.any(spread < 0):
        rd.fail("must be nonnegative", ("x0_spread",))
    policy = data.get("starved_policy", "hold")
    if policy not in ("hold", "abort"):
        rd.fail("expected 'hold' or 'abort'", ("starved_policy",))
    skew = rd.num(data, "timer_skew", 0.0, ())
    if not skew > -1.0:
        rd.fail("must exceed -1", ("timer_skew",))
    tail = rd.num(data, "tail_fraction", 0.25, ())
    if not 0.0 < tail < 1.0:
        rd.fail("must lie in (0, 1)", ("tail_fraction",))
    sched = data.get("iterate_schedule")
    if sched is not None:
        if (not isinstance(sched, list) or len(sched) != 2
                or any(isinstance(v, bool) or not isinstance(v, int) or v < 0 for v in sched)):
            rd.fail("expected [first, last] nonnegative integers", ("iterate_schedule",))
        sched = tuple(sched)
    out = data.get("output_dir")
    if out is not None and not isinstance(out, str):
        rd.fail("expected a path string", ("output_dir",))

    oc_d = data.get("oracle_check") or {}
    op = ("oracle_check",)
    rd.check_keys(oc_d, CHECK_KEYS, op)
    horizons = oc_d.get("horizons", [3, 4])
    if (not isinstance(horizons, list)
            or any(isinstance(h, bool) or not isinstance(h, int) or not 2 <= h <= 4
                   for h in horizons)):
        rd.fail("expected horizons between 2 and 4", op + ("horizons",))
    oc = OracleCheckConfig(
        instances=rd.num(oc_d, "instances", 20, op, integer=True, lo=0),
        max_binaries=rd.num(oc_d, "max_binaries", 6, op, integer=True, lo=1),
        max_continuous=rd.num(oc_d, "max_continuous", 8, op, integer=True, lo=1),
        horizons=tuple(horizons),
        seed=rd.num(oc_d, "seed", 0, op, integer=True, lo=0),
    )
    if oc.max_binaries > 10:
        rd.fail("enumeration is limited to 10 binaries", op + ("max_binaries",))

    return ScenarioConfig(
        mpc=mpc, budgets=tuple(budgets), x0=x0, samples=samples, seeds=tuple(seeds),
        x0_spread=spread, oracle=rd.flag(data, "oracle", False, ()), output_dir=out,
        starved_policy=policy, warm_start=rd.flag(data, "warm_start", True, ()),
        timer_skew=skew, iterate_schedule=sched, tail_fraction=tail,
        record_wall_time=rd.flag(data, "record_wall_time", False, ()), oracle_check=oc)


def validate_config(path) -> ScenarioConfig:
    """Read, check and default-fill the YAML scenario at ``path``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from exc
    return parse_config(data, _line_map(node) if node is not None else {})


def write_effective_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")
