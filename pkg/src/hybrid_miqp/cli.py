"""Command-line scenario runner.

    hybrid-miqp run CONFIG [--out DIR]
    hybrid-miqp sweep CONFIG [--out DIR] [--workers K]
    hybrid-miqp oracle-check CONFIG [--out DIR]

Exit status: 0 success, 1 configuration error, 2 controller starved under
the abort policy, 3 internal solver fault or failed oracle check.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bnb import SolverBudget, solve_bnb
from .config import ScenarioConfig, validate_config, write_effective_config
from .errors import ConfigError, ControllerStarved, MiqpError
from .hybrid import HybridTrajectory, run_hybrid, stability_report, write_trajectory_csv
from .mpc import build_mpc
from .oracles import enumerate_optimum, random_miqp

log = logging.getLogger("hybrid_miqp")

OUT_ENV = "HYBRID_MIQP_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_STARVED, EXIT_FAULT = 0, 1, 2, 3

SUMMARY_HEADER = ("tag,seed,iterate_limit,soft_time_limit_s,node_memory_limit,gap_tol,"
                  "status,samples_run,starved_samples,sigma_hat,mean_gap,divergence_flag,"
                  "converged,lyap_jump_violations,total_iterates,wall_time_s")


def resolve_output_dir(cli_out, cfg: ScenarioConfig) -> Path:
    """``--out`` wins, then the config, then the environment, then ``./out``."""
    for cand in (cli_out, cfg.output_dir, os.environ.get(OUT_ENV)):
        if cand:
            return Path(cand)
    return Path("out")


def budget_tags(budgets) -> list[str]:
    tags, seen = [], {}
    for b in budgets:
        t = b.tag
        seen[t] = seen.get(t, 0) + 1
        tags.append(t if seen[t] == 1 else f"{t}-{seen[t]}")
    return tags


def _cell(args):
    cfg, budget, tag, seed, out_dir = args
    t0 = time.perf_counter()
    traj: HybridTrajectory | None = None
    status = "completed"
    try:
        traj = run_hybrid(cfg.mpc, budget, cfg.initial_state(seed), cfg.samples, cfg.oracle,
                          seed, warm_start=cfg.warm_start, starved_policy=cfg.starved_policy,
                          timer_skew=cfg.timer_skew, iterate_schedule=cfg.iterate_schedule)
    except ControllerStarved as exc:
        traj, status = exc.trajectory, "starved"
    except (MiqpError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("%s seed %d: solver fault: %s", tag, seed, exc)
        return {"tag": tag, "seed": seed, "status": "fault"}, EXIT_FAULT
    wall = time.perf_counter() - t0
    if traj is not None:
        write_trajectory_csv(traj, Path(out_dir) / f"{tag}_{seed}.csv", cfg.record_wall_time)
    row = {"tag": tag, "seed": seed, "status": status, "wall": wall}
    if traj is not None and traj.records:
        rep = stability_report(traj, cfg.tail_fraction)
        row.update(
            samples_run=len(traj.jumps),
            starved=len(traj.starved_samples),
            sigma_hat=rep.sigma_hat,
            mean_gap=rep.mean_gap,
            divergence_flag=rep.divergence_flag,
            converged=rep.converged,
            lyap=rep.lyap_jump_violations,
            iterates=sum(r.iterates or 0 for r in traj.jumps),
        )
    code = EXIT_STARVED if status == "starved" else EXIT_OK
    return row, code


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _summary_line(row, budget: SolverBudget, record_wall_time: bool) -> str:
    cells = [row["tag"], row["seed"], budget.iterate_limit, budget.soft_time_limit_s,
             budget.node_memory_limit, budget.gap_tol, row["status"], row.get("samples_run"),
             row.get("starved"), row.get("sigma_hat"), row.get("mean_gap"),
             row.get("divergence_flag"), row.get("converged"), row.get("lyap"),
             row.get("iterates"), row.get("wall") if record_wall_time else None]
    return ",".join(_fmt(c) for c in cells)


PLOT_TEMPLATE = '''"""Render control and gap traces from the CSVs in this directory.

Requires matplotlib. Run with ``python {name}``.
"""
import csv
from pathlib import Path

import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
FILES = {files!r}


def load(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["tau"] in ("0.0", "0")]
    return rows


def num(v):
    return float(v) if v not in ("", None) else float("nan")


fig_u, axes_u = plt.subplots(3, 1, sharex=True, figsize=(8, 7))
fig_g, ax_g = plt.subplots(figsize=(8, 4))
for name in FILES:
    rows = load(HERE / name)
    j = [int(r["j"]) for r in rows]
    for i, ax in enumerate(axes_u):
        ax.step(j, [num(r["u%d" % (i + 1)]) for r in rows], where="post", label=name[:-4])
        ax.set_ylabel("u%d [N]" % (i + 1))
    gap = [num(r["gap"]) if r["gap"] else num(r["eps"]) for r in rows]
    ax_g.semilogy(j, [max(g, 1e-16) for g in gap], label=name[:-4])
axes_u[-1].set_xlabel("jump j")
axes_u[0].legend(fontsize="small", ncol=2)
ax_g.set_xlabel("jump j")
ax_g.set_ylabel("|f_sub - V| (eps if no oracle)")
ax_g.legend(fontsize="small", ncol=2)
fig_u.tight_layout()
fig_g.tight_layout()
fig_u.savefig(HERE / "{stem}_controls.png", dpi=150)
fig_g.savefig(HERE / "{stem}_gaps.png", dpi=150)
'''


def write_plot_script(out_dir: Path, files, stem: str) -> Path:
    name = f"plot_{stem}.py"
    path = out_dir / name
    path.write_text(PLOT_TEMPLATE.format(name=name, files=list(files), stem=stem),
                    encoding="utf-8")
    return path


def run_scenario(cfg: ScenarioConfig, out_dir, workers: int = 1, single: bool = False) -> int:
    """Run every (budget, seed) cell, or only the first one if ``single``.

    Writes one trajectory CSV per cell, ``summary.csv``, the effective config
    and a plot script. Returns the process exit status.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, out_dir / "effective_config.yaml")
    budgets = cfg.budgets[:1] if single else cfg.budgets
    seeds = cfg.seeds[:1] if single else cfg.seeds
    tags = budget_tags(budgets)
    cells = [(cfg, b, t, s, str(out_dir)) for b, t in zip(budgets, tags) for s in seeds]
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell, cells))
    else:
        results = [_cell(c) for c in cells]

    lines = [SUMMARY_HEADER]
    files = []
    worst = EXIT_OK
    for (_, b, t, s, _), (row, code) in zip(cells, results):
        lines.append(_summary_line(row, b, cfg.record_wall_time))
        if row["status"] != "fault":
            files.append(f"{t}_{s}.csv")
        worst = max(worst, code)
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_plot_script(out_dir, files, "run" if single else "sweep")
    return worst


def oracle_check(cfg: ScenarioConfig, out_dir) -> int:
    """Unbudgeted solves against enumeration on small random and MPC instances."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    oc = cfg.oracle_check
    rng = np.random.default_rng(oc.seed)
    rows = ["instance,binaries,continuous,bnb_objective,enumerated_objective,abs_diff,pass"]
    ok = True

    def check(name, p):
        nonlocal ok
        res = solve_bnb(p, SolverBudget())
        ref, _ = enumerate_optimum(p)
        if math.isfinite(ref):
            diff = abs(res.objective - ref)
        else:
            # both sides reporting infeasible (or unbounded) is agreement
            diff = 0.0 if res.objective == ref else math.inf
        passed = diff <= 1e-6
        ok &= passed
        rows.append(f"{name},{int(p.int_mask.sum())},{int((~p.int_mask).sum())},"
                    f"{res.objective!r},{ref!r},{diff!r},{'true' if passed else 'false'}")

    for i in range(oc.instances):
        s = int(rng.integers(1, oc.max_binaries + 1))
        nc = int(rng.integers(1, oc.max_continuous + 1))
        check(f"random_{i}", random_miqp(rng, s, nc))
    for N in oc.horizons:
        p, _ = build_mpc(replace(cfg.mpc, N=N), cfg.x0, 0)
        check(f"mpc_N{N}", p)
    (out_dir / "oracle_check.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return EXIT_OK if ok else EXIT_FAULT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybrid-miqp", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "single run: first budget and first seed"),
                        ("sweep", "every budget x seed"),
                        ("oracle-check", "unbudgeted solves vs. enumeration")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", type=Path)
        p.add_argument("--out", type=Path, default=None,
                       help=f"output directory (default: config, ${OUT_ENV}, ./out)")
        p.add_argument("--workers", type=int, default=1, help="parallel sweep cells")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1", "workers")
        cfg = validate_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = resolve_output_dir(args.out, cfg)
    try:
        if args.command == "oracle-check":
            code = oracle_check(cfg, out)
        else:
            code = run_scenario(cfg, out, args.workers, single=args.command == "run")
    except (MiqpError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"solver fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    log.info("outputs in %s (exit %d)", out, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
