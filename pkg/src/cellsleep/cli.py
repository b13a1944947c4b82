"""Command-line interface.

Subcommands: solve (exact joint MDP), simulate (one policy), index-table
(per-state index dump), experiment (figure-style sweeps with CSV + PNG
artifacts), validate (internal consistency battery).  Exit codes: 0 success,
2 configuration error, 3 solver capacity exceeded, 4 consistency-check
failure.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .arrivals import residual_pmf
from .baselines import lower_bound, round_robin_longrun_cost, uniform_longrun_cost
from .config import ConfigError, ExperimentSpec, load_config
from .costs import anticipated_costs
from .experiments import report_summary, run_experiment, write_csv
from .greedy import greedy_longrun_cost, greedy_thresholds
from .index_policy import build_index_table
from .joint import CapacityError, ConvergenceError, rvia_solve
from .model import ClusterConfig, ConfigurationError
from .sim import (
    AlwaysOffPolicy,
    AlwaysOnPolicy,
    GreedyPolicy,
    IndexPolicy,
    OptimalPolicy,
    RoundRobinPolicy,
    UniformPolicy,
    delta_metric,
    run_policy,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_CONSISTENCY = 4


def _parse_budget(text: str):
    if text.strip().lower() in ("none", "unlimited"):
        return None
    return int(float(text))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellsleep",
        description="Sleep-control policies for a cluster of cells: exact MDP, "
        "greedy, index, and state-independent baselines.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="configuration file")
    common.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    common.add_argument("--segments", type=int, default=None, help="override the horizon")
    common.add_argument("--out-dir", default="out", help="artifact directory")
    common.add_argument("--threads", type=int, default=1, help="parallel sweep points")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve the joint MDP exactly")
    p.add_argument("--budget", default="10000000", help="state budget (integer or 'none')")
    p.add_argument("--save", action="store_true", help="cache the solution under out-dir")

    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo run of one policy")
    p.add_argument(
        "--policy",
        required=True,
        choices=["optimal", "index", "greedy", "uniform", "round-robin", "always-on",
                 "always-off"],
    )
    p.add_argument("--budget", default="10000000", help="state budget for --policy optimal")

    p = sub.add_parser("index-table", parents=[common], help="dump a cell's index table as CSV")
    p.add_argument("--cell", type=int, default=1, help="1-based cell number")

    sub.add_parser("experiment", parents=[common], help="run the configured experiment")
    common_flags = sub.choices["experiment"]
    common_flags.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    sub.add_parser("validate", parents=[common], help="run internal consistency checks")
    return parser


def _load(args) -> tuple[ClusterConfig, ExperimentSpec | None]:
    config, spec = load_config(args.config)
    if spec is not None:
        if args.seed is not None:
            spec.seed = args.seed
        if args.segments is not None:
            spec.segments = args.segments
    return config, spec


def _cmd_solve(args) -> int:
    config, _ = _load(args)
    t0 = time.monotonic()
    solved = rvia_solve(config, max_states=_parse_budget(args.budget))
    dt = time.monotonic() - t0
    print(
        f"gain: {solved.gain:.10g}\nstates: {solved.state_count}\n"
        f"iterations: {solved.iterations}\nresidual span: {solved.residual_span:.3e}\n"
        f"runtime: {dt:.2f}s"
    )
    if args.save:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        from .config import config_hash

        path = out / f"joint-{config_hash(config)}.npz"
        solved.save(str(path))
        print(f"saved: {path}")
    return EXIT_OK


def _make_policy(name: str, config: ClusterConfig, budget):
    if name == "optimal":
        return OptimalPolicy(rvia_solve(config, max_states=budget))
    if name == "index":
        return IndexPolicy(config)
    if name == "greedy":
        return GreedyPolicy(config)
    if name == "uniform":
        return UniformPolicy(config)
    if name == "round-robin":
        return RoundRobinPolicy(config)
    if name == "always-on":
        return AlwaysOnPolicy(config)
    return AlwaysOffPolicy(config)


def _cmd_simulate(args) -> int:
    config, spec = _load(args)
    segments = args.segments or (spec.segments if spec else 100_000)
    seed = args.seed if args.seed is not None else (spec.seed if spec else 7)
    policy = _make_policy(args.policy, config, _parse_budget(args.budget))
    t0 = time.monotonic()
    result = run_policy(config, policy, segments, seed, label=args.policy)
    dt = time.monotonic() - t0
    pmfs = [residual_pmf(c, config.segment_duration, config.n_th) for c in config.cells]
    bound = lower_bound(config, pmfs)
    print(
        f"policy       segments  avg_cost        ci95          delta_pct  on_fraction\n"
        f"{result.label:<12} {segments:<9d} {result.avg_cost:<15.6f} "
        f"{result.ci_halfwidth:<13.6f} {delta_metric(result.avg_cost, bound):<10.4f} "
        f"{float(np.mean(result.on_fraction)):.4f}  ({dt:.1f}s)"
    )
    return EXIT_OK


def _cmd_index_table(args) -> int:
    config, _ = _load(args)
    if not 1 <= args.cell <= config.m_cells:
        raise ConfigError(f"--cell must be in 1..{config.m_cells}")
    cell = config.cells[args.cell - 1]
    table = build_index_table(
        cell, config.power, config.cost_fn, config.segment_duration, config.n_th
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"index-table-cell{args.cell}.csv"
    rows = [
        [int(prev), n, table.eps[prev, n]]
        for prev in (1, 0)
        for n in range(config.n_th + 1)
    ]
    write_csv(path, ["prev_on", "n", "eps_star"], rows)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    config, spec = _load(args)
    if spec is None:
        raise ConfigError("config has no [experiment] section")
    result = run_experiment(
        config,
        spec,
        args.out_dir,
        threads=args.threads,
        figures=not args.no_figures,
    )
    print(report_summary(result))
    return EXIT_OK if result.consistent else EXIT_CONSISTENCY


def _cmd_validate(args) -> int:
    config, spec = _load(args)
    segments = args.segments or 20_000
    seed = args.seed if args.seed is not None else 19
    checks: list[tuple[str, bool, str]] = []

    pmfs = [residual_pmf(c, config.segment_duration, config.n_th) for c in config.cells]
    for i, pmf in enumerate(pmfs):
        checks.append(
            (f"cell {i + 1}: residual pmf sums to 1", abs(pmf.probs.sum() - 1) < 1e-9, "")
        )
        analytic = pmf.mean_untruncated
        trunc_mean_defect = analytic - (pmf.support @ pmf.probs)
        checks.append(
            (
                f"cell {i + 1}: truncation bias below 1e-6 users",
                -1e-9 < trunc_mean_defect < 1e-6,
                f"defect={trunc_mean_defect:.2e}",
            )
        )
    for i, c in enumerate(config.cells):
        th = greedy_thresholds(c, config.power, config.segment_duration)
        checks.append((f"cell {i + 1}: gamma_l <= gamma_u", th.gamma_l <= th.gamma_u, ""))
    costs = [
        anticipated_costs(c, config.power, config.cost_fn, config.segment_duration, p)
        for c, p in zip(config.cells, pmfs)
    ]
    checks.append(("switch-inclusive cost dominates (c01 >= c11)",
                   all(c.c01 >= c.c11 for c in costs), ""))

    bound = lower_bound(config, pmfs)
    closed = {
        "uniform": uniform_longrun_cost(config, costs),
        "round-robin": round_robin_longrun_cost(config, costs),
    }
    sims = {
        "uniform": run_policy(config, UniformPolicy(config), segments, seed, "uniform"),
        "round-robin": run_policy(config, RoundRobinPolicy(config), segments, seed + 1,
                                  "round-robin"),
    }
    if config.k_max_off == config.m_cells:
        closed["greedy"] = greedy_longrun_cost(config)
        sims["greedy"] = run_policy(config, GreedyPolicy(config), segments, seed + 2, "greedy")
    for name, closed_value in closed.items():
        sim = sims[name]
        tolerance = max(4 * sim.ci_halfwidth, 1e-9 * abs(closed_value))
        checks.append(
            (
                f"{name}: closed form within simulation CI",
                abs(sim.avg_cost - closed_value) <= tolerance,
                f"closed={closed_value:.6g} sim={sim.avg_cost:.6g} ci={sim.ci_halfwidth:.3g}",
            )
        )
        checks.append(
            (
                f"{name}: lower bound respected",
                sim.avg_cost + sim.ci_halfwidth >= bound,
                f"bound={bound:.6g}",
            )
        )

    width = max(len(name) for name, _, _ in checks)
    failed = False
    for name, ok, detail in checks:
        status = "pass" if ok else "FAIL"
        failed = failed or not ok
        print(f"[{status}] {name.ljust(width)}  {detail}")
    return EXIT_CONSISTENCY if failed else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "index-table":
            return _cmd_index_table(args)
        if args.command == "experiment":
            return _cmd_experiment(args)
        return _cmd_validate(args)
    except (ConfigError, ConfigurationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"solver capacity exceeded: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except ConvergenceError as exc:
        print(f"solver failed to converge: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY


if __name__ == "__main__":
    sys.exit(main())
