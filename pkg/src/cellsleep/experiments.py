"""Experiment orchestration: sweeps, CSV artifacts, figures, and summaries.

Each experiment kind mirrors one of the report figures: cost gaps versus the
OFF budget, the greedy threshold trace, arrival-set comparison, switching
power sensitivity, and the power composition breakdown.  CSVs are the
canonical output (17 significant digits, LF endings); a rendered figure is
written next to each CSV unless disabled.
"""
from __future__ import annotations

import dataclasses
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arrivals import residual_pmf
from .baselines import (
    lower_bound,
    round_robin_longrun_cost,
    uniform_longrun_cost,
)
from .config import ExperimentSpec, config_hash
from .costs import anticipated_costs
from .greedy import greedy_longrun_cost, greedy_thresholds
from .index_policy import build_index_table
from .joint import CapacityError, SolvedMdp, rvia_solve
from .model import ClusterConfig, PowerParams, TABLE1_PROB_SETS, ArrivalMixture, CellParams
from .sim import (
    GreedyPolicy,
    IndexPolicy,
    OptimalPolicy,
    RoundRobinPolicy,
    SimResult,
    UniformPolicy,
    delta_metric,
    paired_run,
    run_policy,
)


@dataclass
class ExperimentResult:
    """Rows written to the CSV plus bookkeeping for the summary."""

    kind: str
    columns: list[str]
    rows: list[list]
    csv_path: Path | None = None
    figure_path: Path | None = None
    runtime_s: float = 0.0
    notes: list[str] = field(default_factory=list)
    checks: list[tuple[str, bool]] = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return all(ok for _, ok in self.checks)


def format_value(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path: Path, columns: list[str], rows: list[list]):
    """RFC-style CSV: header row, UTF-8, LF endings, atomic replace."""
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")
    os.replace(tmp, path)


def _with_k(config: ClusterConfig, k: int) -> ClusterConfig:
    return dataclasses.replace(config, k_max_off=k)


def _with_p_switch(config: ClusterConfig, p_switch: float) -> ClusterConfig:
    power = PowerParams(config.power.p_static, p_switch, config.power.p_d, config.power.p_e)
    return dataclasses.replace(config, power=power)


def _with_prob_set(config: ClusterConfig, set_name: str) -> ClusterConfig:
    probs = TABLE1_PROB_SETS[set_name]
    cells = tuple(
        CellParams(ArrivalMixture(c.arrivals.rates, probs), c.mean_service_time)
        for c in config.cells
    )
    return dataclasses.replace(config, cells=cells)


def _solve_cached(config: ClusterConfig, budget, cache_dir: Path | None) -> SolvedMdp:
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        path = cache_dir / f"joint-{config_hash(config)}.npz"
        if path.exists():
            try:
                return SolvedMdp.load(str(path), config)
            except ValueError:
                path.unlink()
    solved = rvia_solve(config, max_states=budget)
    if cache_dir is not None:
        solved.save(str(path))
    return solved


def _index_policy(config: ClusterConfig) -> IndexPolicy:
    # identical cells share one table
    cache: dict[str, object] = {}
    tables = []
    for cell in config.cells:
        key = repr((cell.arrivals.rates, cell.arrivals.probs, cell.mean_service_time))
        if key not in cache:
            cache[key] = build_index_table(
                cell, config.power, config.cost_fn, config.segment_duration, config.n_th
            )
        tables.append(cache[key])
    return IndexPolicy(config, tables)


def _bound(config: ClusterConfig) -> float:
    pmfs = [residual_pmf(c, config.segment_duration, config.n_th) for c in config.cells]
    return lower_bound(config, pmfs)


def _closed_costs(config: ClusterConfig):
    costs = [
        anticipated_costs(
            c,
            config.power,
            config.cost_fn,
            config.segment_duration,
            residual_pmf(c, config.segment_duration, config.n_th),
        )
        for c in config.cells
    ]
    return costs


def _sweep_point(config: ClusterConfig, k: int, spec: ExperimentSpec, cache_dir):
    cfg = _with_k(config, k)
    bound = _bound(cfg)
    costs = _closed_costs(cfg)
    note = None
    try:
        solved = _solve_cached(cfg, spec.solver_budget, cache_dir)
    except CapacityError as exc:
        solved = None
        note = f"K={k}: optimal unavailable ({exc})"
    policies = []
    labels = []
    if solved is not None:
        policies.append(OptimalPolicy(solved))
        labels.append("optimal")
    policies.append(_index_policy(cfg))
    labels.append("index")
    policies.append(GreedyPolicy(cfg))
    labels.append("greedy")
    results = (
        paired_run(cfg, policies, spec.segments, spec.seed, labels)
        if len(policies) > 1
        else [run_policy(cfg, policies[0], spec.segments, spec.seed, labels[0])]
    )
    by_label = {r.label: r for r in results}
    deltas = {
        "optimal": delta_metric(by_label["optimal"].avg_cost, bound) if solved else float("nan"),
        "index": delta_metric(by_label["index"].avg_cost, bound),
        "greedy": delta_metric(by_label["greedy"].avg_cost, bound),
        "uniform": delta_metric(uniform_longrun_cost(cfg, costs), bound),
        "roundrobin": delta_metric(round_robin_longrun_cost(cfg, costs), bound),
    }
    checks = [
        (f"K={k}: bound below every simulated policy", all(
            r.avg_cost + r.ci_halfwidth >= bound for r in results
        )),
    ]
    return k, deltas, by_label, note, checks


def run_experiment(
    config: ClusterConfig,
    spec: ExperimentSpec,
    out_dir,
    *,
    threads: int = 1,
    figures: bool = True,
) -> ExperimentResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_dir = out_dir / "cache"
    t0 = time.monotonic()
    if spec.kind == "sweep-k":
        result = _run_sweep_k(config, spec, cache_dir, threads)
    elif spec.kind == "threshold-trace":
        result = _run_threshold_trace(config, spec)
    elif spec.kind == "arrival-sets":
        result = _run_arrival_sets(config, spec, cache_dir)
    elif spec.kind == "switch-power":
        result = _run_switch_power(config, spec, cache_dir)
    elif spec.kind == "composition":
        result = _run_composition(config, spec, cache_dir)
    else:  # pragma: no cover - ExperimentSpec already validates
        raise ValueError(f"unknown experiment kind {spec.kind}")
    result.runtime_s = time.monotonic() - t0

    name = spec.label or spec.kind
    csv_path = out_dir / f"{name}.csv"
    write_csv(csv_path, result.columns, result.rows)
    result.csv_path = csv_path
    if figures:
        from . import figures as figmod

        result.figure_path = figmod.render(result, out_dir / f"{name}.png")
    return result


def _run_sweep_k(config, spec, cache_dir, threads) -> ExperimentResult:
    ks = spec.k_values or list(range(config.m_cells + 1))
    result = ExperimentResult(
        kind="sweep-k",
        columns=["K", "delta_optimal", "delta_index", "delta_greedy", "delta_uniform",
                 "delta_roundrobin"],
        rows=[],
    )
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(lambda k: _sweep_point(config, k, spec, cache_dir), ks))
    else:
        points = [_sweep_point(config, k, spec, cache_dir) for k in ks]
    for k, deltas, _, note, checks in points:
        result.rows.append(
            [k, deltas["optimal"], deltas["index"], deltas["greedy"], deltas["uniform"],
             deltas["roundrobin"]]
        )
        if note:
            result.notes.append(note)
        result.checks.extend(checks)
    return result


def _run_threshold_trace(config, spec) -> ExperimentResult:
    from .sim import draw_residual_streams, simulate_actions

    cfg = _with_k(config, config.m_cells)
    residuals = draw_residual_streams(cfg, spec.trace_segments, spec.seed)
    actions = simulate_actions(cfg, GreedyPolicy(cfg), residuals, spec.seed)
    rows = []
    ths = [greedy_thresholds(c, cfg.power, cfg.segment_duration) for c in cfg.cells]
    for t in range(spec.trace_segments):
        for m in range(cfg.m_cells):
            rows.append(
                [t, m, int(residuals[t, m]), int(actions[t, m]), ths[m].gamma_l, ths[m].gamma_u]
            )
    result = ExperimentResult(
        kind="threshold-trace",
        columns=["t", "cell", "residual_users", "action", "gamma_l", "gamma_u"],
        rows=rows,
    )
    # dual-threshold consistency on the trace (previous action vs decision)
    ok = True
    prev = np.ones(cfg.m_cells, dtype=bool)
    for t in range(spec.trace_segments):
        for m in range(cfg.m_cells):
            th = ths[m].gamma_l if prev[m] else ths[m].gamma_u
            if bool(actions[t, m]) != (residuals[t, m] > th):
                ok = False
        prev = actions[t]
    result.checks.append(("trace follows the dual-threshold rule", ok))
    return result


def _run_arrival_sets(config, spec, cache_dir) -> ExperimentResult:
    result = ExperimentResult(
        kind="arrival-sets",
        columns=["set", "delta_optimal", "delta_index", "delta_greedy", "delta_uniform",
                 "delta_roundrobin"],
        rows=[],
    )
    for set_name in spec.arrival_sets or sorted(TABLE1_PROB_SETS):
        cfg = _with_prob_set(config, set_name)
        k, deltas, _, note, checks = _sweep_point(cfg, cfg.k_max_off, spec, cache_dir)
        result.rows.append(
            [set_name, deltas["optimal"], deltas["index"], deltas["greedy"],
             deltas["uniform"], deltas["roundrobin"]]
        )
        if note:
            result.notes.append(f"{set_name}: {note}")
        result.checks.extend((f"{set_name}: {name}", ok) for name, ok in checks)
    return result


def _run_switch_power(config, spec, cache_dir) -> ExperimentResult:
    result = ExperimentResult(
        kind="switch-power",
        columns=["p_switch", "delta_optimal", "delta_greedy", "greedy_vs_optimal_pct"],
        rows=[],
    )
    values = spec.p_switch_values or [config.power.p_switch]
    for p_sw in values:
        cfg = _with_p_switch(config, p_sw)
        bound = _bound(cfg)
        try:
            solved = _solve_cached(cfg, spec.solver_budget, cache_dir)
        except CapacityError as exc:
            result.notes.append(f"p_switch={p_sw}: optimal unavailable ({exc})")
            result.rows.append([p_sw, float("nan"), float("nan"), float("nan")])
            continue
        opt, greedy = paired_run(
            cfg,
            [OptimalPolicy(solved), GreedyPolicy(cfg)],
            spec.segments,
            spec.seed,
            ["optimal", "greedy"],
        )
        gap = (greedy.avg_cost - opt.avg_cost) / opt.avg_cost * 100.0
        result.rows.append(
            [p_sw, delta_metric(opt.avg_cost, bound), delta_metric(greedy.avg_cost, bound), gap]
        )
        result.checks.append(
            (f"p_switch={p_sw}: bound below both policies",
             min(opt.avg_cost, greedy.avg_cost) + max(opt.ci_halfwidth, greedy.ci_halfwidth)
             >= bound)
        )
    return result


def _run_composition(config, spec, cache_dir) -> ExperimentResult:
    result = ExperimentResult(
        kind="composition",
        columns=["policy", "static_W", "dynamic_W", "switch_W", "extra_W"],
        rows=[],
    )
    policies = []
    labels = []
    try:
        solved = _solve_cached(config, spec.solver_budget, cache_dir)
        policies.append(OptimalPolicy(solved))
        labels.append("optimal")
    except CapacityError as exc:
        result.notes.append(f"optimal unavailable ({exc})")
    policies += [_index_policy(config), GreedyPolicy(config), UniformPolicy(config),
                 RoundRobinPolicy(config)]
    labels += ["index", "greedy", "uniform", "round_robin"]
    results = paired_run(config, policies, spec.segments, spec.seed, labels)
    for r in results:
        comp = r.composition
        result.rows.append([r.label, comp["static"], comp["dynamic"], comp["switch"],
                            comp["extra"]])
    bound = _bound(config)
    result.checks.append(
        ("bound below every simulated policy",
         all(r.avg_cost + r.ci_halfwidth >= bound for r in results))
    )
    return result


def report_summary(result: ExperimentResult) -> str:
    """Aligned text table of the experiment rows plus notes and check status."""
    widths = [
        max(len(str(c)), max((len(format_value(row[i])) for row in result.rows), default=0))
        for i, c in enumerate(result.columns)
    ]
    lines = [
        f"experiment: {result.kind}   runtime: {result.runtime_s:.1f}s",
        "  ".join(c.ljust(w) for c, w in zip(result.columns, widths)),
    ]
    preview = 40
    for row in result.rows[:preview]:
        lines.append("  ".join(format_value(v).ljust(w) for v, w in zip(row, widths)))
    if len(result.rows) > preview:
        lines.append(f"... ({len(result.rows) - preview} more rows in the CSV)")
    for note in result.notes:
        lines.append(f"note: {note}")
    for name, ok in result.checks:
        lines.append(f"check [{'pass' if ok else 'FAIL'}]: {name}")
    if result.csv_path:
        lines.append(f"csv: {result.csv_path}")
    if result.figure_path:
        lines.append(f"figure: {result.figure_path}")
    return "\n".join(lines)
