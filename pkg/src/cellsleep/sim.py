"""Monte-Carlo evaluation of switching policies on the segment-level dynamics.

Residual counts are drawn i.i.d. from each cell's (truncated) residual
distribution, matching the MDP the policies are defined on; per-user event
simulation lives only in the arrivals oracle.  A run is fully determined by
(seed, config, policy): cell streams and any policy-internal randomness are
derived from one seed sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .arrivals import residual_pmf
from .baselines import round_robin_action, uniform_action
from .costs import cost_tables, expected_load
from .greedy import greedy_action
from .index_policy import IndexTable, build_index_table, index_action
from .joint import SolvedMdp
from .model import ActionVector, ClusterConfig, ClusterState

BURN_IN_FRACTION = 0.01
N_BATCHES = 100


class PolicyContractError(RuntimeError):
    """A policy emitted an action violating the OFF budget."""


@dataclass
class SimResult:
    """Long-run averages from one simulated run."""

    avg_cost: float
    ci_halfwidth: float
    segments: int
    composition: dict[str, float]  # average watts: static / dynamic / switch / extra
    on_fraction: np.ndarray  # per cell, over retained segments
    label: str = ""

    def __post_init__(self):
        if self.ci_halfwidth < 0:
            raise ValueError("ci_halfwidth must be >= 0")
        if any(v < -1e-12 for v in self.composition.values()):
            raise ValueError("composition parts must be >= 0")


# ---------------------------------------------------------------------------
# policies: callables (state, t) -> ActionVector, with an optional reset(rng)
# hook for internal randomness


class AlwaysOnPolicy:
    def __init__(self, config: ClusterConfig):
        self._action = ActionVector([True] * config.m_cells, config.k_max_off)

    def __call__(self, state, t):
        return self._action


class AlwaysOffPolicy:
    def __init__(self, config: ClusterConfig):
        if config.k_max_off != config.m_cells:
            raise ValueError("always-OFF requires K = M")
        self._action = ActionVector([False] * config.m_cells, config.k_max_off)

    def __call__(self, state, t):
        return self._action


class GreedyPolicy:
    """Table-backed greedy decisions, identical to `greedy_action` (same cost
    tables, same ordering of ties) but without per-segment cost evaluation."""

    def __init__(self, config: ClusterConfig):
        self.config = config
        self.k = config.k_max_off
        tabs = [
            cost_tables(c, config.power, config.cost_fn, config.segment_duration, config.n_th)
            for c in config.cells
        ]
        self._on_stay = np.array([t.on_stay for t in tabs])
        self._on_switch = np.array([t.on_switch for t in tabs])
        self._off = np.array([t.off for t in tabs])
        self._cells = np.arange(config.m_cells)

    def __call__(self, state, t):
        n = np.asarray(state.residual_users)
        prev = np.asarray(state.prev_on)
        on_cost = np.where(prev, self._on_stay[self._cells, n], self._on_switch[self._cells, n])
        savings = on_cost - self._off[self._cells, n]
        order = np.argsort(-savings, kind="stable")
        on = [True] * len(n)
        for i in order[: self.k]:
            if savings[i] >= 0:
                on[int(i)] = False
        return ActionVector(on, self.k)


class OptimalPolicy:
    def __init__(self, solved: SolvedMdp):
        self.solved = solved

    def __call__(self, state, t):
        return self.solved.policy_action(state)


class IndexPolicy:
    def __init__(self, config: ClusterConfig, tables: list[IndexTable] | None = None):
        self.k_max_off = config.k_max_off
        if tables is None:
            cache: dict[str, IndexTable] = {}
            tables = []
            for cell in config.cells:
                key = repr((cell.arrivals.rates, cell.arrivals.probs, cell.mean_service_time))
                if key not in cache:
                    cache[key] = build_index_table(
                        cell, config.power, config.cost_fn, config.segment_duration, config.n_th
                    )
                tables.append(cache[key])
        self.tables = tables

    def __call__(self, state, t):
        return index_action(state, self.tables, self.k_max_off)


class UniformPolicy:
    def __init__(self, config: ClusterConfig):
        self.m = config.m_cells
        self.k = config.k_max_off
        self._rng = np.random.default_rng(0)

    def reset(self, rng: np.random.Generator):
        self._rng = rng

    def __call__(self, state, t):
        return uniform_action(self.m, self.k, self._rng)


class RoundRobinPolicy:
    def __init__(self, config: ClusterConfig):
        self.m = config.m_cells
        self.k = config.k_max_off

    def __call__(self, state, t):
        return round_robin_action(t, self.m, self.k)


# ---------------------------------------------------------------------------


def draw_residual_streams(config: ClusterConfig, segments: int, seed) -> np.ndarray:
    """(segments, M) residual counts; one independent substream per cell."""
    ss = np.random.SeedSequence(seed)
    cell_seeds = ss.spawn(config.m_cells)
    out = np.empty((segments, config.m_cells), dtype=np.int64)
    for m, cell in enumerate(config.cells):
        pmf = residual_pmf(cell, config.segment_duration, config.n_th)
        rng = np.random.default_rng(cell_seeds[m])
        out[:, m] = pmf.sample(rng, segments)
    return out


def simulate_actions(
    config: ClusterConfig, policy, residuals: np.ndarray, policy_seed
) -> np.ndarray:
    """Drive the policy along a residual stream; returns (segments, M) booleans."""
    segments, m = residuals.shape
    if hasattr(policy, "reset"):
        policy.reset(np.random.default_rng(policy_seed))
    min_on = m - config.k_max_off
    actions = np.empty((segments, m), dtype=bool)
    prev = tuple([True] * m)
    for t in range(segments):
        state = ClusterState(prev, tuple(int(n) for n in residuals[t]))
        act = policy(state, t)
        on = tuple(act.on) if isinstance(act, ActionVector) else tuple(bool(a) for a in act)
        if sum(on) < min_on:
            raise PolicyContractError(
                f"policy turned {m - sum(on)} cells off at t={t}, budget is {config.k_max_off}"
            )
        actions[t] = on
        prev = on
    return actions


def _accumulate(config: ClusterConfig, residuals, actions, label) -> SimResult:
    segments, m = residuals.shape
    seg = config.segment_duration
    power = config.power
    cost = np.zeros(segments)
    static_w = np.zeros(segments)
    dynamic_w = np.zeros(segments)
    switch_w = np.zeros(segments)
    extra_w = np.zeros(segments)
    prev = np.ones((segments, m), dtype=bool)
    prev[1:] = actions[:-1]
    for i, cell in enumerate(config.cells):
        tab = cost_tables(cell, power, config.cost_fn, seg, config.n_th)
        n = residuals[:, i]
        a = actions[:, i]
        p = prev[:, i]
        cost += np.where(a & p, tab.on_stay[n], np.where(a, tab.on_switch[n], tab.off[n]))
        load = expected_load(cell, seg, n)
        static_w += np.where(a, power.p_static, 0.0)
        dynamic_w += np.where(a, load * power.p_d, 0.0)
        switch_w += np.where(a & ~p, power.p_switch, 0.0)
        extra_w += np.where(a, 0.0, load * power.p_e)
    burn = int(BURN_IN_FRACTION * segments)
    kept = cost[burn:]
    avg = float(kept.mean())
    n_batches = min(N_BATCHES, len(kept))
    usable = len(kept) - len(kept) % n_batches
    batches = kept[:usable].reshape(n_batches, -1).mean(axis=1)
    if n_batches > 1 and usable:
        t_crit = stats.t.ppf(0.975, n_batches - 1)
        ci = float(t_crit * batches.std(ddof=1) / np.sqrt(n_batches))
    else:
        ci = 0.0
    composition = {
        "static": float(static_w[burn:].mean()),
        "dynamic": float(dynamic_w[burn:].mean()),
        "switch": float(switch_w[burn:].mean()),
        "extra": float(extra_w[burn:].mean()),
    }
    return SimResult(
        avg_cost=avg,
        ci_halfwidth=ci,
        segments=segments,
        composition=composition,
        on_fraction=actions[burn:].mean(axis=0),
        label=label,
    )


def run_policy(config: ClusterConfig, policy, segments: int, seed, label: str = "") -> SimResult:
    """Simulate one policy; deterministic in (seed, config, policy)."""
    if segments < 1:
        raise ValueError("segments must be >= 1")
    residuals = draw_residual_streams(config, segments, seed)
    policy_seed = np.random.SeedSequence(seed).spawn(config.m_cells + 1)[-1]
    actions = simulate_actions(config, policy, residuals, policy_seed)
    return _accumulate(config, residuals, actions, label)


def paired_run(
    config: ClusterConfig, policies: list, segments: int, seed, labels: list[str] | None = None
) -> list[SimResult]:
    """Evaluate several policies on one shared residual stream (common random
    numbers); policy-internal randomness still gets independent substreams."""
    if len(policies) < 2:
        raise ValueError("paired_run needs at least two policies")
    residuals = draw_residual_streams(config, segments, seed)
    policy_seeds = np.random.SeedSequence(seed).spawn(config.m_cells + len(policies))
    results = []
    for i, policy in enumerate(policies):
        label = labels[i] if labels else getattr(type(policy), "__name__", str(i))
        actions = simulate_actions(config, policy, residuals, policy_seeds[config.m_cells + i])
        results.append(_accumulate(config, residuals, actions, label))
    return results


def delta_metric(avg_cost: float, bound: float) -> float:
    """Percentage excess of a policy's average cost over the lower bound."""
    if bound <= 0:
        raise ValueError("lower bound must be positive")
    return (avg_cost - bound) / bound * 100.0
