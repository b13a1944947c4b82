"""State-independent policies, their closed-form costs, and the cost lower bound."""
from __future__ import annotations

import numpy as np

from .arrivals import ResidualPmf
from .costs import AnticipatedCosts, cost_tables, delta_2
from .greedy import greedy_thresholds
from .model import ActionVector, ClusterConfig


def uniform_action(m_cells: int, k_off: int, rng: np.random.Generator) -> ActionVector:
    """Turn exactly k_off cells off, uniformly over all subsets of that size."""
    on = [True] * m_cells
    for i in rng.choice(m_cells, size=k_off, replace=False):
        on[int(i)] = False
    return ActionVector(on, k_off)


def uniform_longrun_cost(config: ClusterConfig, costs: list[AnticipatedCosts]) -> float:
    """Independent uniform draws each segment: P(off) = K/M per cell."""
    r = config.k_max_off / config.m_cells
    return float(
        sum(c.c01 * (1 - r) * r + c.c11 * (1 - r) ** 2 + c.c0 * r for c in costs)
    )


def round_robin_action(t: int, m_cells: int, k_off: int) -> ActionVector:
    """Staggered schedule: cell m is OFF iff (t - m) mod M < K, so each cell
    sleeps K consecutive segments per M-segment cycle and exactly K cells are
    off at any time."""
    on = tuple((t - m) % m_cells >= k_off for m in range(m_cells))
    return ActionVector(on, k_off)


def round_robin_longrun_cost(config: ClusterConfig, costs: list[AnticipatedCosts]) -> float:
    m, k = config.m_cells, config.k_max_off
    if k == 0:
        return float(sum(c.c11 for c in costs))
    if k == m:
        return float(sum(c.c0 for c in costs))
    return float(sum(c.c0 * k + c.c01 + c.c11 * (m - k - 1) for c in costs)) / m


def baseline_difference(config: ClusterConfig, costs: list[AnticipatedCosts]):
    """Round-robin minus uniform long-run cost, with the regimes where the
    uniform policy is provably strictly better."""
    m, k = config.m_cells, config.k_max_off
    if not 0 < k < m:
        raise ValueError("difference analysis applies to 0 < K < M")
    c_diff = float(sum(c.c01 - c.c11 for c in costs))
    diff = (k * k - m * k + m) / (m * m) * c_diff
    predicates = {
        "uniform_strictly_better": diff > 0,
        "extreme_k": k in (1, m - 1),
        "small_cluster": m < 4,
        "switching_cost_positive": config.power.p_switch > 0,
    }
    return diff, predicates


def lower_bound(config: ClusterConfig, pmfs: list[ResidualPmf]) -> float:
    """Relaxation floor on any policy's average cost: every cell pays its OFF
    cost plus the (negative) ON advantage wherever staying ON is cheaper,
    ignoring switching power and the OFF budget."""
    total = 0.0
    for cell, pmf in zip(config.cells, pmfs):
        th = greedy_thresholds(cell, config.power, config.segment_duration)
        tab = cost_tables(cell, config.power, config.cost_fn, config.segment_duration, pmf.n_th)
        support = pmf.support
        d2 = delta_2(support, cell, config.power, config.cost_fn, config.segment_duration)
        c0 = float(pmf.probs @ tab.off)
        mask = support > th.gamma_l
        total += c0 + float(pmf.probs[mask] @ d2[mask])
    return total
