"""Per-cell anticipated power, segment costs, and the threshold helper functions.

A cell that stays ON draws static plus per-user power for its expected load;
turning ON from OFF adds the switching draw; an OFF cell's load is carried by
the fallback server at a higher per-user draw.  The load used everywhere is
the anticipated one: residual users plus the expected number of new arrivals.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrivals import ResidualPmf
from .model import CellParams, CellState, CostFunction, PowerParams, eval_cost, mean_arrival_rate


def expected_load(cell: CellParams, seg: float, residual) -> np.ndarray | float:
    """Anticipated number of users over a segment: residual + mean arrivals."""
    return np.asarray(residual, dtype=float) + mean_arrival_rate(cell) * seg


def anticipated_power(
    state: CellState, action: bool, cell: CellParams, power: PowerParams, seg: float
) -> float:
    """Anticipated watts drawn by one cell over the coming segment."""
    load = float(expected_load(cell, seg, state.residual_users))
    if action:
        watts = power.p_static + load * power.p_d
        if not state.prev_on:
            watts += power.p_switch
        return watts
    return load * power.p_e


def immediate_cost(
    state: CellState,
    action: bool,
    cell: CellParams,
    power: PowerParams,
    f: CostFunction,
    seg: float,
) -> float:
    """Cost of one cell-segment: f applied to the anticipated power."""
    return eval_cost(f, anticipated_power(state, action, cell, power, seg))


@dataclass(frozen=True)
class CostTables:
    """Immediate costs tabulated over residual counts 0..n_th.

    on_stay[n]  : ON action, previously ON
    on_switch[n]: ON action, previously OFF (includes switching power)
    off[n]      : OFF action (fallback server carries the load)
    """

    on_stay: np.ndarray
    on_switch: np.ndarray
    off: np.ndarray

    @property
    def n_th(self) -> int:
        return len(self.off) - 1


def cost_tables(
    cell: CellParams, power: PowerParams, f: CostFunction, seg: float, n_th: int
) -> CostTables:
    load = expected_load(cell, seg, np.arange(n_th + 1))
    return CostTables(
        on_stay=f(power.p_static + load * power.p_d),
        on_switch=f(power.p_static + power.p_switch + load * power.p_d),
        off=f(load * power.p_e),
    )


@dataclass(frozen=True)
class AnticipatedCosts:
    """Expected segment costs under the residual distribution.

    c01: OFF->ON segment, c11: ON->ON segment, c0: OFF segment.
    """

    c01: float
    c11: float
    c0: float

    def __post_init__(self):
        if self.c01 < self.c11 - 1e-9 * max(1.0, abs(self.c11)):
            raise ValueError("c01 < c11: switching power cannot reduce cost")


def anticipated_costs(
    cell: CellParams, power: PowerParams, f: CostFunction, seg: float, pmf: ResidualPmf
) -> AnticipatedCosts:
    tables = cost_tables(cell, power, f, seg, pmf.n_th)
    return AnticipatedCosts(
        c01=float(pmf.probs @ tables.on_switch),
        c11=float(pmf.probs @ tables.on_stay),
        c0=float(pmf.probs @ tables.off),
    )


def g_lower(n, cell: CellParams, power: PowerParams, f: CostFunction, seg: float):
    """OFF-minus-ON cost margin when previously ON; increasing in n for n >= 0."""
    load = expected_load(cell, seg, n)
    return f(load * power.p_e) - f(power.p_static + load * power.p_d)


def g_upper(n, cell: CellParams, power: PowerParams, f: CostFunction, seg: float):
    """OFF-minus-ON cost margin when previously OFF (ON pays switching too)."""
    load = expected_load(cell, seg, n)
    return f(load * power.p_e) - f(power.p_static + power.p_switch + load * power.p_d)


def delta_1(n, cell: CellParams, power: PowerParams, f: CostFunction, seg: float):
    """Cost advantage of having been ON when turning ON: <= 0 always."""
    load = expected_load(cell, seg, n)
    return f(power.p_static + load * power.p_d) - f(
        power.p_static + power.p_switch + load * power.p_d
    )


def delta_2(n, cell: CellParams, power: PowerParams, f: CostFunction, seg: float):
    """Switch-free ON cost minus OFF cost; non-increasing in n when p_e > p_d."""
    load = expected_load(cell, seg, n)
    return f(power.p_static + load * power.p_d) - f(load * power.p_e)


def invert_monotone_margin(
    gfun, rhs: float, n_th: int, tol: float = 1e-9
) -> float:
    """Solve gfun(x) = rhs for real x, where gfun is non-decreasing on [0, n_th].

    Roots above n_th clamp to n_th (the cell is OFF at every tracked count).
    When rhs lies below gfun(0) the true root is negative; all such thresholds
    are behaviourally "always ON", but a continuous sub-zero value is returned
    by extending gfun linearly with its slope at 0 so that threshold ordering
    and monotonicity in the OFF-penalty remain visible to diagnostics.
    """
    lo, hi = 0.0, float(n_th)
    g_lo, g_hi = float(gfun(lo)), float(gfun(hi))
    if rhs >= g_hi:
        return float(n_th)
    if rhs < g_lo:
        d = 1e-6
        slope = (float(gfun(d)) - g_lo) / d
        return (rhs - g_lo) / max(slope, 1e-12)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if float(gfun(mid)) <= rhs:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
