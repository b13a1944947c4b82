"""Whittle-style index policy built on the decoupled single-cell MDP.

The cluster constraint is relaxed by charging a penalty eps per OFF segment
and solving each cell alone.  The decoupled optimum is a dual-threshold rule;
the index of a state is the penalty at which ON and OFF become equally
attractive there, found by gradient descent on the squared threshold gap.
At runtime the cluster turns OFF the cells with the largest non-negative
indexes, at most K of them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrivals import residual_pmf
from .costs import cost_tables, delta_1, g_lower, g_upper, invert_monotone_margin
from .model import (
    ActionVector,
    CellParams,
    CellState,
    ClusterState,
    CostFunction,
    PowerParams,
)


class DecoupledConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


@dataclass
class DecoupledSolution:
    """Converged decoupled MDP at a fixed OFF penalty.

    h is the relative value table over states (prev_on in {0, 1}) x (residual
    count), pinned to 0 at (ON, 0).  sigma1/sigma0 are the expected next-step
    values after an ON/OFF action; gamma_l/gamma_u are the real-valued
    thresholds characterising the optimal dual-threshold rule.
    """

    eps: float
    gain: float
    h: np.ndarray  # shape (2, n_th + 1); row 1 = prev ON, row 0 = prev OFF
    sigma1: float
    sigma0: float
    gamma_l: float
    gamma_u: float
    iterations: int

    @property
    def h_on(self) -> np.ndarray:
        return self.h[1]

    @property
    def h_off(self) -> np.ndarray:
        return self.h[0]

    def action_on(self, state: CellState) -> bool:
        """Optimal action at a state: ON iff the residual count clears the
        threshold for the previous ON/OFF condition (ties choose OFF)."""
        th = self.gamma_l if state.prev_on else self.gamma_u
        return state.residual_users > th


def decoupled_rvia(
    cell: CellParams,
    power: PowerParams,
    f: CostFunction,
    seg: float,
    eps: float,
    n_th: int,
    *,
    warm: tuple[float, float] | None = None,
    tol: float = 1e-11,
    max_iters: int = 500_000,
) -> DecoupledSolution:
    """Solve the single-cell average-cost MDP with OFF penalty eps.

    The next state's residual count is an i.i.d. draw regardless of the
    action, so the Bellman equation closes over just two continuation values
    (sigma1 after ON, sigma0 after OFF); iterating those to a fixed point is
    the relative value iteration with reference state (ON, 0).
    """
    if not np.isfinite(eps):
        raise ValueError("eps must be finite")
    tab = cost_tables(cell, power, f, seg, n_th)
    pmf = residual_pmf(cell, seg, n_th)
    off_pen = tab.off + eps
    s1, s0 = warm if warm is not None else (0.0, 0.0)
    g = 0.0
    for it in range(1, max_iters + 1):
        h_on = np.minimum(tab.on_stay + s1, off_pen + s0)
        h_off = np.minimum(tab.on_switch + s1, off_pen + s0)
        g_new = float(h_on[0])
        s1_new = float(pmf.probs @ h_on) - g_new
        s0_new = float(pmf.probs @ h_off) - g_new
        resid = max(abs(s1_new - s1), abs(s0_new - s0), abs(g_new - g))
        s1, s0, g = s1_new, s0_new, g_new
        if resid < tol * max(1.0, abs(g)):
            break
    else:
        raise DecoupledConvergenceError("decoupled RVIA did not converge", resid)

    rhs = -eps + s1 - s0
    gamma_l = invert_monotone_margin(lambda n: g_lower(n, cell, power, f, seg), rhs, n_th)
    gamma_u = invert_monotone_margin(lambda n: g_upper(n, cell, power, f, seg), rhs, n_th)
    h = np.stack([np.minimum(tab.on_switch + s1, off_pen + s0) - g,
                  np.minimum(tab.on_stay + s1, off_pen + s0) - g])
    return DecoupledSolution(
        eps=eps, gain=g, h=h, sigma1=s1, sigma0=s0,
        gamma_l=gamma_l, gamma_u=gamma_u, iterations=it,
    )


def h_difference_profile(sol: DecoupledSolution) -> np.ndarray:
    """h(prev ON, n) - h(prev OFF, n): zero below gamma_l, the switching
    advantage above gamma_u, and a constant-offset bridge in between."""
    return sol.h_on - sol.h_off


def _gamma_for_state(sol: DecoupledSolution, prev_on: bool) -> float:
    return sol.gamma_l if prev_on else sol.gamma_u


def compute_index(
    cell: CellParams,
    power: PowerParams,
    f: CostFunction,
    seg: float,
    state: CellState,
    n_th: int,
    *,
    xi: float = 1e-4,
    beta: float = 1.0,
    max_iters: int = 500,
) -> float:
    """OFF-penalty at which the state is indifferent between ON and OFF.

    Gradient descent on F(eps) = (Gamma(eps) - n)^2 / 2 with the approximate
    gradient n - Gamma(eps), where Gamma is the threshold matching the
    state's previous condition.  The step size starts at `beta`, halves when
    the residual changes sign, and doubles while progress is slow, since the
    threshold's sensitivity to eps varies by orders of magnitude across cost
    functions.  Positive index: the cell prefers OFF at zero penalty.
    """
    if not 0 <= state.residual_users <= n_th:
        raise ValueError("state residual count outside [0, n_th]")
    n = float(state.residual_users)
    eps = 0.0
    step = beta
    warm: tuple[float, float] | None = None
    sol = decoupled_rvia(cell, power, f, seg, eps, n_th, warm=warm)
    warm = (sol.sigma1, sol.sigma0)
    gamma = _gamma_for_state(sol, state.prev_on)
    last_r = None
    for _ in range(max_iters):
        r = n - gamma
        if 0.5 * r * r <= xi:
            return eps
        if last_r is not None:
            if r * last_r < 0:
                step *= 0.5
            elif abs(r) > 0.5 * abs(last_r):
                step *= 2.0
        eps = eps - step * r
        sol = decoupled_rvia(cell, power, f, seg, eps, n_th, warm=warm)
        warm = (sol.sigma1, sol.sigma0)
        gamma = _gamma_for_state(sol, state.prev_on)
        last_r = r
    raise DecoupledConvergenceError("index gradient descent hit the iteration cap",
                                    abs(n - gamma))


@dataclass(frozen=True)
class IndexTable:
    """Indexes for every state of one cell: eps[prev_on][n]."""

    eps: np.ndarray  # shape (2, n_th + 1); row 1 = prev ON
    slack: float | None = None

    def __post_init__(self):
        on, off = self.eps[1], self.eps[0]
        slack = self.slack
        if slack is None:
            # the gradient descent stops within a threshold-space tolerance;
            # in index units that noise scales with the local index spacing
            spacing = max(
                float(np.abs(np.diff(on)).max(initial=0.0)),
                float(np.abs(np.diff(off)).max(initial=0.0)),
            )
            slack = max(1e-9, 0.05 * spacing)
            object.__setattr__(self, "slack", slack)
        if np.any(off - on < -slack):
            raise ValueError("index table violates eps(prev OFF) >= eps(prev ON)")
        for row in (on, off):
            if np.any(np.diff(row) > slack):
                raise ValueError("index table must be non-increasing in the residual count")

    @property
    def n_th(self) -> int:
        return self.eps.shape[1] - 1

    def lookup(self, state: CellState) -> float:
        return float(self.eps[int(state.prev_on), state.residual_users])


def build_index_table(
    cell: CellParams,
    power: PowerParams,
    f: CostFunction,
    seg: float,
    n_th: int,
    *,
    xi: float = 1e-4,
) -> IndexTable:
    eps = np.empty((2, n_th + 1))
    for prev in (True, False):
        for n in range(n_th + 1):
            eps[int(prev), n] = compute_index(
                cell, power, f, seg, CellState(prev, n), n_th, xi=xi
            )
    return IndexTable(eps)


def index_action(state: ClusterState, tables: list[IndexTable], k_max_off: int) -> ActionVector:
    """Turn OFF the cells whose index is non-negative and among the K largest;
    ties at the cut break toward the lower cell index."""
    m = state.m_cells
    eps = np.array([tables[i].lookup(state.cell(i)) for i in range(m)])
    order = np.argsort(-eps, kind="stable")
    off = set()
    for i in order[:k_max_off]:
        if eps[i] >= 0:
            off.add(int(i))
    return ActionVector(tuple(i not in off for i in range(m)), k_max_off)


def flip_epsilon(
    cell: CellParams,
    power: PowerParams,
    f: CostFunction,
    seg: float,
    state: CellState,
    n_th: int,
    *,
    tol: float = 1e-6,
) -> float:
    """Bisection oracle for the index: the penalty at which the decoupled
    optimal action at `state` flips from OFF to ON.

    Independent of the gradient-descent path: each probe solves the decoupled
    MDP and reads the argmin action at the state directly.
    """
    tab = cost_tables(cell, power, f, seg, n_th)
    pmf = residual_pmf(cell, seg, n_th)

    def action_on(eps, warm):
        sol = decoupled_rvia(cell, power, f, seg, eps, n_th, warm=warm)
        on_cost = tab.on_stay if state.prev_on else tab.on_switch
        q_on = on_cost[state.residual_users] + sol.sigma1
        q_off = tab.off[state.residual_users] + eps + sol.sigma0
        return bool(q_on < q_off), (sol.sigma1, sol.sigma0)

    # dominance-based initial bracket, then geometric expansion as a guard
    e_const = float(pmf.probs @ delta_1(pmf.support, cell, power, f, seg))
    lo = min(0.0, e_const - float(g_lower(n_th, cell, power, f, seg))) - 1.0
    hi = max(0.0, -float(g_upper(0.0, cell, power, f, seg))) + 1.0
    warm = None
    on_lo, warm = action_on(lo, warm)
    for _ in range(80):
        if not on_lo:
            break
        lo = lo * 2 - 1
        on_lo, warm = action_on(lo, warm)
    else:
        raise RuntimeError("could not bracket the flip point from below")
    on_hi, warm = action_on(hi, warm)
    for _ in range(80):
        if on_hi:
            break
        hi = hi * 2 + 1
        on_hi, warm = action_on(hi, warm)
    else:
        raise RuntimeError("could not bracket the flip point from above")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        on_mid, warm = action_on(mid, warm)
        if on_mid:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass
class IndexabilityReport:
    """Threshold and value traces over a penalty grid, with the monotonicity
    and bound checks that certify indexability numerically."""

    eps_grid: np.ndarray
    gamma_l: np.ndarray
    gamma_u: np.ndarray
    h_value: np.ndarray  # Sigma_1 - Sigma_0 at each penalty
    e_bound: float
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def indexability_scan(
    cell: CellParams,
    power: PowerParams,
    f: CostFunction,
    seg: float,
    eps_grid,
    n_th: int,
    *,
    tol: float = 1e-6,
) -> IndexabilityReport:
    """Sweep the OFF penalty and record both thresholds and H = Sigma1 - Sigma0.

    Checks: both threshold sequences non-increasing (within `tol`), the lower
    threshold strictly below the upper when switching power is positive, and
    E <= H <= 0 where E is the expected switching disadvantage.
    """
    grid = np.asarray(sorted(eps_grid), dtype=float)
    gls, gus, hs = [], [], []
    warm = None
    for eps in grid:
        sol = decoupled_rvia(cell, power, f, seg, float(eps), n_th, warm=warm)
        warm = (sol.sigma1, sol.sigma0)
        gls.append(sol.gamma_l)
        gus.append(sol.gamma_u)
        hs.append(sol.sigma1 - sol.sigma0)
    gls, gus, hs = np.array(gls), np.array(gus), np.array(hs)
    pmf = residual_pmf(cell, seg, n_th)
    e_bound = float(pmf.probs @ delta_1(pmf.support, cell, power, f, seg))

    violations = []
    for name, arr in (("gamma_l", gls), ("gamma_u", gus)):
        bad = np.nonzero(np.diff(arr) > tol)[0]
        for i in bad:
            violations.append(
                f"{name} increases at eps={grid[i]:.6g} -> {grid[i + 1]:.6g}: "
                f"{arr[i]:.9g} -> {arr[i + 1]:.9g}"
            )
    if power.p_switch > 0:
        bad = np.nonzero(gls >= gus)[0]
        for i in bad:
            violations.append(f"gamma_l >= gamma_u at eps={grid[i]:.6g}")
    scale = max(1.0, abs(e_bound))
    for i, h in enumerate(hs):
        if h > 1e-9 * scale or h < e_bound - 1e-9 * scale:
            violations.append(f"H out of [E, 0] at eps={grid[i]:.6g}: H={h:.6g}, E={e_bound:.6g}")
    return IndexabilityReport(grid, gls, gus, hs, e_bound, violations)
