"""Exact solution of the joint M-cell average-cost MDP.

The transition kernel factorises: the next residual counts are i.i.d. draws
from each cell's residual distribution, and the next "previously ON" bits
equal the action taken.  The expected continuation value of a state therefore
depends on the chosen action only, so the Bellman fixed point is fully
described by one continuation value per feasible action pattern plus the
gain.  `rvia_solve` iterates on those pattern values with Howard policy
iteration (each improvement step is one vectorised pass over the joint
residual grid); `rvia_solve_dense` is the plain synchronous relative value
iteration over the explicitly enumerated state space, kept as a slow
cross-checking reference for small instances.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .arrivals import ResidualPmf, residual_pmf
from .costs import CostTables, cost_tables
from .model import ActionVector, ClusterConfig, ClusterState

SAVE_FORMAT_VERSION = 1


class CapacityError(RuntimeError):
    """The instance exceeds the configured state-space budget."""


class ConvergenceError(RuntimeError):
    """The solver did not reach the target residual; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


def enumerate_actions(m_cells: int, k_max_off: int) -> list[ActionVector]:
    """All ON/OFF vectors with at most k_max_off zeros, in lexicographic order."""
    if not 0 <= k_max_off <= m_cells:
        raise ValueError("need 0 <= k_max_off <= m_cells")
    return [
        ActionVector(bits, k_max_off)
        for bits in product((False, True), repeat=m_cells)
        if bits.count(False) <= k_max_off
    ]


def _solver_action_order(m_cells: int, k_max_off: int) -> list[ActionVector]:
    # argmin scans actions in this order and keeps the first minimum, which
    # implements the tie-break: more OFF cells first, then lexicographic.
    return sorted(enumerate_actions(m_cells, k_max_off), key=lambda a: (sum(a.on), a.on))


class JointStateIndex:
    """Dense bijection between cluster states and integers (mixed radix per cell)."""

    def __init__(self, m_cells: int, n_th: int):
        self.m_cells = m_cells
        self.n_th = n_th
        self.radix = 2 * (n_th + 1)
        self.size = self.radix ** m_cells

    def encode(self, state: ClusterState) -> int:
        idx = 0
        for m in range(self.m_cells - 1, -1, -1):
            cell = int(state.prev_on[m]) * (self.n_th + 1) + state.residual_users[m]
            idx = idx * self.radix + cell
        return idx

    def decode(self, idx: int) -> ClusterState:
        prev, resid = [], []
        for _ in range(self.m_cells):
            cell = idx % self.radix
            idx //= self.radix
            prev.append(cell >= self.n_th + 1)
            resid.append(cell % (self.n_th + 1))
        return ClusterState(tuple(prev), tuple(resid))


def transition_prob(
    next_state: ClusterState,
    cur_state: ClusterState,
    action: ActionVector,
    pmfs: list[ResidualPmf],
) -> float:
    """Joint transition probability: the action fixes the ON/OFF part of the
    next state and the residual counts are independent fresh draws."""
    p = 1.0
    for m in range(len(action)):
        if next_state.prev_on[m] != action[m]:
            return 0.0
        p *= pmfs[m].probs[next_state.residual_users[m]]
    return float(p)


@dataclass
class SolvedMdp:
    """Solved joint MDP: gain, per-action continuation values, implicit policy.

    The relative value of any state and the optimal action at it are derived
    on demand from the continuation values; `h` is pinned to 0 at the
    reference state (all cells ON, zero residuals).
    """

    config: ClusterConfig
    gain: float
    actions: list[ActionVector]
    continuation: np.ndarray  # one value per action, in `actions` order
    iterations: int
    residual_span: float
    method: str
    tables: list[CostTables] = field(repr=False)

    def __post_init__(self):
        m = self.config.m_cells
        self._act_mat = np.array([a.on for a in self.actions], dtype=float)
        self._on_stay = np.array([t.on_stay for t in self.tables])
        self._on_switch = np.array([t.on_switch for t in self.tables])
        self._off = np.array([t.off for t in self.tables])
        self._cells = np.arange(m)

    @property
    def state_count(self) -> int:
        return len(self.actions) * (self.config.n_th + 1) ** self.config.m_cells

    def _scores(self, state: ClusterState) -> np.ndarray:
        n = np.asarray(state.residual_users)
        prev = np.asarray(state.prev_on)
        on_cost = np.where(prev, self._on_stay[self._cells, n], self._on_switch[self._cells, n])
        off_cost = self._off[self._cells, n]
        return off_cost.sum() + self._act_mat @ (on_cost - off_cost) + self.continuation

    def policy_action(self, state: ClusterState) -> ActionVector:
        return self.actions[int(np.argmin(self._scores(state)))]

    def h(self, state: ClusterState) -> float:
        return float(self._scores(state).min() - self.gain)

    def iter_states(self):
        n1 = self.config.n_th + 1
        patterns = sorted({a.on for a in self.actions})
        for p in patterns:
            for resid in product(range(n1), repeat=self.config.m_cells):
                yield ClusterState(p, resid)

    def save(self, path: str):
        tmp = f"{path}.tmp-{os.getpid()}"
        np.savez(
            tmp,
            version=SAVE_FORMAT_VERSION,
            config=self.config.canonical(),
            gain=self.gain,
            continuation=self.continuation,
            actions=np.array([a.on for a in self.actions], dtype=bool),
            iterations=self.iterations,
            residual_span=self.residual_span,
            method=self.method,
        )
        os.replace(tmp + ".npz", path)

    @classmethod
    def load(cls, path: str, config: ClusterConfig) -> "SolvedMdp":
        with np.load(path, allow_pickle=False) as data:
            if int(data["version"]) != SAVE_FORMAT_VERSION:
                raise ValueError(f"unsupported solution format version {data['version']}")
            if str(data["config"]) != config.canonical():
                raise ValueError("cached solution was computed for a different configuration")
            actions = [ActionVector(tuple(row), config.k_max_off) for row in data["actions"]]
            tables = _config_tables(config)
            return cls(
                config=config,
                gain=float(data["gain"]),
                actions=actions,
                continuation=np.array(data["continuation"]),
                iterations=int(data["iterations"]),
                residual_span=float(data["residual_span"]),
                method=str(data["method"]),
                tables=tables,
            )


def _config_tables(config: ClusterConfig) -> list[CostTables]:
    return [
        cost_tables(c, config.power, config.cost_fn, config.segment_duration, config.n_th)
        for c in config.cells
    ]


def _config_pmfs(config: ClusterConfig) -> list[ResidualPmf]:
    return [residual_pmf(c, config.segment_duration, config.n_th) for c in config.cells]


def _quadrature_support(pmf: ResidualPmf, table: CostTables, tail: float):
    """Per-cell expectation grid, optionally cut where the pmf tail is below
    `tail`.  The lumped top bin carries the tail mass and tail-conditional
    mean costs, so single-action expectations stay exact; only states in the
    lumped tail (probability < tail) can be attributed to a wrong argmin."""
    probs = pmf.probs
    if tail <= 0:
        cut = pmf.n_th
    else:
        cdf = np.cumsum(probs)
        cut = int(np.searchsorted(cdf, 1.0 - tail))
        cut = min(max(cut, 1), pmf.n_th)
    w = probs[: cut + 1].copy()
    tail_mass = probs[cut:].sum()
    w[cut] = tail_mass

    def lump(vec):
        v = vec[: cut + 1].astype(float).copy()
        if tail_mass > 0:
            v[cut] = float(probs[cut:] @ vec[cut:]) / tail_mass
        return v

    return w, lump(table.on_stay), lump(table.on_switch), lump(table.off)


def rvia_solve(
    config: ClusterConfig,
    *,
    max_states: int | None = 10_000_000,
    tol: float = 1e-9,
    max_improvements: int = 60,
    quadrature_tail: float = 1e-12,
    full_grid_limit: int = 2_000_000,
    vi_fallback_sweeps: int = 20_000,
) -> SolvedMdp:
    """Solve the joint MDP exactly via pattern-space policy iteration.

    Raises CapacityError if the formal state count exceeds max_states and
    ConvergenceError if neither policy iteration nor the damped fallback
    reaches the residual tolerance (relative to the gain scale).
    """
    m, k = config.m_cells, config.k_max_off
    actions = _solver_action_order(m, k)
    n_actions = len(actions)
    n1 = config.n_th + 1
    state_count = n_actions * n1 ** m
    if max_states is not None and state_count > max_states:
        raise CapacityError(
            f"joint MDP has {state_count} states, above the budget {max_states}; "
            "raise max_states or reduce n_th"
        )
    tables = _config_tables(config)
    pmfs = _config_pmfs(config)

    if n1 ** m <= full_grid_limit:
        quadrature_tail = 0.0
    supports = [_quadrature_support(p, t, quadrature_tail) for p, t in zip(pmfs, tables)]
    weights = [s[0] for s in supports]
    wt = weights[0]
    for w in weights[1:]:
        wt = np.multiply.outer(wt, w)
    wt_flat = wt.ravel()

    act_bits = [a.on for a in actions]
    # C(ref, a) uses the exact (uncut) tables at zero residuals
    ref_costs = np.array(
        [
            sum(tables[i].on_stay[0] if a[i] else tables[i].off[0] for i in range(m))
            for a in act_bits
        ]
    )

    def ref_info(W):
        scores = ref_costs + W
        ia = int(np.argmin(scores))
        return float(scores[ia]), ia

    def grid_pass(W):
        """One improvement pass: Phi[p] = E[min_a(C((p, n), a) + W[a])] and the
        argmin-choice probabilities q[p, a], for every prev pattern p."""
        phi = np.zeros(n_actions)
        q = np.zeros((n_actions, n_actions))
        shape = wt.shape
        best = np.empty(shape)
        tmp = np.empty(shape)
        arg = np.empty(shape, dtype=np.int16)
        for ip, p in enumerate(act_bits):
            on_vecs = [s[1] if p[i] else s[2] for i, s in enumerate(supports)]
            off_vecs = [s[3] for s in supports]
            best.fill(np.inf)
            arg.fill(0)
            prefix_memo: dict[tuple, np.ndarray] = {}
            for ia, a in enumerate(act_bits):
                if m == 1:
                    np.copyto(tmp, (on_vecs[0] if a[0] else off_vecs[0]) + W[ia])
                else:
                    key = a[:-1]
                    small = prefix_memo.get(key)
                    if small is None:
                        small = np.zeros(())
                        for i in range(m - 1):
                            small = np.add.outer(small, on_vecs[i] if a[i] else off_vecs[i])
                        prefix_memo[key] = small
                    last = (on_vecs[-1] if a[-1] else off_vecs[-1]) + W[ia]
                    np.add(small[..., None], last, out=tmp)
                mask = tmp < best
                np.copyto(arg, ia, where=mask)
                np.minimum(best, tmp, out=best)
            phi[ip] = float(best.ravel() @ wt_flat)
            q[ip] = np.bincount(arg.ravel(), weights=wt_flat, minlength=n_actions)
        return phi, q

    W = np.zeros(n_actions)
    gain = 0.0
    iterations = 0
    span = np.inf
    converged = False
    for _ in range(max_improvements):
        iterations += 1
        phi, q = grid_pass(W)
        g_ref, ia_ref = ref_info(W)
        resid = phi - g_ref - W
        span = float(resid.max() - resid.min())
        scale = max(1.0, abs(g_ref))
        if float(np.abs(resid).max()) < tol * scale:
            gain = g_ref
            converged = True
            break
        # policy evaluation for the frozen argmin rule:
        #   W[p] + g = kappa[p] + q[p] @ W, pinned by h(reference state) = 0
        kappa = phi - q @ W
        sys = np.zeros((n_actions + 1, n_actions + 1))
        rhs = np.zeros(n_actions + 1)
        sys[:n_actions, :n_actions] = np.eye(n_actions) - q
        sys[:n_actions, n_actions] = 1.0
        rhs[:n_actions] = kappa
        sys[n_actions, ia_ref] = 1.0
        sys[n_actions, n_actions] = -1.0
        rhs[n_actions] = -ref_costs[ia_ref]
        try:
            sol = np.linalg.solve(sys, rhs)
        except np.linalg.LinAlgError:
            sol = None
        if sol is None or not np.all(np.isfinite(sol)):
            break  # multichain decision rule; fall back to damped iteration
        W, gain = sol[:n_actions], sol[n_actions]

    if not converged:
        # damped relative value iteration on the continuation values
        for _ in range(vi_fallback_sweeps):
            iterations += 1
            phi, _ = grid_pass(W)
            g_ref, _ = ref_info(W)
            new_w = phi - g_ref
            span = float(np.abs(new_w - W).max())
            W = 0.5 * W + 0.5 * new_w
            gain = g_ref
            if span < tol * max(1.0, abs(g_ref)):
                converged = True
                break
        if not converged:
            raise ConvergenceError("joint RVIA did not converge", span)

    return SolvedMdp(
        config=config,
        gain=float(gain),
        actions=actions,
        continuation=W,
        iterations=iterations,
        residual_span=span,
        method="pattern-policy-iteration",
        tables=tables,
    )


def rvia_solve_dense(
    config: ClusterConfig,
    *,
    tol: float = 1e-8,
    max_sweeps: int = 100_000,
    max_states: int = 200_000,
) -> SolvedMdp:
    """Reference solver: explicit state enumeration and synchronous RVIA sweeps.

    Builds the transition kernel row by row through `transition_prob`; only
    suitable for small instances (M <= 2 or tiny n_th).
    """
    m = config.m_cells
    n1 = config.n_th + 1
    actions = _solver_action_order(m, config.k_max_off)
    n_actions = len(actions)
    patterns = [a.on for a in actions]
    state_count = n_actions * n1 ** m
    if state_count > max_states:
        raise CapacityError(f"dense reference solver limited to {max_states} states")
    pmfs = _config_pmfs(config)
    tables = _config_tables(config)

    states = [
        ClusterState(p, resid) for p in patterns for resid in product(range(n1), repeat=m)
    ]
    ref_idx = states.index(ClusterState(tuple([True] * m), tuple([0] * m)))

    cost = np.empty((len(states), n_actions))
    for si, s in enumerate(states):
        for ai, a in enumerate(actions):
            c = 0.0
            for i in range(m):
                t = tables[i]
                n = s.residual_users[i]
                c += (t.on_stay[n] if s.prev_on[i] else t.on_switch[n]) if a[i] else t.off[n]
            cost[si, ai] = c

    # next-state distribution depends on the action only
    trans = np.zeros((n_actions, len(states)))
    probe = states[0]
    for ai, a in enumerate(actions):
        for sj, s2 in enumerate(states):
            trans[ai, sj] = transition_prob(s2, probe, a, pmfs)

    h = np.zeros(len(states))
    span = np.inf
    for sweep in range(max_sweeps):
        cont = trans @ h
        th = (cost + cont[None, :]).min(axis=1)
        delta = th - h
        span = float(delta.max() - delta.min())
        h = th - th[ref_idx]
        if span < tol:
            gain = float(th[ref_idx])
            break
    else:
        raise ConvergenceError("dense RVIA did not converge", span)

    # express as continuation values so SolvedMdp can serve policy queries
    W = trans @ h
    return SolvedMdp(
        config=config,
        gain=gain,
        actions=actions,
        continuation=W,
        iterations=sweep + 1,
        residual_span=span,
        method="dense-rvia",
        tables=tables,
    )
