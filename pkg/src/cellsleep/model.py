"""Shared domain types for the cell-cluster sleep-control problem.

A cluster of M cells is controlled at segment boundaries: each cell's server
is switched ON or OFF, with at most K cells OFF at once (the fallback macro
server can absorb at most K cells' traffic).  Everything downstream (cost
evaluation, solvers, policies, simulation) is written against the types in
this module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PROB_SUM_TOL = 1e-12


class ConfigurationError(ValueError):
    """An invariant of a domain type was violated at construction."""


@dataclass(frozen=True)
class PowerParams:
    """Cluster-wide power model (watts).

    p_d is the per-user draw of a cell's own server, p_e the per-user draw of
    the always-on fallback server.  p_e > p_d is required: otherwise turning a
    cell off is never more expensive per user and every threshold expression
    below degenerates.
    """

    p_static: float
    p_switch: float
    p_d: float
    p_e: float

    def __post_init__(self):
        for name in ("p_static", "p_switch", "p_d", "p_e"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if not self.p_e > self.p_d:
            raise ConfigurationError("p_e must exceed p_d")


class CostFunction:
    """Non-decreasing map from watts to cost.

    Three variants: linear f(x)=x, quadratic f(x)=x**2, and piecewise linear
    given as (start, slope, intercept) segments.  Piecewise segments must
    start at 0, have non-negative slopes, and join continuously; segment i
    applies on (start_i, start_{i+1}].
    """

    def __init__(self, kind: str, segments: Sequence[tuple[float, float, float]] | None = None):
        if kind not in ("linear", "quadratic", "piecewise"):
            raise ConfigurationError(f"unknown cost function kind: {kind!r}")
        self.kind = kind
        self.segments = None
        if kind == "piecewise":
            if not segments:
                raise ConfigurationError("piecewise cost function needs segments")
            segs = [(float(x), float(s), float(b)) for x, s, b in segments]
            if segs[0][0] != 0.0:
                raise ConfigurationError("first piecewise segment must start at 0")
            starts = [x for x, _, _ in segs]
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise ConfigurationError("piecewise segment starts must be strictly increasing")
            if any(s < 0 for _, s, _ in segs):
                raise ConfigurationError("piecewise slopes must be >= 0 (non-decreasing cost)")
            for (x0, s0, b0), (x1, s1, b1) in zip(segs, segs[1:]):
                left, right = s0 * x1 + b0, s1 * x1 + b1
                if abs(left - right) > 1e-9 * max(1.0, abs(left)):
                    raise ConfigurationError(f"piecewise cost discontinuous at {x1}: {left} vs {right}")
            self.segments = tuple(segs)
            self._starts = np.array(starts[1:])
            self._slopes = np.array([s for _, s, _ in segs])
            self._intercepts = np.array([b for _, _, b in segs])

    @classmethod
    def linear(cls) -> "CostFunction":
        return cls("linear")

    @classmethod
    def quadratic(cls) -> "CostFunction":
        return cls("quadratic")

    @classmethod
    def piecewise(cls, segments: Sequence[tuple[float, float, float]]) -> "CostFunction":
        return cls("piecewise", segments)

    def __call__(self, watts):
        x = np.asarray(watts, dtype=float)
        if np.any(x < 0):
            raise ValueError("cost function is defined for watts >= 0")
        if self.kind == "linear":
            out = x.copy()
        elif self.kind == "quadratic":
            out = x * x
        else:
            idx = np.searchsorted(self._starts, x, side="left")
            out = self._slopes[idx] * x + self._intercepts[idx]
        return float(out) if np.isscalar(watts) or np.ndim(watts) == 0 else out

    def canonical(self) -> str:
        if self.kind == "piecewise":
            seg = ";".join(f"{x:.17g}:{s:.17g}:{b:.17g}" for x, s, b in self.segments)
            return f"piecewise[{seg}]"
        return self.kind

    def __repr__(self):
        return f"CostFunction({self.canonical()})"

    def __eq__(self, other):
        return isinstance(other, CostFunction) and self.canonical() == other.canonical()

    def __hash__(self):
        return hash(self.canonical())


def eval_cost(f: CostFunction, watts) -> float:
    """Evaluate f at a non-negative power draw; raises on negative input."""
    return f(watts)


@dataclass(frozen=True)
class ArrivalMixture:
    """Mixture of Poisson arrival rates: rate rates[j] is active with probs[j]."""

    rates: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.rates) != len(self.probs) or not self.rates:
            raise ConfigurationError("rates and probs must be non-empty and equal length")
        if any(r < 0 for r in self.rates):
            raise ConfigurationError("arrival rates must be >= 0")
        if any(p < 0 for p in self.probs):
            raise ConfigurationError("mixture probabilities must be >= 0")
        if abs(sum(self.probs) - 1.0) > PROB_SUM_TOL:
            raise ConfigurationError(f"mixture probabilities sum to {sum(self.probs)}, not 1")


@dataclass(frozen=True)
class CellParams:
    """Generative model of one cell: arrival mixture and mean user staying time."""

    arrivals: ArrivalMixture
    mean_service_time: float  # seconds; staying times are Exp with this mean

    def __post_init__(self):
        if not self.mean_service_time > 0:
            raise ConfigurationError("mean_service_time must be > 0")

    @property
    def service_rate(self) -> float:
        return 1.0 / self.mean_service_time


def mean_arrival_rate(cell: CellParams) -> float:
    """Mixture-averaged arrival rate (users per second)."""
    return float(sum(p * r for p, r in zip(cell.arrivals.probs, cell.arrivals.rates)))


@dataclass(frozen=True)
class ClusterConfig:
    """Full problem instance: M cells, OFF budget K, segment length, power and cost models."""

    m_cells: int
    k_max_off: int
    segment_duration: float
    cells: tuple[CellParams, ...]
    power: PowerParams
    cost_fn: CostFunction
    n_th: int

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        if self.m_cells < 1:
            raise ConfigurationError("m_cells must be >= 1")
        if not 0 <= self.k_max_off <= self.m_cells:
            raise ConfigurationError("k_max_off must satisfy 0 <= K <= M")
        if not self.segment_duration > 0:
            raise ConfigurationError("segment_duration must be > 0")
        if len(self.cells) != self.m_cells:
            raise ConfigurationError("cells list length must equal m_cells")
        if self.n_th < 1:
            raise ConfigurationError("n_th must be >= 1")

    def canonical(self) -> str:
        cells = "|".join(
            f"r={','.join(f'{r:.17g}' for r in c.arrivals.rates)};"
            f"p={','.join(f'{p:.17g}' for p in c.arrivals.probs)};"
            f"s={c.mean_service_time:.17g}"
            for c in self.cells
        )
        pw = self.power
        return (
            f"M={self.m_cells};K={self.k_max_off};Ts={self.segment_duration:.17g};"
            f"P=({pw.p_static:.17g},{pw.p_switch:.17g},{pw.p_d:.17g},{pw.p_e:.17g});"
            f"f={self.cost_fn.canonical()};nth={self.n_th};cells[{cells}]"
        )


@dataclass(frozen=True)
class CellState:
    """Per-cell MDP state: previous segment's ON/OFF plus current residual users."""

    prev_on: bool
    residual_users: int

    def __post_init__(self):
        if self.residual_users < 0:
            raise ConfigurationError("residual_users must be >= 0")


@dataclass(frozen=True)
class ClusterState:
    """Joint state of the cluster: per-cell previous actions and residual counts."""

    prev_on: tuple[bool, ...]
    residual_users: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "prev_on", tuple(bool(a) for a in self.prev_on))
        object.__setattr__(self, "residual_users", tuple(int(n) for n in self.residual_users))
        if len(self.prev_on) != len(self.residual_users):
            raise ConfigurationError("prev_on and residual_users must have equal length")

    def cell(self, m: int) -> CellState:
        return CellState(self.prev_on[m], self.residual_users[m])

    @property
    def m_cells(self) -> int:
        return len(self.prev_on)


class ActionVector:
    """Joint ON/OFF decision; at most k_max_off cells may be OFF."""

    __slots__ = ("on",)

    def __init__(self, on: Iterable[bool], k_max_off: int):
        on = tuple(bool(a) for a in on)
        n_off = len(on) - sum(on)
        if n_off > k_max_off:
            raise ConfigurationError(
                f"action turns {n_off} cells off, exceeding the budget K={k_max_off}"
            )
        self.on = on

    @property
    def n_off(self) -> int:
        return len(self.on) - sum(self.on)

    def __iter__(self):
        return iter(self.on)

    def __len__(self):
        return len(self.on)

    def __getitem__(self, m):
        return self.on[m]

    def __eq__(self, other):
        if isinstance(other, ActionVector):
            return self.on == other.on
        return NotImplemented

    def __hash__(self):
        return hash(self.on)

    def __repr__(self):
        return "ActionVector(" + "".join("1" if a else "0" for a in self.on) + ")"


# Table I arrival model: shared rate grid, five sampling-probability sets, all
# with mixture mean 0.01 users/s.
TABLE1_RATES = (0.005, 0.01, 0.015, 0.02)
TABLE1_PROB_SETS = {
    "set1": (0.0, 1.0, 0.0, 0.0),
    "set2": (0.5, 0.0, 0.5, 0.0),
    "set3": (2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0),
    "set4": (0.3, 0.4, 0.3, 0.0),
    "set5": (0.6, 0.0, 0.2, 0.2),
}
TABLE1_PIECEWISE_SEGMENTS = ((0.0, 0.5, 0.0), (100.0, 1.0, -50.0), (150.0, 1.5, -125.0))
