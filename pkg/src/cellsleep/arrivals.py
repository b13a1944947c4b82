"""Residual-user distribution and the event-driven arrival oracle.

Users arrive in a segment as a mixed Poisson stream and stay for an
exponential time.  The users still present at the next segment boundary (the
"residual" users) drive the MDP dynamics.  The analytic distribution treats
consecutive segments as independent, dropping users who survive more than one
full segment; `residual_oracle` simulates the exact per-user dynamics with
that carryover included so the approximation can be quantified.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import poisson

from .model import CellParams, ClusterConfig

TAIL_EPS = 1e-9


def tilde_lambda(rate: float, service_rate: float, seg: float) -> float:
    """Expected residual users from one segment's arrivals at rate `rate`."""
    if service_rate <= 0:
        raise ValueError("service_rate must be > 0")
    if seg <= 0:
        raise ValueError("segment duration must be > 0")
    return rate / service_rate * (1.0 - np.exp(-service_rate * seg))


def residual_rates(cell: CellParams, seg: float) -> list[tuple[float, float]]:
    """(probability, residual mean) per active mixture component."""
    mu = cell.service_rate
    return [
        (p, tilde_lambda(r, mu, seg))
        for p, r in zip(cell.arrivals.probs, cell.arrivals.rates)
        if p > 0
    ]


@dataclass(frozen=True)
class ResidualPmf:
    """Residual-user distribution truncated at n_th (tail mass lumped there)."""

    probs: np.ndarray
    n_th: int
    mean_untruncated: float
    tail_mass: float

    def __post_init__(self):
        if abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"pmf sums to {self.probs.sum()}, not 1")
        if np.any(self.probs < 0):
            raise ValueError("pmf has negative entries")

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.n_th + 1)

    @property
    def mean(self) -> float:
        return float(self.support @ self.probs)

    def cdf_at(self, x: float) -> float:
        """P(residual <= x) under the truncated distribution."""
        if x < 0:
            return 0.0
        return float(self.probs[: min(int(np.floor(x)), self.n_th) + 1].sum())

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.choice(self.n_th + 1, size=size, p=self.probs)


def residual_pmf(cell: CellParams, seg: float, n_th: int) -> ResidualPmf:
    """Mixture-of-Poisson residual distribution, counts above n_th reset to n_th."""
    if n_th < 1:
        raise ValueError("n_th must be >= 1")
    probs = np.zeros(n_th + 1)
    mean = 0.0
    tail = 0.0
    comps = residual_rates(cell, seg)
    if not comps or all(lt == 0.0 for _, lt in comps):
        probs[0] = 1.0
        return ResidualPmf(probs, n_th, 0.0, 0.0)
    for p, lt in comps:
        probs[:n_th] += p * poisson.pmf(np.arange(n_th), lt)
        t = p * poisson.sf(n_th - 1, lt)
        probs[n_th] += t
        tail += p * poisson.sf(n_th, lt)  # mass strictly beyond n_th, folded in
        mean += p * lt
    return ResidualPmf(probs, n_th, mean, tail)


def default_n_th(cell_or_config, seg: float | None = None, tail: float = TAIL_EPS) -> int:
    """Smallest count with per-component Poisson tail below `tail`, doubled.

    For a ClusterConfig the rule is applied per cell and the maximum taken.
    """
    if isinstance(cell_or_config, ClusterConfig):
        cfg = cell_or_config
        return max(default_n_th(c, cfg.segment_duration, tail) for c in cfg.cells)
    cell = cell_or_config
    comps = residual_rates(cell, seg)
    lts = [lt for _, lt in comps if lt > 0]
    if not lts:
        return 1
    n = 0
    while max(poisson.sf(n, lt) for lt in lts) >= tail:
        n += 1
    return max(2 * n, 1)


def sample_segment(cell: CellParams, seg: float, rng: np.random.Generator):
    """Draw one segment of arrivals: (count, arrival epochs, staying times).

    The mixture rate is drawn fresh, the count is Poisson, epochs are uniform
    on [0, seg] (order-statistics property of the Poisson process), and
    staying times are exponential with the cell's mean service time.
    """
    rate = rng.choice(cell.arrivals.rates, p=cell.arrivals.probs)
    n = rng.poisson(rate * seg)
    epochs = rng.uniform(0.0, seg, size=n)
    stays = rng.exponential(cell.mean_service_time, size=n)
    return n, epochs, stays


def residual_oracle(
    cell: CellParams,
    seg: float,
    segments: int,
    rng: np.random.Generator,
    n_th: int | None = None,
) -> np.ndarray:
    """Empirical boundary-count distribution from exact per-user simulation.

    Tracks every user's remaining staying time across segments, so users that
    survive several segments (the carryover the analytic distribution omits)
    are counted.  Counts above n_th are reset to n_th, mirroring the
    truncation of the analytic distribution; returns probabilities over
    0..n_th.
    """
    if segments < 1:
        raise ValueError("segments must be >= 1")
    if n_th is None:
        n_th = default_n_th(cell, seg)
    remaining = np.empty(0)
    counts = np.empty(segments, dtype=np.int64)
    for t in range(segments):
        _, epochs, stays = sample_segment(cell, seg, rng)
        new_remaining = stays - (seg - epochs)
        old_remaining = remaining - seg
        remaining = np.concatenate(
            [new_remaining[new_remaining > 0], old_remaining[old_remaining > 0]]
        )
        counts[t] = remaining.size
    hist = np.bincount(np.minimum(counts, n_th), minlength=n_th + 1)
    return hist / segments


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two pmfs on a common (padded) support."""
    n = max(len(p), len(q))
    pp = np.zeros(n)
    qq = np.zeros(n)
    pp[: len(p)] = p
    qq[: len(q)] = q
    return 0.5 * float(np.abs(pp - qq).sum())
