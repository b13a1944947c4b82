"""Figure rendering for experiment results (one PNG next to each CSV)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

_POLICY_STYLE = {
    "optimal": dict(color="black", marker="o"),
    "index": dict(color="tab:red", marker="s"),
    "greedy": dict(color="tab:blue", marker="^"),
    "uniform": dict(color="tab:green", marker="v"),
    "roundrobin": dict(color="tab:purple", marker="d"),
    "round_robin": dict(color="tab:purple", marker="d"),
}


def render(result, path) -> Path | None:
    """Dispatch on the experiment kind; returns the written path."""
    path = Path(path)
    fig = None
    try:
        if result.kind in ("sweep-k", "arrival-sets"):
            fig = _render_delta_rows(result)
        elif result.kind == "threshold-trace":
            fig = _render_trace(result)
        elif result.kind == "switch-power":
            fig = _render_switch_power(result)
        elif result.kind == "composition":
            fig = _render_composition(result)
        if fig is None:
            return None
        fig.savefig(path, dpi=150, bbox_inches="tight")
        return path
    finally:
        if fig is not None:
            plt.close(fig)


def _render_delta_rows(result):
    x = [row[0] for row in result.rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    numeric_x = result.kind == "sweep-k"
    xs = x if numeric_x else np.arange(len(x))
    for i, col in enumerate(result.columns[1:], start=1):
        name = col.removeprefix("delta_")
        ys = np.array([row[i] for row in result.rows], dtype=float)
        if np.all(np.isnan(ys)):
            continue
        ax.plot(xs, ys, label=name, **_POLICY_STYLE.get(name, {}))
    if not numeric_x:
        ax.set_xticks(xs, x)
    ax.set_xlabel("K" if numeric_x else "arrival probability set")
    ax.set_ylabel("cost gap over the lower bound (%)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    return fig


def _render_trace(result):
    cells = sorted({row[1] for row in result.rows})
    fig, axes = plt.subplots(len(cells), 1, figsize=(7, 2.1 * len(cells)), sharex=True)
    if len(cells) == 1:
        axes = [axes]
    for cell, ax in zip(cells, axes):
        rows = [r for r in result.rows if r[1] == cell]
        t = [r[0] for r in rows]
        n = [r[2] for r in rows]
        on = np.array([r[3] for r in rows], dtype=bool)
        gamma_l, gamma_u = rows[0][4], rows[0][5]
        ax.scatter(np.array(t)[on], np.array(n)[on], s=8, color="tab:blue", label="ON")
        ax.scatter(np.array(t)[~on], np.array(n)[~on], s=8, color="tab:orange", label="OFF")
        ax.axhline(gamma_l, color="grey", lw=0.8, ls="--")
        ax.axhline(gamma_u, color="grey", lw=0.8, ls=":")
        ax.set_ylabel(f"cell {cell}")
    axes[-1].set_xlabel("segment")
    axes[0].legend(loc="upper right", fontsize=8)
    return fig


def _render_switch_power(result):
    fig, ax = plt.subplots(figsize=(6, 4))
    p = [row[0] for row in result.rows]
    for i, col in enumerate(result.columns[1:3], start=1):
        name = col.removeprefix("delta_")
        ax.plot(p, [row[i] for row in result.rows], label=name,
                **_POLICY_STYLE.get(name, {}))
    ax.set_xlabel("switching power (W)")
    ax.set_ylabel("cost gap over the lower bound (%)")
    ax.invert_xaxis()
    ax.grid(True, alpha=0.3)
    ax.legend()
    return fig


def _render_composition(result):
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [row[0] for row in result.rows]
    parts = np.array([[row[1], row[2], row[3], row[4]] for row in result.rows], dtype=float)
    bottoms = np.zeros(len(labels))
    for j, part in enumerate(["static", "dynamic", "switch", "extra"]):
        ax.bar(labels, parts[:, j], bottom=bottoms, label=part)
        bottoms += parts[:, j]
    ax.set_ylabel("average power (W)")
    ax.legend()
    return fig
