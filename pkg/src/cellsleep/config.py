"""Configuration files: flat key-value text with optional per-cell sections.

Format: `key = value` lines, `#` comments, and sections `[cell N]` (1-based)
overriding the cluster-wide arrival model for one cell, plus an optional
`[experiment]` section describing a sweep.  Arrays are comma lists; fractions
like 2/3 are accepted.  Unknown keys are rejected with their line number.
Omitted keys fall back to the reference parameter set (85/40/1/5 W power
model, 1800 s segments, 500 s mean service time, the shared rate grid with
probability set 3, quadratic cost).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .arrivals import default_n_th
from .model import (
    ArrivalMixture,
    CellParams,
    ClusterConfig,
    ConfigurationError,
    CostFunction,
    PowerParams,
    TABLE1_PIECEWISE_SEGMENTS,
    TABLE1_PROB_SETS,
    TABLE1_RATES,
)


class ConfigError(ValueError):
    """A configuration file failed to parse or validate."""


DEFAULTS = {
    "m_cells": "4",
    "k_max_off": "4",
    "segment_duration": "1800",
    "mean_service_time": "500",
    "arrival_rates": ",".join(str(r) for r in TABLE1_RATES),
    "arrival_probs": "set3",
    "p_static": "85",
    "p_switch": "40",
    "p_d": "1",
    "p_e": "5",
    "cost_fn": "quadratic",
    "n_th": "auto",
}

_CLUSTER_KEYS = set(DEFAULTS) | {"solver_budget"}
_CELL_KEYS = {"arrival_rates", "arrival_probs", "mean_service_time"}
_EXPERIMENT_KEYS = {
    "kind",
    "k_values",
    "p_switch_values",
    "arrival_sets",
    "segments",
    "seed",
    "trace_segments",
    "label",
}


@dataclass
class ExperimentSpec:
    """One figure-style experiment: what to sweep and how long to simulate."""

    kind: str
    k_values: list[int] = field(default_factory=list)
    p_switch_values: list[float] = field(default_factory=list)
    arrival_sets: list[str] = field(default_factory=list)
    segments: int = 100_000
    seed: int = 7
    trace_segments: int = 200
    label: str = ""
    solver_budget: int | None = 10_000_000

    KINDS = ("sweep-k", "threshold-trace", "arrival-sets", "switch-power", "composition")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {self.KINDS}")
        if self.segments < 1:
            raise ConfigError("segments must be >= 1")


def _number(text: str, line: int) -> float:
    text = text.strip()
    try:
        if "/" in text:
            return float(Fraction(text))
        return float(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"line {line}: cannot parse number {text!r}") from exc


def _number_list(text: str, line: int) -> list[float]:
    return [_number(part, line) for part in text.split(",") if part.strip() != ""]


def _parse_cost_fn(text: str, line: int) -> CostFunction:
    text = text.strip()
    if text == "linear":
        return CostFunction.linear()
    if text == "quadratic":
        return CostFunction.quadratic()
    if text == "piecewise":
        return CostFunction.piecewise(TABLE1_PIECEWISE_SEGMENTS)
    if text.startswith("piecewise:"):
        segs = []
        for part in text[len("piecewise:"):].split(";"):
            bits = part.split(":")
            if len(bits) != 3:
                raise ConfigError(f"line {line}: piecewise segment {part!r} is not start:slope:intercept")
            segs.append(tuple(_number(b, line) for b in bits))
        try:
            return CostFunction.piecewise(segs)
        except ConfigurationError as exc:
            raise ConfigError(f"line {line}: {exc}") from exc
    raise ConfigError(f"line {line}: unknown cost_fn {text!r}")


def _parse_probs(text: str, line: int, n_rates: int) -> tuple[float, ...]:
    text = text.strip()
    if text.lower() in TABLE1_PROB_SETS:
        return TABLE1_PROB_SETS[text.lower()]
    probs = _number_list(text, line)
    if len(probs) != n_rates:
        raise ConfigError(
            f"line {line}: arrival_probs has {len(probs)} entries for {n_rates} rates"
        )
    return tuple(probs)


def _tokenize(path: Path):
    sections: dict[str, dict[str, tuple[str, int]]] = {"": {}}
    current = ""
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in sections[current]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        sections[current][key.lower()] = (value, lineno)
    return sections


def load_config(path) -> tuple[ClusterConfig, ExperimentSpec | None]:
    """Parse and validate a configuration file.

    Returns the cluster instance plus the experiment description when an
    `[experiment]` section is present.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    sections = _tokenize(path)

    cluster = dict(DEFAULTS)
    lines = {k: 0 for k in cluster}
    for key, (value, lineno) in sections.get("", {}).items():
        if key not in _CLUSTER_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        cluster[key] = value
        lines[key] = lineno

    m_cells = int(_number(cluster["m_cells"], lines["m_cells"]))
    rates = _number_list(cluster["arrival_rates"], lines["arrival_rates"])
    base_cell = {
        "arrival_rates": rates,
        "arrival_probs": _parse_probs(cluster["arrival_probs"], lines["arrival_probs"], len(rates)),
        "mean_service_time": _number(cluster["mean_service_time"], lines["mean_service_time"]),
    }
    per_cell = [dict(base_cell) for _ in range(m_cells)]

    for name, entries in sections.items():
        if name in ("", "experiment"):
            continue
        if not name.startswith("cell"):
            raise ConfigError(f"unknown section [{name}]")
        try:
            idx = int(name.removeprefix("cell").strip())
        except ValueError as exc:
            raise ConfigError(f"section [{name}] is not of the form [cell N]") from exc
        if not 1 <= idx <= m_cells:
            raise ConfigError(f"section [{name}]: cell index out of range 1..{m_cells}")
        for key, (value, lineno) in entries.items():
            if key not in _CELL_KEYS:
                raise ConfigError(f"line {lineno}: unknown per-cell key {key!r}")
            if key == "arrival_rates":
                per_cell[idx - 1][key] = _number_list(value, lineno)
            elif key == "arrival_probs":
                per_cell[idx - 1][key] = _parse_probs(
                    value, lineno, len(per_cell[idx - 1]["arrival_rates"])
                )
            else:
                per_cell[idx - 1][key] = _number(value, lineno)

    try:
        cells = tuple(
            CellParams(
                arrivals=ArrivalMixture(tuple(c["arrival_rates"]), tuple(c["arrival_probs"])),
                mean_service_time=c["mean_service_time"],
            )
            for c in per_cell
        )
        power = PowerParams(
            p_static=_number(cluster["p_static"], lines["p_static"]),
            p_switch=_number(cluster["p_switch"], lines["p_switch"]),
            p_d=_number(cluster["p_d"], lines["p_d"]),
            p_e=_number(cluster["p_e"], lines["p_e"]),
        )
        cost_fn = _parse_cost_fn(cluster["cost_fn"], lines["cost_fn"])
        seg = _number(cluster["segment_duration"], lines["segment_duration"])
        k_max_off = int(_number(cluster["k_max_off"], lines["k_max_off"]))
        if cluster["n_th"].strip().lower() == "auto":
            n_th = max(default_n_th(c, seg) for c in cells)
        else:
            n_th = int(_number(cluster["n_th"], lines["n_th"]))
        config = ClusterConfig(
            m_cells=m_cells,
            k_max_off=k_max_off,
            segment_duration=seg,
            cells=cells,
            power=power,
            cost_fn=cost_fn,
            n_th=n_th,
        )
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from exc

    spec = None
    if "experiment" in sections:
        entries = sections["experiment"]
        for key, (_, lineno) in entries.items():
            if key not in _EXPERIMENT_KEYS:
                raise ConfigError(f"line {lineno}: unknown experiment key {key!r}")
        def get(key, default=None):
            return entries[key][0] if key in entries else default

        budget_text = cluster.get("solver_budget", "").strip().lower()
        if budget_text in ("", "default"):
            budget = 10_000_000
        elif budget_text in ("none", "unlimited"):
            budget = None
        else:
            budget = int(_number(budget_text, lines.get("solver_budget", 0)))
        if "kind" not in entries:
            raise ConfigError("[experiment] section needs a 'kind' key")
        kind = entries["kind"][0].strip()
        k_values = [int(v) for v in _number_list(get("k_values", ""), 0)]
        if not k_values and kind in ("sweep-k",):
            k_values = list(range(m_cells + 1))
        sets = [s.strip().lower() for s in get("arrival_sets", "").split(",") if s.strip()]
        if not sets and kind == "arrival-sets":
            sets = sorted(TABLE1_PROB_SETS)
        for s in sets:
            if s not in TABLE1_PROB_SETS:
                raise ConfigError(f"unknown arrival set {s!r}")
        spec = ExperimentSpec(
            kind=kind,
            k_values=k_values,
            p_switch_values=_number_list(get("p_switch_values", ""), 0),
            arrival_sets=sets,
            segments=int(_number(get("segments", "100000"), 0)),
            seed=int(_number(get("seed", "7"), 0)),
            trace_segments=int(_number(get("trace_segments", "200"), 0)),
            label=get("label", path.stem),
            solver_budget=budget,
        )
    return config, spec


def config_hash(config: ClusterConfig, extra: str = "") -> str:
    return hashlib.sha256((config.canonical() + "|" + extra).encode()).hexdigest()[:16]


def bundled_config_path(name: str) -> Path:
    """Path of a configuration file shipped with the package."""
    ref = resources.files("cellsleep").joinpath("configs", name)
    with resources.as_file(ref) as p:
        return Path(p)
