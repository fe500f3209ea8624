"""Post-hoc metrics for search traces: hypervolume, win ratio and summaries.

Hypervolume is computed in a normalized objective plane: quality stays in
[0, 1] and evaluation time is min-max scaled over a comparison group, with
the reference point at (quality 0, time 1). HVs are comparable only within
one group.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .optimizer import EvalRecord, SearchTrace, pareto_front

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("prior", "max_quality", "mean_quality", "min_et", "mean_et", "hv", "n_eval", "error_ratio", "win_ratio")


def hypervolume_2d(
    front: Sequence[tuple[float, float]], reference: tuple[float, float] = (0.0, 1.0)
) -> float:
    """Area dominated by ``front`` (maximize quality, minimize time) up to ``reference``.

    Points that do not strictly dominate the reference are excluded.
    """
    q_ref, t_ref = reference
    pts = []
    for q, t in front:
        if q > q_ref and t < t_ref:
            pts.append((q, t))
        elif q < q_ref or t > t_ref:
            log.warning("point (%g, %g) does not dominate the reference; excluded", q, t)
    pts.sort(key=lambda p: (-p[0], p[1]))
    area = 0.0
    t_min = t_ref
    for q, t in pts:
        if t < t_min:
            area += (q - q_ref) * (t_min - t)
            t_min = t
    return area


def _records(trace) -> list[EvalRecord]:
    return trace.records if isinstance(trace, SearchTrace) else list(trace)


def _points(trace) -> list[tuple[float, float]]:
    return [(r.outcome.quality, r.outcome.evaluation_time) for r in _records(trace) if r.ok]


def normalize_points(
    points: Sequence[tuple[float, float]], et_bounds: tuple[float, float]
) -> list[tuple[float, float]]:
    lo, hi = et_bounds
    span = hi - lo
    if span <= 0:
        return [(q, 0.0) for q, _ in points]
    return [(q, (t - lo) / span) for q, t in points]


def et_bounds(*traces) -> tuple[float, float] | None:
    """Min and max evaluation time over the successes of every trace in a comparison group."""
    ets = [t for tr in traces for _, t in _points(tr)]
    if not ets:
        return None
    return min(ets), max(ets)


def trace_hypervolume(trace, bounds: tuple[float, float] | None = None) -> float:
    bounds = bounds or et_bounds(trace)
    if bounds is None:
        return 0.0
    return hypervolume_2d(normalize_points(pareto_front(_points(trace)), bounds))


def _strictly_dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] >= b[0] and a[1] <= b[1] and (a[0] > b[0] or a[1] < b[1])


def win_ratio(trace, baseline_front: Sequence[tuple[float, float]]) -> float:
    """Share of successful evaluations not dominated by any baseline-front point.

    A point equal to a baseline point is not dominated by it, so ties count as wins.
    """
    pts = _points(trace)
    if not pts:
        return 0.0
    wins = sum(1 for p in pts if not any(_strictly_dominates(b, p) for b in baseline_front))
    return wins / len(pts)


@dataclass(frozen=True)
class FrontComparison:
    baseline_front: list[tuple[float, float]]
    wins: int
    total: int

    @property
    def ratio(self) -> float:
        return self.wins / self.total if self.total else 0.0


def compare_to_front(trace, baseline_front: Sequence[tuple[float, float]]) -> FrontComparison:
    pts = _points(trace)
    wins = sum(1 for p in pts if not any(_strictly_dominates(b, p) for b in baseline_front))
    return FrontComparison(list(baseline_front), wins, len(pts))


def summarize(trace, et_bounds_: tuple[float, float] | None = None) -> dict:
    """Table-style summary. Quality/time fields are omitted when nothing succeeded."""
    recs = _records(trace)
    pts = _points(recs)
    n = len(recs)
    out: dict = {"n_eval": n, "error_ratio": (n - len(pts)) / n if n else 0.0}
    if pts:
        qs = [q for q, _ in pts]
        ts = [t for _, t in pts]
        out.update(
            max_quality=max(qs),
            mean_quality=sum(qs) / len(qs),
            min_et=min(ts),
            mean_et=sum(ts) / len(ts),
            hv=trace_hypervolume(recs, et_bounds_),
        )
    return out


def comparison_table(
    traces: Mapping[str, SearchTrace], baseline: str
) -> list[dict]:
    """One summary row per trace, HV normalized over the whole group, win ratio vs ``baseline``."""
    bounds = et_bounds(*traces.values())
    front = pareto_front(_points(traces[baseline]))
    rows = []
    for name, tr in traces.items():
        row = {"prior": name, **summarize(tr, bounds)}
        row["win_ratio"] = win_ratio(tr, front)
        rows.append(row)
    return rows


def table_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row.get(k)) for k in TABLE_COLUMNS})
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}" if math.isfinite(v) else str(v)
    return str(v)


def plot_data(
    traces: Mapping[str, SearchTrace],
    marginals: Mapping[str, Sequence[float]] | None = None,
    methods: Sequence[str] | None = None,
) -> dict:
    """x/y series for Pareto-front scatter plots and method-marginal bar charts."""
    doc: dict = {"pareto": {}, "points": {}}
    for name, tr in traces.items():
        pts = _points(tr)
        front = sorted(pareto_front(pts), key=lambda p: p[1])
        doc["pareto"][name] = {"x_et": [t for _, t in front], "y_quality": [q for q, _ in front]}
        doc["points"][name] = {"x_et": [t for _, t in pts], "y_quality": [q for q, _ in pts]}
    if marginals is not None:
        doc["method_marginals"] = {"methods": list(methods or []), "series": {k: list(v) for k, v in marginals.items()}}
    return doc


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True)
