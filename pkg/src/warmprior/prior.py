"""Experience-aware warm-start priors.

A prior is built by two sweeps over past experiences: every kept positive
pulls the sampler toward its configuration, every kept negative pushes it
away. Step sizes decay with task distance through ``exp(-beta * d)`` and, for
positives, scale with a utility score in [0, 1].
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .metafeatures import Scaler, distance, fit_scaler
from .space import (
    SamplerState,
    apply_negative_update,
    apply_positive_update,
    empirical_distribution,
)
from .store import Experience, FitnessVector, label, POSITIVE

BETA_MAX = 1e6
EPS_BETA = 1e-8
INF = math.inf

UTILITY_SCHEMES = ("weighted_sum", "linear_front", "log_front", "constant")
DISTANCE_METRICS = ("euclidean", "cosine")
BETA_VARIANTS = ("std_only", "std_plus_mean")
RATE_SCHEMES = ("fixed", "adaptive")


@dataclass(frozen=True)
class PriorParams:
    """Warm-start prior parameterization.

    ``k_pos``/``k_neg`` may be ``math.inf`` (use every experience) or 0
    (disable that sweep). ``utility_scheme="constant"`` sets every utility to
    1; together with ``fixed_beta=0`` and ``positive_metric_distance=True``
    it reproduces the kNN neighbour rule.
    """

    distance_metric: str = "euclidean"
    utility_scheme: str = "linear_front"
    beta_scale: float = 1.0
    beta_variant: str = "std_plus_mean"
    rate_scheme: str = "fixed"
    alpha_pos: float = 0.05
    alpha_neg: float = 0.02
    k_pos: float = INF
    k_neg: float = INF
    metric_weights: Mapping[str, float] | None = None
    fixed_beta: float | None = None
    positive_metric_distance: bool = False
    include_system: bool = True

    def __post_init__(self) -> None:
        if self.distance_metric not in DISTANCE_METRICS:
            raise ValueError(f"unknown distance metric {self.distance_metric!r}")
        if self.utility_scheme not in UTILITY_SCHEMES:
            raise ValueError(f"unknown utility scheme {self.utility_scheme!r}")
        if self.beta_variant not in BETA_VARIANTS:
            raise ValueError(f"unknown beta variant {self.beta_variant!r}")
        if self.rate_scheme not in RATE_SCHEMES:
            raise ValueError(f"unknown rate scheme {self.rate_scheme!r}")
        if not self.beta_scale > 0:
            raise ValueError("beta_scale must be positive")
        if self.k_pos < 0 or self.k_neg < 0:
            raise ValueError("k_pos and k_neg must be >= 0")
        if not (0 <= abs(self.alpha_pos) <= 1 and 0 <= abs(self.alpha_neg) <= 1):
            raise ValueError("maximum learning rates must have magnitude <= 1")
        if self.fixed_beta is not None and self.fixed_beta < 0:
            raise ValueError("fixed_beta must be >= 0")
        if self.utility_scheme == "weighted_sum" and self.metric_weights is not None:
            w = list(self.metric_weights.values())
            if any(x < 0 for x in w) or sum(w) <= 0:
                raise ValueError("metric weights must be >= 0 with a positive sum")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("k_pos", "k_neg"):
            d[k] = "inf" if math.isinf(d[k]) else int(d[k])
        if d["metric_weights"] is not None:
            d["metric_weights"] = dict(d["metric_weights"])
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PriorParams:
        d = dict(d)
        for k in ("k_pos", "k_neg"):
            if k in d:
                d[k] = float(d[k]) if str(d[k]).lower() in ("inf", "infinity", ".inf") else int(d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown prior fields: {sorted(unknown)}")
        return cls(**d)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def load(cls, text: str) -> PriorParams:
        return cls.from_dict(yaml.safe_load(text) or {})


# ---------------------------------------------------------------------------
# decay


def compute_beta(
    distances: Sequence[float], beta_scale: float = 1.0, variant: str = "std_only", epsilon: float = EPS_BETA
) -> float:
    """Decay factor scaled by the spread of ``distances``, capped at ``BETA_MAX``."""
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise ValueError("need at least one distance")
    if (d < 0).any():
        raise ValueError("distances must be >= 0")
    denom = float(d.std()) + epsilon
    if variant == "std_plus_mean":
        denom += float(d.mean())
    elif variant != "std_only":
        raise ValueError(f"unknown beta variant {variant!r}")
    return min(beta_scale / denom, BETA_MAX)


# ---------------------------------------------------------------------------
# utilities


def _metric_matrix(points: Sequence[FitnessVector]) -> tuple[list[str], np.ndarray, list[str]]:
    names = list(points[0].names)
    for p in points:
        if set(p.names) != set(names):
            raise ValueError("inconsistent metric names across points")
    X = np.array([[p.values[n] for n in names] for p in points], dtype=float)
    dirs = [points[0].directions[n] for n in names]
    return names, X, dirs


def utility_weighted_sum(
    positives: Sequence[FitnessVector], weights: Mapping[str, float] | None = None
) -> np.ndarray:
    """Min-max normalize each metric (flipped when minimized) and take the weighted mean.

    A metric that is constant across ``positives`` contributes 0.5 to every
    experience. Metrics absent from ``weights`` get weight 0; ``weights=None``
    weighs every metric equally.
    """
    if not positives:
        raise ValueError("no positive experiences")
    names, X, dirs = _metric_matrix(positives)
    w = np.array([1.0 if weights is None else float(weights.get(n, 0.0)) for n in names])
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError("weights must be >= 0 with a positive sum")
    norm = np.empty_like(X)
    for j, direction in enumerate(dirs):
        col = X[:, j]
        lo, hi = col.min(), col.max()
        if hi == lo:
            norm[:, j] = 0.5
            continue
        v = (col - lo) / (hi - lo)
        norm[:, j] = v if direction == "maximize" else 1.0 - v
    return norm @ w / w.sum()


def _as_max_matrix(points, directions: Sequence[str] | None) -> np.ndarray:
    if len(points) and isinstance(points[0], FitnessVector):
        _, X, dirs = _metric_matrix(points)
    else:
        X = np.atleast_2d(np.asarray(points, dtype=float))
        dirs = list(directions) if directions is not None else ["maximize"] * X.shape[1]
    sign = np.array([1.0 if d == "maximize" else -1.0 for d in dirs])
    return X * sign


def dominates(a: np.ndarray, b: np.ndarray) -> bool:
    """``a`` dominates ``b`` under maximization of every column."""
    return bool(np.all(a >= b) and np.any(a > b))


def non_dominated_sort(points, directions: Sequence[str] | None = None) -> tuple[list[int], int]:
    """Front index per point (0 = non-dominated) and the number of fronts.

    ``points`` is either a list of FitnessVector or a 2-D array whose columns
    follow ``directions`` (all maximized by default).
    """
    if len(points) == 0:
        return [], 0
    X = _as_max_matrix(points, directions)
    n = len(X)
    # dom[i, j]: i dominates j
    dom = (X[:, None, :] >= X[None, :, :]).all(-1) & (X[:, None, :] > X[None, :, :]).any(-1)
    counts = dom.sum(axis=0)
    fronts = [0] * n
    current = np.flatnonzero(counts == 0)
    rank = 0
    while current.size:
        for p in current:
            fronts[p] = rank
        counts = counts - dom[current].sum(axis=0)
        counts[current] = -1
        current = np.flatnonzero(counts == 0)
        rank += 1
    return fronts, rank


def front_utility(front: int, n_fronts: int, mode: str) -> float:
    if mode == "linear":
        return (n_fronts - front) / n_fronts
    if mode == "log":
        return math.log(n_fronts - front + 1) / math.log(n_fronts + 1)
    raise ValueError(f"unknown front utility mode {mode!r}")


def utility_front(positives: Sequence[FitnessVector], mode: str = "linear") -> np.ndarray:
    if not positives:
        raise ValueError("no positive experiences")
    fronts, n = non_dominated_sort(positives)
    return np.array([front_utility(f, n, mode) for f in fronts])


def utilities(positives: Sequence[FitnessVector], params: PriorParams) -> np.ndarray:
    scheme = params.utility_scheme
    if scheme == "weighted_sum":
        return utility_weighted_sum(positives, params.metric_weights)
    if scheme == "linear_front":
        return utility_front(positives, "linear")
    if scheme == "log_front":
        return utility_front(positives, "log")
    return np.ones(len(positives))


# ---------------------------------------------------------------------------
# learning rates


def max_rates(params: PriorParams, n_pos: int, n_neg: int) -> tuple[float, float]:
    """Maximum pull/push magnitudes (negative rates are applied as absolute values)."""
    if params.rate_scheme == "adaptive":
        return (1.0 / n_pos if n_pos else 0.0, 1.0 / n_neg if n_neg else 0.0)
    return abs(params.alpha_pos), abs(params.alpha_neg)


def learning_rates(
    experiences: Sequence[Experience],
    distances: Sequence[float],
    utilities_by_positive: Sequence[float],
    params: PriorParams,
    beta: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-experience pull rates (positives, in order) and push magnitudes (negatives, in order)."""
    if len(experiences) != len(distances):
        raise ValueError("distances must align with experiences")
    pos = [i for i, e in enumerate(experiences) if label(e) == POSITIVE]
    neg = [i for i, e in enumerate(experiences) if label(e) != POSITIVE]
    if len(utilities_by_positive) != len(pos):
        raise ValueError("missing utility for a positive experience")
    a_pos, a_neg = max_rates(params, len(pos), len(neg))
    d = np.asarray(distances, dtype=float)
    kernel = np.exp(-beta * d)
    rates_pos = a_pos * np.asarray(utilities_by_positive, dtype=float) * kernel[pos]
    rates_neg = a_neg * kernel[neg]
    return rates_pos, rates_neg


# ---------------------------------------------------------------------------
# prior construction


def _task_row(e_features, system, include_system: bool) -> np.ndarray:
    row = e_features.as_array()
    if include_system:
        row = np.concatenate([row, system.as_array()])
    return row


def _check_features(experiences: Sequence[Experience], current) -> None:
    for e in experiences:
        if e.task_features.names != current.names:
            raise ValueError(f"experience {e.id}: meta-feature template differs from the current task")


def _ordered(indices: Sequence[int], d: np.ndarray) -> list[int]:
    return sorted(indices, key=lambda i: (d[i], i))


def _take(k: float, items: list[int]) -> list[int]:
    return items if math.isinf(k) else items[: int(k)]


def _metric_names(positives: Sequence[Experience]) -> list[str]:
    return list(positives[0].metrics.names)


def best_metrics(positives: Sequence[Experience]) -> dict[str, float]:
    """Per-metric best value over ``positives`` (max when maximized, min when minimized)."""
    out: dict[str, float] = {}
    for name in _metric_names(positives):
        vals = [e.metrics.values[name] for e in positives]
        out[name] = max(vals) if positives[0].metrics.directions[name] == "maximize" else min(vals)
    return out


@dataclass
class PriorReport:
    rows: list[dict] = field(default_factory=list)
    beta: float | None = None

    def to_dict(self) -> dict:
        return {"beta": self.beta, "experiences": self.rows}


def build_prior(
    state: SamplerState,
    experiences: Sequence[Experience],
    current_features,
    system,
    params: PriorParams,
    best: Mapping[str, float] | None = None,
) -> tuple[SamplerState, PriorReport]:
    """Warm ``state`` with past experiences and report ``(distance, utility, rate)`` per use.

    ``experiences`` must already be restricted to the task family with the
    current task left out.
    """
    report = PriorReport()
    if not experiences:
        return state, report
    _check_features(experiences, current_features)
    space = state.space
    n = len(experiences)
    is_pos = [label(e) == POSITIVE for e in experiences]
    pos_idx = [i for i in range(n) if is_pos[i]]
    neg_idx = [i for i in range(n) if not is_pos[i]]

    rows = np.vstack([_task_row(e.task_features, e.system, params.include_system) for e in experiences])
    query = _task_row(current_features, system, params.include_system)
    scaler = fit_scaler(np.vstack([rows, query[None, :]]))
    q = scaler.transform(query)
    d = np.array([distance(scaler.transform(r), q, params.distance_metric) for r in rows])

    if params.positive_metric_distance and pos_idx:
        positives = [experiences[i] for i in pos_idx]
        names = _metric_names(positives)
        best = dict(best) if best is not None else best_metrics(positives)
        prow = np.vstack([np.concatenate([rows[i], [experiences[i].metrics.values[m] for m in names]]) for i in pos_idx])
        pq = np.concatenate([query, [best[m] for m in names]])
        pscaler = fit_scaler(np.vstack([prow, pq[None, :]]))
        pqs = pscaler.transform(pq)
        for j, i in enumerate(pos_idx):
            d[i] = distance(pscaler.transform(prow[j]), pqs, params.distance_metric)

    beta = params.fixed_beta if params.fixed_beta is not None else compute_beta(d, params.beta_scale, params.beta_variant)
    report.beta = beta

    kept_pos = _take(params.k_pos, _ordered(pos_idx, d))
    kept_neg = _take(params.k_neg, _ordered(neg_idx, d))
    u = utilities([experiences[i].metrics for i in kept_pos], params) if kept_pos else np.zeros(0)
    kept = [experiences[i] for i in kept_pos + kept_neg]
    r_pos, r_neg = learning_rates(kept, [d[i] for i in kept_pos + kept_neg], u, params, beta)

    for j, i in enumerate(kept_pos):
        e = experiences[i]
        state = apply_positive_update(state, empirical_distribution(space, e.config), float(r_pos[j]))
        report.rows.append(
            {"id": e.id, "task_id": e.task_id, "label": "positive", "distance": float(d[i]),
             "utility": float(u[j]), "alpha": float(r_pos[j])}
        )
    for j, i in enumerate(kept_neg):
        e = experiences[i]
        state = apply_negative_update(state, empirical_distribution(space, e.config), float(r_neg[j]))
        report.rows.append(
            {"id": e.id, "task_id": e.task_id, "label": "negative", "distance": float(d[i]),
             "utility": None, "alpha": float(r_neg[j])}
        )
    return state, report


def knn_prior(
    state: SamplerState,
    experiences: Sequence[Experience],
    k: int,
    current_features,
    system,
    best: Mapping[str, float] | None = None,
) -> SamplerState:
    """kNN memory baseline: the ``k`` nearest positives and negatives, each at rate ``1/k``.

    Positives are ranked on standardized ``[features, system, metrics]``
    against a query carrying the best observed metrics; negatives on
    ``[features, system]`` only. When fewer than ``k`` traces exist on a side
    all of them are used.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not experiences:
        return state
    _check_features(experiences, current_features)
    space = state.space
    alpha = 1.0 / k
    positives = [(i, e) for i, e in enumerate(experiences) if label(e) == POSITIVE]
    negatives = [(i, e) for i, e in enumerate(experiences) if label(e) != POSITIVE]

    base = [np.concatenate([e.task_features.as_array(), e.system.as_array()]) for e in experiences]
    query = np.concatenate([current_features.as_array(), system.as_array()])

    pulls: list[tuple[float, int]] = []
    if positives:
        names = list(positives[0][1].metrics.names)
        if best is None:
            best = best_metrics([e for _, e in positives])
        pvecs = np.array([np.concatenate([base[i], [e.metrics.values[m] for m in names]]) for i, e in positives])
        pquery = np.concatenate([query, [best[m] for m in names]])
        sc: Scaler = fit_scaler(np.vstack([pvecs, pquery[None, :]]))
        zq = sc.transform(pquery)
        pulls = sorted((float(np.linalg.norm(sc.transform(v) - zq)), i) for v, (i, _) in zip(pvecs, positives))

    pushes: list[tuple[float, int]] = []
    if negatives:
        sc = fit_scaler(np.vstack(base + [query]))
        zq = sc.transform(query)
        pushes = sorted((float(np.linalg.norm(sc.transform(base[i]) - zq)), i) for i, _ in negatives)

    for _, i in pulls[:k]:
        state = apply_positive_update(state, empirical_distribution(space, experiences[i].config), alpha)
    for _, i in pushes[:k]:
        state = apply_negative_update(state, empirical_distribution(space, experiences[i].config), alpha)
    return state


# ---------------------------------------------------------------------------
# prior stratification


def tv_distance(p: Sequence[float], q: Sequence[float], tol: float = 1e-6) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("dimension mismatch")
    for v in (p, q):
        if (v < -tol).any() or abs(v.sum() - 1.0) > tol:
            raise ValueError("inputs must be probability vectors")
    return float(0.5 * np.abs(p - q).sum())


STRATA = ("low", "moderate", "high")


@dataclass
class Stratification:
    """Candidates sorted by TV to uniform, with stratum labels and representatives."""

    order: list[int]
    tv: list[float]
    strata: dict[str, list[int]]
    representatives: dict[str, dict[str, int]]
    cuts: tuple[int, int]

    def stratum_of(self, index: int) -> str:
        for name, members in self.strata.items():
            if index in members:
                return name
        raise KeyError(index)


def _gap_cuts(tvs: Sequence[float]) -> tuple[int, int] | None:
    """Cut positions ``c`` meaning "split after sorted position c"."""
    gaps = []
    for i in range(len(tvs) - 1):
        lo, hi = tvs[i], tvs[i + 1]
        if hi == lo:
            ratio = 1.0
        elif lo <= 0:
            ratio = math.inf
        else:
            ratio = hi / lo
        gaps.append((ratio, hi - lo, i))
    prominent = sorted((g for g in gaps if g[0] >= 2.0), key=lambda g: (-g[0], -g[1], g[2]))
    chosen = [g[2] for g in prominent[:2]]
    if len(chosen) < 2:
        rest = sorted((g for g in gaps if g[2] not in chosen and g[1] > 0), key=lambda g: (-g[1], g[2]))
        chosen += [g[2] for g in rest[: 2 - len(chosen)]]
    if len(chosen) < 2:
        return None
    a, b = sorted(chosen)
    return a, b


def stratify_priors(candidates: Sequence[tuple[Any, Sequence[float]]]) -> Stratification:
    """Split candidate priors into low/moderate/high bias strata by TV to uniform.

    Cuts go at the two largest ratio gaps of at least 2x between consecutive
    sorted TVs; without two such gaps the largest absolute gaps fill in, and
    when every TV is equal the ranks are split into three equal parts.
    Each stratum reports its median-TV (lower median) and max-TV member.
    """
    if len(candidates) < 3:
        raise ValueError("need at least 3 candidates")
    tv = []
    for _, marginal in candidates:
        m = np.asarray(marginal, dtype=float)
        tv.append(tv_distance(m, np.full(m.size, 1.0 / m.size)))
    order = sorted(range(len(tv)), key=lambda i: (tv[i], i))
    sorted_tv = [tv[i] for i in order]
    cuts = _gap_cuts(sorted_tv)
    n = len(order)
    if cuts is None:
        cuts = (n // 3 - 1 + (n % 3 > 0), 2 * n // 3 - 1 + (n % 3 > 1))
    a, b = cuts
    groups = [order[: a + 1], order[a + 1 : b + 1], order[b + 1 :]]
    strata = dict(zip(STRATA, groups))
    reps = {}
    for name, members in strata.items():
        reps[name] = {"median": members[(len(members) - 1) // 2], "max": members[-1]}
    return Stratification(order, tv, strata, reps, cuts)


def prior_grid() -> list[PriorParams]:
    """The 180-candidate grid used for stratification studies."""
    limits = [(INF, INF), (INF, 0), (50, 50), (10, INF), (0, INF)]
    grid = []
    for metric, scheme, scale, rates, (kp, kn) in itertools.product(
        DISTANCE_METRICS, ("weighted_sum", "linear_front", "log_front"), (0.5, 1.0, 2.0), RATE_SCHEMES, limits
    ):
        grid.append(
            PriorParams(
                distance_metric=metric, utility_scheme=scheme, beta_scale=scale,
                rate_scheme=rates, k_pos=kp, k_neg=kn,
            )
        )
    return grid
