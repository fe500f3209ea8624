"""Sample-evaluate-update search loop with a virtual clock.

The within-run update is a stand-in for the host optimizer's own rule: the
non-dominated successes of each batch pull the sampler, failures push it,
and dominated successes are ignored.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .prior import front_utility, non_dominated_sort
from .space import (
    Configuration,
    SamplerState,
    SearchSpace,
    apply_negative_update,
    apply_positive_update,
    empirical_distribution,
    sample,
)
from .store import SCHEMA_VERSION, Failure, FitnessVector, Outcome

log = logging.getLogger(__name__)

WITHIN_RUN_RATES = (0.05, 0.02)


class EvaluatorError(RuntimeError):
    """The evaluator returned something outside its contract."""


@dataclass(frozen=True)
class Budget:
    max_evaluations: int | None = None
    wall_clock_limit: float | None = None
    per_pipeline_timeout: float = 5400.0

    def __post_init__(self) -> None:
        if self.max_evaluations is None and self.wall_clock_limit is None:
            raise ValueError("budget needs max_evaluations and/or wall_clock_limit")
        if not self.per_pipeline_timeout > 0:
            raise ValueError("per_pipeline_timeout must be > 0")
        if self.max_evaluations is not None and self.max_evaluations < 0:
            raise ValueError("max_evaluations must be >= 0")


@dataclass(frozen=True)
class EvalRecord:
    index: int
    config: Configuration
    outcome: Outcome
    elapsed: float
    clock: float

    @property
    def ok(self) -> bool:
        return isinstance(self.outcome, FitnessVector)

    def to_dict(self) -> dict:
        ok = self.ok
        return {
            "schema_version": SCHEMA_VERSION,
            "index": self.index,
            "config": self.config.to_dict(),
            "metrics": self.outcome.to_dict() if ok else None,
            "failure": None if ok else self.outcome.kind,
            "elapsed": self.elapsed,
            "clock": self.clock,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvalRecord:
        if d["metrics"] is not None:
            outcome: Outcome = FitnessVector.from_dict(d["metrics"])
        else:
            outcome = Failure(d["failure"], d["elapsed"])
        return cls(d["index"], Configuration.from_dict(d["config"]), outcome, d["elapsed"], d["clock"])


@dataclass
class SearchTrace:
    records: list[EvalRecord] = field(default_factory=list)
    final_state: SamplerState | None = None
    seed: int | None = None

    @property
    def successes(self) -> list[EvalRecord]:
        return [r for r in self.records if r.ok]

    @property
    def failures(self) -> list[EvalRecord]:
        return [r for r in self.records if not r.ok]

    def until(self, seconds: float) -> SearchTrace:
        """Prefix of the trace that completed within ``seconds`` of virtual time."""
        return SearchTrace([r for r in self.records if r.clock <= seconds], None, self.seed)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.records)

    def write(self, path: str | Path) -> None:
        _atomic_write(Path(path), self.to_jsonl())

    @classmethod
    def read(cls, path: str | Path) -> SearchTrace:
        records = [
            EvalRecord.from_dict(json.loads(line))
            for line in Path(path).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        return cls(records)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def eval_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for the ``index``-th evaluation of a run."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _check_outcome(outcome: object) -> None:
    if isinstance(outcome, FitnessVector):
        et = outcome.evaluation_time
        if not (math.isfinite(et) and et > 0):
            raise EvaluatorError(f"evaluator reported evaluation_time={et!r}; must be finite and > 0")
    elif not isinstance(outcome, Failure):
        raise EvaluatorError(f"evaluator returned {type(outcome).__name__}, expected FitnessVector or Failure")


def update_from_batch(
    state: SamplerState,
    records: Sequence[EvalRecord],
    rates: tuple[float, float] = WITHIN_RUN_RATES,
) -> SamplerState:
    """Pull toward the batch's non-dominated successes, push away from its failures."""
    if not records:
        raise ValueError("batch must be non-empty")
    a_pos, a_neg = rates
    space = state.space
    ok = [r for r in records if r.ok]
    if ok:
        fronts, n = non_dominated_sort([r.outcome for r in ok])
        for r, f in zip(ok, fronts):
            if f == 0:
                u = front_utility(f, n, "linear")
                state = apply_positive_update(state, empirical_distribution(space, r.config), a_pos * u)
    for r in records:
        if not r.ok:
            state = apply_negative_update(state, empirical_distribution(space, r.config), a_neg)
    return state


def run_search(
    space: SearchSpace,
    initial_state: SamplerState,
    evaluator: Callable[[Configuration, np.random.Generator], Outcome],
    budget: Budget,
    batch_size: int = 5,
    seed: int = 42,
    rates: tuple[float, float] = WITHIN_RUN_RATES,
    virtual_clock: bool = True,
    workers: int = 1,
    on_record: Callable[[EvalRecord], None] | None = None,
) -> SearchTrace:
    """Run the loop until a budget limit trips.

    With ``virtual_clock`` the clock advances by each evaluation's reported
    time (failures by their elapsed time, capped at the per-pipeline
    timeout); otherwise by measured wall time. A success slower than the
    per-pipeline timeout is recorded as a ``timeout`` failure. An evaluation
    that would finish past ``wall_clock_limit`` is discarded and ends the run.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if initial_state.space is not space:
        if initial_state.categorical.keys() != {k for k, _ in space.categorical_nodes()}:
            raise ValueError("initial state does not belong to the space")
    rng = np.random.default_rng(seed)
    state = initial_state
    trace = SearchTrace(seed=seed)
    clock = 0.0
    timeout = budget.per_pipeline_timeout
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def timed(job: tuple[int, Configuration]) -> tuple[Outcome, float]:
        idx, cfg = job
        t0 = time.perf_counter()
        out = evaluator(cfg, eval_rng(seed, idx))
        return out, time.perf_counter() - t0

    try:
        done = False
        while not done:
            if budget.max_evaluations is not None and len(trace.records) >= budget.max_evaluations:
                break
            if budget.wall_clock_limit is not None and clock >= budget.wall_clock_limit:
                break
            n = batch_size
            if budget.max_evaluations is not None:
                n = min(n, budget.max_evaluations - len(trace.records))
            start = len(trace.records)
            jobs = [(start + i, sample(state, rng)) for i in range(n)]
            results = list(pool.map(timed, jobs)) if pool else [timed(j) for j in jobs]

            batch: list[EvalRecord] = []
            for (idx, cfg), (outcome, wall) in zip(jobs, results):
                _check_outcome(outcome)
                if isinstance(outcome, FitnessVector):
                    spent = outcome.evaluation_time
                    if spent > timeout:
                        outcome, spent = Failure("timeout", timeout), timeout
                else:
                    spent = min(outcome.elapsed, timeout)
                    if spent != outcome.elapsed:
                        outcome = Failure(outcome.kind, spent)
                if not virtual_clock:
                    spent = wall
                if budget.wall_clock_limit is not None and clock + spent > budget.wall_clock_limit:
                    done = True
                    break
                clock += spent
                rec = EvalRecord(idx, cfg, outcome, spent, clock)
                batch.append(rec)
                if on_record is not None:
                    on_record(rec)
            if batch:
                trace.records.extend(batch)
                state = update_from_batch(state, batch, rates)
    finally:
        if pool is not None:
            pool.shutdown()
    trace.final_state = state
    log.debug("search finished: %d evaluations, clock %.0fs", len(trace.records), clock)
    return trace


def pareto_archive(trace: SearchTrace | Sequence[EvalRecord]) -> list[tuple[float, float]]:
    """Non-dominated ``(quality, evaluation_time)`` points of the successful records.

    Exact duplicates keep their first occurrence.
    """
    records = trace.records if isinstance(trace, SearchTrace) else list(trace)
    pts = [(r.outcome.quality, r.outcome.evaluation_time) for r in records if r.ok]
    return pareto_front(pts)


def pareto_front(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Non-dominated subset under (maximize quality, minimize time), first duplicate kept."""
    out: list[tuple[float, float]] = []
    seen: set[tuple[float, float]] = set()
    for i, (q, t) in enumerate(points):
        if (q, t) in seen:
            continue
        dominated = any(
            (q2 >= q and t2 <= t) and (q2 > q or t2 < t) for j, (q2, t2) in enumerate(points) if j != i
        )
        if not dominated:
            out.append((q, t))
            seen.add((q, t))
    return out
