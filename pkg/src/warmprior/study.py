"""End-to-end protocol on surrogate tasks: seed a store with zero-shot runs, then
compare zero-shot, kNN and warm-started runs under the same virtual budget."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .metafeatures import SystemProfile
from .optimizer import Budget, SearchTrace, run_search
from .prior import PriorParams, build_prior, knn_prior
from .space import SamplerState, init_uniform
from .store import Experience
from .surrogate import SurrogateTask

HOUR = 3600.0
SEED_HOURS = 48.0
RUN_HOURS = 24.0


def trace_experiences(trace: SearchTrace, task: SurrogateTask, system: SystemProfile | None = None) -> list[Experience]:
    system = system or task.system
    out = []
    for r in trace.records:
        if r.ok:
            out.append(Experience(task.task_id, task.family, r.config, task.features, system, metrics=r.outcome))
        else:
            out.append(Experience(task.task_id, task.family, r.config, task.features, system, failure=r.outcome.kind))
    return out


def zero_shot(task: SurrogateTask, budget: Budget, seed: int, **kw) -> SearchTrace:
    return run_search(task.space, init_uniform(task.space), task.evaluate, budget, seed=seed, **kw)


def seed_experiences(
    tasks: Iterable[SurrogateTask], hours: float = SEED_HOURS, seed: int = 42, batch_size: int = 5
) -> list[Experience]:
    """Zero-shot run on every task for ``hours`` of virtual time; all outcomes become experiences."""
    out: list[Experience] = []
    for task in tasks:
        trace = zero_shot(task, Budget(wall_clock_limit=hours * HOUR), seed, batch_size=batch_size)
        out.extend(trace_experiences(trace, task))
    return out


def warm_state(
    task: SurrogateTask, experiences: Sequence[Experience], params: PriorParams
) -> SamplerState:
    pool = [e for e in experiences if e.family == task.family and e.task_id != task.task_id]
    state, _ = build_prior(init_uniform(task.space), pool, task.features, task.system, params)
    return state


def knn_state(task: SurrogateTask, experiences: Sequence[Experience], k: int = 50) -> SamplerState:
    pool = [e for e in experiences if e.family == task.family and e.task_id != task.task_id]
    return knn_prior(init_uniform(task.space), pool, k, task.features, task.system)


@dataclass
class ModeRun:
    mode: str
    trace: SearchTrace
    initial: SamplerState


def run_modes(
    task: SurrogateTask,
    experiences: Sequence[Experience],
    priors: dict[str, PriorParams],
    hours: float = RUN_HOURS,
    seed: int = 42,
    knn_k: int | None = None,
    batch_size: int = 5,
) -> dict[str, ModeRun]:
    """Zero-shot plus one run per named prior (and optionally kNN) on ``task``."""
    budget = Budget(wall_clock_limit=hours * HOUR)
    starts: dict[str, SamplerState] = {"zero_shot": init_uniform(task.space)}
    if knn_k is not None:
        starts[f"knn_{knn_k}"] = knn_state(task, experiences, knn_k)
    for name, params in priors.items():
        starts[name] = warm_state(task, experiences, params)
    return {
        name: ModeRun(name, run_search(task.space, s, task.evaluate, budget, batch_size=batch_size, seed=seed), s)
        for name, s in starts.items()
    }
