"""Deterministic surrogate tasks that stand in for real fine-tuning runs.

Every (method, model) arm of the space gets a quality bump over its
continuous hyperparameters, a cost model and failure rules. Arms are
interpreted positionally: models are ordered from smallest to largest
(size factor ``2**i``) and methods from heaviest to lightest.

Quality on arm ``a`` at normalized continuous coordinates ``x``::

    q = peak[a] * exp(-0.5 * sum(((x_j - opt[a, j]) / WIDTH) ** 2))
              * (1 - CAT_PENALTY * mismatched categorical choices / n_categorical)
        + N(0, noise),  clipped to [0, 1]

Evaluation time::

    ET = BASE_SECONDS * size * method_time * epochs_factor * task_scale * jitter[a] * lognormal(noise)

Failure rules are applied first: an arm whose VRAM need exceeds the system
VRAM always fails with ``out_of_memory``; otherwise a hazard draw fails the
run (``timeout`` on the two largest models, ``runtime_error`` elsewhere) with
probability::

    1 - (1 - hazard[a]) * (1 - LR_HAZARD * max(0, x_lr - LR_SAFE) / (1 - LR_SAFE))

where ``x_lr`` is the normalized learning rate when the arm has one. Arm
hazards describe the pipeline and the hardware rather than the data, so they
are drawn once per family and shared by all of its tasks; relatedness only
governs quality optima, costs and meta-features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import yaml

from .metafeatures import MetaFeatureVector, SystemProfile
from .space import Categorical, Configuration, Continuous, SearchSpace, parse_space
from .store import Failure, FitnessVector, Outcome

WIDTH = 0.25
LR_HAZARD = 0.6
LR_SAFE = 0.7
CAT_PENALTY = 0.15
BASE_SECONDS = 80.0
BASE_VRAM_MB = 1500.0
N_LATENT = 10
METHOD_MEMORY = (2.0, 1.2, 0.6)
METHOD_TIME = (1.0, 0.7, 0.5)
QUALITY = "quality"

DEFAULT_SPACE = """\
methods: [full, partial, lora]
models: [tiny, small, base, large, xl]
hyperparameters:
  "*":
    - {name: learning_rate, type: continuous, low: 1.0e-5, high: 1.0e-2, scale: log}
    - {name: dropout, type: continuous, low: 0.0, high: 0.5}
    - {name: epochs, type: categorical, values: [1, 2, 3]}
"""

DEFAULT_SYSTEM = SystemProfile(cpu_cores=16, cpu_freq=3600.0, ram_total=35840.0, gpu_vram=24576.0)


def default_space() -> SearchSpace:
    return parse_space(DEFAULT_SPACE)


class Evaluator(Protocol):
    """Evaluates one configuration; must be pure given ``(config, rng state)``.

    Returns a FitnessVector with positive evaluation time, or a Failure.
    """

    def __call__(self, config: Configuration, rng: np.random.Generator) -> Outcome: ...


def _method_factor(table: tuple[float, ...], index: int) -> float:
    return table[min(index, len(table) - 1)]


def vram_required(space: SearchSpace, config: Configuration) -> float:
    size = 2.0 ** space.models[config.method].index(config.model)
    return BASE_VRAM_MB * size * _method_factor(METHOD_MEMORY, space.methods.index(config.method))


@dataclass
class SurrogateTask:
    task_id: str
    family: str
    space: SearchSpace
    peaks: dict[tuple[str, str], float]
    optima: dict[tuple[str, str], dict[str, float]]
    hazards: dict[tuple[str, str], float]
    jitter: dict[tuple[str, str], float]
    task_scale: float
    features: MetaFeatureVector
    noise: float = 0.01
    seed: int = 0
    system: SystemProfile = field(default_factory=lambda: DEFAULT_SYSTEM)

    def surface(self, config: Configuration) -> float:
        """Noiseless quality of ``config``."""
        arm = config.arm
        sq = 0.0
        mismatch, n_cat = 0.0, 0
        for spec in self.space.hyperparameters[arm]:
            opt = self.optima[arm][spec.name]
            if isinstance(spec, Continuous):
                x = (spec.to_t(float(config.params[spec.name])) - spec.t_lower) / spec.width
                sq += ((x - opt) / WIDTH) ** 2
            else:
                n_cat += 1
                idx = spec.index(config.params[spec.name])
                mismatch += abs(idx - opt) / max(len(spec.values) - 1, 1)
        cat = 1.0 - CAT_PENALTY * (mismatch / n_cat if n_cat else 0.0)
        return float(self.peaks[arm] * math.exp(-0.5 * sq) * cat)

    def cost(self, config: Configuration) -> float:
        """Noiseless evaluation time in seconds."""
        arm = config.arm
        size = 2.0 ** self.space.models[config.method].index(config.model)
        mt = _method_factor(METHOD_TIME, self.space.methods.index(config.method))
        epochs = 1.0
        for spec in self.space.hyperparameters[arm]:
            if isinstance(spec, Categorical) and spec.name == "epochs":
                epochs = float(config.params["epochs"])
        return BASE_SECONDS * size * mt * epochs * self.task_scale * self.jitter[arm]

    def hazard(self, config: Configuration) -> float:
        """Probability that a run of ``config`` fails when it fits in memory."""
        h = self.hazards[config.arm]
        for spec in self.space.hyperparameters[config.arm]:
            if isinstance(spec, Continuous) and spec.name == "learning_rate":
                x = (spec.to_t(float(config.params[spec.name])) - spec.t_lower) / spec.width
                lr = LR_HAZARD * max(0.0, x - LR_SAFE) / (1.0 - LR_SAFE)
                h = 1.0 - (1.0 - h) * (1.0 - lr)
        return h

    def optimum(self, arm: tuple[str, str] | None = None) -> Configuration:
        """The configuration at the peak of ``arm`` (the best arm when omitted)."""
        if arm is None:
            arm = max(self.peaks, key=lambda a: (self.peaks[a], a))
        params = {}
        for spec in self.space.hyperparameters[arm]:
            opt = self.optima[arm][spec.name]
            if isinstance(spec, Continuous):
                params[spec.name] = spec.from_t(spec.t_lower + opt * spec.width)
            else:
                params[spec.name] = spec.values[int(opt)]
        return Configuration(arm[0], arm[1], params)

    def evaluate(self, config: Configuration, rng: np.random.Generator, system: SystemProfile | None = None) -> Outcome:
        system = system or self.system
        self.space.validate(config)
        et = self.cost(config)
        if vram_required(self.space, config) > system.gpu_vram:
            return Failure("out_of_memory", elapsed=min(60.0, et))
        hazard_draw, q_noise, t_noise = rng.random(), rng.standard_normal(), rng.standard_normal()
        if hazard_draw < self.hazard(config):
            large = self.space.models[config.method].index(config.model) >= len(self.space.models[config.method]) - 2
            if large:
                return Failure("timeout", elapsed=math.inf)
            return Failure("runtime_error", elapsed=0.3 * et)
        q = min(max(self.surface(config) + self.noise * q_noise, 0.0), 1.0)
        et = et * math.exp(self.noise * t_noise)
        return FitnessVector.of(et, **{QUALITY: q})

    __call__ = evaluate

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "family": self.family, "seed": self.seed}


def evaluate(task: SurrogateTask, config: Configuration, rng: np.random.Generator) -> Outcome:
    return task.evaluate(config, rng)


@dataclass(frozen=True)
class FamilySpec:
    """Serializable recipe for a task family: seeds and parameters, not sampled values."""

    family_seed: int = 0
    n_tasks: int = 4
    relatedness: float = 0.9
    family: str = "classification"
    noise: float = 0.01
    hazard_low: float = 0.1
    hazard_high: float = 0.95

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> FamilySpec:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown family fields: {sorted(unknown)}")
        return cls(**d)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def load(cls, text: str) -> FamilySpec:
        return cls.from_dict(yaml.safe_load(text) or {})


def _draw_arm_params(space: SearchSpace, rng: np.random.Generator, hazard_low: float, hazard_high: float) -> dict:
    arms = space.arms()
    out = {"peak": {}, "opt": {}, "hazard": {}, "jitter": {}}
    for arm in arms:
        out["peak"][arm] = rng.uniform(0.25, 0.95)
        # a hazard is skewed toward either end so bad arms are clearly bad
        h = rng.beta(0.7, 0.5)
        out["hazard"][arm] = hazard_low + (hazard_high - hazard_low) * h
        out["jitter"][arm] = math.exp(rng.normal(0.0, 0.25))
        opt = {}
        for spec in space.hyperparameters[arm]:
            if isinstance(spec, Continuous):
                opt[spec.name] = rng.uniform(0.15, 0.85)
            else:
                opt[spec.name] = float(rng.integers(len(spec.values)))
        out["opt"][arm] = opt
    out["latent"] = rng.standard_normal(N_LATENT)
    out["scale"] = math.exp(rng.normal(0.0, 0.3))
    return out


def make_task_family(
    family_seed: int,
    n_tasks: int,
    relatedness: float,
    space: SearchSpace | None = None,
    family: str = "classification",
    noise: float = 0.01,
    hazard_low: float = 0.1,
    hazard_high: float = 0.95,
) -> list[SurrogateTask]:
    """Tasks whose hidden parameters mix a shared draw and a per-task draw.

    Each continuous quantity (peaks, optima, cost jitter, task scale) is
    ``r * shared + (1 - r) * own``; arm hazards are shared outright. Categorical
    optima follow the shared draw when a per-task coin with probability ``r``
    comes up, else the task's own. Meta-features are
    ``5 + shared_latent + (1 - r) * own_latent``, so pairwise feature
    distances scale with ``1 - r``.
    """
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    if not 0.0 <= relatedness <= 1.0:
        raise ValueError("relatedness must lie in [0, 1]")
    space = space or default_space()
    r = float(relatedness)
    shared = _draw_arm_params(space, np.random.default_rng([family_seed, 0]), hazard_low, hazard_high)
    tasks = []
    for t in range(n_tasks):
        rng = np.random.default_rng([family_seed, t + 1])
        own = _draw_arm_params(space, rng, hazard_low, hazard_high)
        coin = np.random.default_rng([family_seed, t + 1, 7])

        def mix(a: float, b: float) -> float:
            return r * a + (1.0 - r) * b

        peaks = {a: mix(shared["peak"][a], own["peak"][a]) for a in space.arms()}
        hazards = dict(shared["hazard"])
        jitter = {a: mix(shared["jitter"][a], own["jitter"][a]) for a in space.arms()}
        optima = {}
        for a in space.arms():
            opt = {}
            for spec in space.hyperparameters[a]:
                s, o = shared["opt"][a][spec.name], own["opt"][a][spec.name]
                if isinstance(spec, Continuous):
                    opt[spec.name] = mix(s, o)
                else:
                    opt[spec.name] = s if coin.random() < r else o
            optima[a] = opt
        latent = 5.0 + shared["latent"] + (1.0 - r) * own["latent"]
        features = MetaFeatureVector(
            "surrogate", tuple(f"latent_{i}" for i in range(N_LATENT)), tuple(float(x) for x in latent)
        )
        tasks.append(
            SurrogateTask(
                task_id=f"{family}-{family_seed}-t{t}",
                family=family,
                space=space,
                peaks=peaks,
                optima=optima,
                hazards=hazards,
                jitter=jitter,
                task_scale=mix(shared["scale"], own["scale"]),
                features=features,
                noise=noise,
                seed=family_seed,
            )
        )
    return tasks


def family_from_spec(spec: FamilySpec, space: SearchSpace | None = None) -> list[SurrogateTask]:
    return make_task_family(
        spec.family_seed, spec.n_tasks, spec.relatedness, space=space, family=spec.family,
        noise=spec.noise, hazard_low=spec.hazard_low, hazard_high=spec.hazard_high,
    )
