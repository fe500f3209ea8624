from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from warmprior.metafeatures import MetaFeatureVector, SystemProfile
from warmprior.space import Continuous, Categorical, Configuration, init_uniform, sample, space_from_lists
from warmprior.store import Experience, FitnessVector

SYSTEM = SystemProfile(cpu_cores=16, cpu_freq=3600.0, ram_total=35840.0, gpu_vram=24576.0)

FAILURE_KINDS = ("out_of_memory", "timeout", "runtime_error")


def data_path(name: str) -> Path:
    return Path(str(resources.files("warmprior") / "data" / name))


def small_space(n_methods: int = 3, n_models: int = 2):
    return space_from_lists(
        [f"m{i}" for i in range(n_methods)],
        [f"x{j}" for j in range(n_models)],
        [Continuous("lr", 1e-5, 1e-3, "log"), Categorical("epochs", (1, 2, 3))],
    )


def feats(values, template: str = "t") -> MetaFeatureVector:
    values = tuple(float(v) for v in values)
    return MetaFeatureVector(template, tuple(f"f{i}" for i in range(len(values))), values)


def random_experiences(space, rng: np.random.Generator, n: int, task_prefix: str = "task", family: str = "fam",
                       dim: int = 4, p_pos: float = 0.5) -> list[Experience]:
    state = init_uniform(space)
    out = []
    task_features = {t: feats(rng.normal(size=dim)) for t in range(4)}
    for i in range(n):
        t = int(rng.integers(4))
        cfg = sample(state, rng)
        if rng.random() < p_pos:
            m = FitnessVector.of(float(rng.uniform(10, 1000)), quality=float(rng.uniform(0, 1)))
            e = Experience(f"{task_prefix}{t}", family, cfg, task_features[t], SYSTEM, metrics=m, id=f"r{i}")
        else:
            e = Experience(f"{task_prefix}{t}", family, cfg, task_features[t], SYSTEM,
                           failure=FAILURE_KINDS[i % 3], id=f"r{i}")
        out.append(e)
    return out


@pytest.fixture
def space():
    return small_space()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def config(method="m0", model="x0", lr=1e-4, epochs=1) -> Configuration:
    return Configuration(method, model, {"lr": lr, "epochs": epochs})
