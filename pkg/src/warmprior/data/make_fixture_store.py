"""Regenerate ``fixture_store.jsonl``: synthetic experiences at one tenth of the
per-dataset positive/negative counts of the reference study.

    python make_fixture_store.py [output]
"""

import sys
from pathlib import Path

import numpy as np

from warmprior.metafeatures import LABEL_BASED_FEATURES, GENERATION_FEATURES, MetaFeatureVector
from warmprior.space import init_uniform, sample
from warmprior.store import Experience, ExperienceStore, FitnessVector
from warmprior.surrogate import DEFAULT_SYSTEM, default_space

# dataset -> (family, positives, negatives)
COUNTS = {
    "liar": ("classification", 10, 24),
    "sst2": ("classification", 3, 12),
    "meld": ("classification", 7, 19),
    "ag_news": ("classification", 2, 17),
    "squad": ("qa", 1, 12),
    "drop": ("qa", 1, 16),
}
FAILURES = ("out_of_memory", "timeout", "runtime_error")
TIMESTAMP = "2025-01-01T00:00:00+00:00"


def features(family: str, rng: np.random.Generator) -> MetaFeatureVector:
    template, names = ("label_based", LABEL_BASED_FEATURES) if family == "classification" else ("generation", GENERATION_FEATURES)
    return MetaFeatureVector(template, names, tuple(float(x) for x in rng.uniform(0.1, 10.0, len(names))))


def main(out: Path) -> None:
    space = default_space()
    state = init_uniform(space)
    rng = np.random.default_rng(2025)
    out.unlink(missing_ok=True)
    store = ExperienceStore(out)
    for task, (family, n_pos, n_neg) in COUNTS.items():
        feats = features(family, rng)
        for i in range(n_pos + n_neg):
            cfg = sample(state, rng)
            if i < n_pos:
                metrics = FitnessVector.of(float(rng.uniform(30, 5000)), quality=float(rng.uniform(0.1, 0.9)))
                e = Experience(task, family, cfg, feats, DEFAULT_SYSTEM, metrics=metrics)
            else:
                e = Experience(task, family, cfg, feats, DEFAULT_SYSTEM, failure=FAILURES[i % 3])
            store.append(e, timestamp=TIMESTAMP)


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).with_name("fixture_store.jsonl"))
