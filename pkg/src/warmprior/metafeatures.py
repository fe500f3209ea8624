"""Task meta-features, hardware profile, standardization and task distances.

Two templates are supported: ``label_based`` for closed-label tasks and
``generation`` for prompt/target tasks. Text lengths are measured in
characters; tokens are lowercase runs of word characters.
"""

from __future__ import annotations

import math
import os
import re
import shutil
import subprocess
import zlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

EPS_SCALE = 1e-8

LABEL_BASED_FEATURES = (
    "nr_samples",
    "nr_classes",
    "entropy",
    "min_class_prob",
    "max_class_prob",
    "imbalance_ratio",
    "avg_length",
    "std_length",
    "cv_length",
    "landmark_accuracy",
)

GENERATION_FEATURES = (
    "nr_samples",
    "prompt_avg_length",
    "prompt_std_length",
    "prompt_ttr",
    "target_avg_length",
    "target_std_length",
    "target_ttr",
    "length_ratio",
    "vocabulary_novelty",
    "semantic_similarity",
    "rouge_l_f1",
)

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class MetaFeatureVector:
    template: str
    names: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.names) != len(self.values):
            raise ValueError("names and values differ in length")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("meta-features must be finite")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def __getitem__(self, name: str) -> float:
        return self.values[self.names.index(name)]

    def to_dict(self) -> dict:
        return {"template": self.template, "names": list(self.names), "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: Mapping) -> MetaFeatureVector:
        return cls(d["template"], tuple(d["names"]), tuple(float(v) for v in d["values"]))


@dataclass(frozen=True)
class SystemProfile:
    cpu_cores: int
    cpu_freq: float
    ram_total: float
    gpu_vram: float = 0.0

    FIELDS = ("cpu_cores", "cpu_freq", "ram_total", "gpu_vram")

    def __post_init__(self) -> None:
        if self.cpu_cores < 1:
            raise ValueError("cpu_cores must be >= 1")
        if min(self.cpu_freq, self.ram_total, self.gpu_vram) < 0:
            raise ValueError("system profile values must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.cpu_cores, self.cpu_freq, self.ram_total, self.gpu_vram], dtype=float)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.FIELDS}

    @classmethod
    def from_dict(cls, d: Mapping) -> SystemProfile:
        return cls(int(d["cpu_cores"]), float(d["cpu_freq"]), float(d["ram_total"]), float(d.get("gpu_vram", 0.0)))


# ---------------------------------------------------------------------------
# label-based template


def _entropy_bits(probs: Iterable[float]) -> float:
    h = -sum(p * math.log2(p) for p in probs if p > 0)
    return max(h, 0.0)


def _length_stats(texts: Sequence[str]) -> tuple[float, float]:
    lengths = np.array([len(t) for t in texts], dtype=float)
    return float(lengths.mean()), float(lengths.std())


def extract_label_based(docs: Sequence[tuple[str, object]]) -> MetaFeatureVector:
    """Label-based template over ``(text, label)`` pairs.

    The landmark feature needs at least 10 documents and 2 classes; below
    that it falls back to the majority-class rate.
    """
    if len(docs) < 2:
        raise ValueError("need at least 2 documents")
    texts = [t for t, _ in docs]
    labels = [y for _, y in docs]
    n = len(docs)
    counts = Counter(labels)
    probs = [c / n for c in counts.values()]
    p_min, p_max = min(probs), max(probs)
    avg, std = _length_stats(texts)
    if len(counts) >= 2 and n >= 10:
        landmark = landmark_accuracy(docs)
    else:
        landmark = p_max
    values = (
        float(n),
        float(len(counts)),
        _entropy_bits(probs) if len(counts) > 1 else 0.0,
        p_min,
        p_max,
        p_max / p_min if len(counts) > 1 else 1.0,
        avg,
        std,
        std / avg if avg > 0 else 0.0,
        landmark,
    )
    return MetaFeatureVector("label_based", LABEL_BASED_FEATURES, values)


# ---------------------------------------------------------------------------
# landmarking: hashed bag-of-words -> PCA (power iteration) -> depth-3 Gini tree

HASH_BUCKETS = 2**12
PCA_COMPONENTS = 8
TREE_DEPTH = 3
LANDMARK_SEED = 42
TRAIN_FRACTION = 0.7


def _bucket(token: str) -> int:
    return zlib.crc32(token.encode("utf-8")) % HASH_BUCKETS


def hashed_bow(texts: Sequence[str]) -> np.ndarray:
    X = np.zeros((len(texts), HASH_BUCKETS))
    for i, t in enumerate(texts):
        for tok in tokenize(t):
            X[i, _bucket(tok)] += 1.0
    return X


def pca_power_iteration(
    X: np.ndarray, n_components: int, seed: int = LANDMARK_SEED, iters: int = 300, tol: float = 1e-10
) -> tuple[np.ndarray, np.ndarray]:
    """Top principal directions of ``X`` by power iteration with deflation.

    Returns ``(mean, components)`` with components as rows. Directions whose
    variance is numerically zero are dropped, so fewer than ``n_components``
    rows may come back.
    """
    mean = X.mean(axis=0)
    Xc = X - mean
    rng = np.random.default_rng(seed)
    comps: list[np.ndarray] = []
    total = float((Xc**2).sum())
    for _ in range(n_components):
        v = rng.standard_normal(X.shape[1])
        for c in comps:
            v -= (v @ c) * c
        norm = np.linalg.norm(v)
        if norm == 0:
            break
        v /= norm
        eig = 0.0
        for _ in range(iters):
            w = Xc.T @ (Xc @ v)
            for c in comps:
                w -= (w @ c) * c
            eig = float(np.linalg.norm(w))
            if eig <= 1e-12 * max(total, 1.0):
                break
            w /= eig
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        if eig <= 1e-12 * max(total, 1.0):
            break
        comps.append(v)
    if not comps:
        return mean, np.zeros((0, X.shape[1]))
    return mean, np.vstack(comps)


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - (p * p).sum())


@dataclass
class _Node:
    prediction: int
    feature: int = -1
    threshold: float = 0.0
    left: _Node | None = None
    right: _Node | None = None


def fit_tree(X: np.ndarray, y: np.ndarray, n_classes: int, depth: int = TREE_DEPTH) -> _Node:
    """Greedy Gini decision tree. Ties go to the lowest feature, then lowest threshold."""
    counts = np.bincount(y, minlength=n_classes)
    node = _Node(prediction=int(np.argmax(counts)))
    if depth == 0 or (counts > 0).sum() <= 1:
        return node
    parent = _gini(counts)
    best = (parent - 1e-12, -1, 0.0)
    n = len(y)
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        left = np.zeros(n_classes)
        right = counts.astype(float).copy()
        for i in range(n - 1):
            left[ys[i]] += 1
            right[ys[i]] -= 1
            if xs[i] == xs[i + 1]:
                continue
            nl = i + 1
            score = (nl * _gini(left) + (n - nl) * _gini(right)) / n
            if score < best[0]:
                best = (score, f, (xs[i] + xs[i + 1]) / 2.0)
    if best[1] < 0:
        return node
    _, f, thr = best
    mask = X[:, f] <= thr
    node.feature, node.threshold = f, thr
    node.left = fit_tree(X[mask], y[mask], n_classes, depth - 1)
    node.right = fit_tree(X[~mask], y[~mask], n_classes, depth - 1)
    return node


def predict_tree(node: _Node, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X), dtype=int)
    for i, x in enumerate(X):
        cur = node
        while cur.left is not None:
            cur = cur.left if x[cur.feature] <= cur.threshold else cur.right
        out[i] = cur.prediction
    return out


def landmark_accuracy(docs: Sequence[tuple[str, object]]) -> float:
    """Held-out accuracy of a PCA + depth-3 decision tree on hashed bag-of-words.

    Deterministic: fixed 70/30 split and PCA initialisation, both seeded with 42.
    Degenerate input (all texts identical) returns the majority-class rate.
    """
    if len(docs) < 10:
        raise ValueError("landmarking needs at least 10 documents")
    texts = [t for t, _ in docs]
    classes = sorted({y for _, y in docs}, key=repr)
    if len(classes) < 2:
        raise ValueError("landmarking needs at least 2 classes")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[lab] for _, lab in docs])
    if len(set(texts)) == 1:
        return float(np.bincount(y).max() / len(y))

    perm = np.random.default_rng(LANDMARK_SEED).permutation(len(docs))
    n_train = int(round(TRAIN_FRACTION * len(docs)))
    tr, te = perm[:n_train], perm[n_train:]
    X = hashed_bow(texts)
    k = min(PCA_COMPONENTS, X.shape[1])
    mean, comps = pca_power_iteration(X[tr], k)
    Z = (X - mean) @ comps.T
    tree = fit_tree(Z[tr], y[tr], len(classes))
    pred = predict_tree(tree, Z[te])
    return float((pred == y[te]).mean())


# ---------------------------------------------------------------------------
# generation template


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, yv in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == yv else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l_f1(candidate: Sequence[str], reference: Sequence[str]) -> float:
    if not candidate and not reference:
        return 1.0
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(candidate), lcs / len(reference)
    return 2 * p * r / (p + r)


class Embedder(Protocol):
    dim: int

    def __call__(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Signed feature hashing of tokens, l2-normalized. Token-free text maps to zeros."""

    def __init__(self, dim: int = 64):
        self.dim = dim

    def __call__(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in tokenize(text):
            h = zlib.crc32(tok.encode("utf-8"))
            v[h % self.dim] += 1.0 if (h >> 16) & 1 else -1.0
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _ttr(token_lists: Sequence[list[str]]) -> float:
    tokens = [t for toks in token_lists for t in toks]
    if not tokens:
        return 1.0
    return len(set(tokens)) / len(tokens)


def extract_generation(
    pairs: Sequence[tuple[str, str]], embedder: Embedder | None = None
) -> MetaFeatureVector:
    """Generation template over ``(prompt, target)`` pairs, with a mean prompt embedding block."""
    if not pairs:
        raise ValueError("need at least 1 pair")
    embedder = embedder or HashingEmbedder()
    prompts = [p for p, _ in pairs]
    targets = [t for _, t in pairs]
    p_tok = [tokenize(p) for p in prompts]
    t_tok = [tokenize(t) for t in targets]
    p_avg, p_std = _length_stats(prompts)
    t_avg, t_std = _length_stats(targets)

    ratios, novelty, sims, rouges, embs = [], [], [], [], []
    for prompt, target, pt, tt in zip(prompts, targets, p_tok, t_tok):
        ratios.append(len(target) / max(len(prompt), 1))
        if tt:
            seen = set(pt)
            novelty.append(sum(1 for t in tt if t not in seen) / len(tt))
        else:
            novelty.append(0.0)
        ep, et = embedder(prompt), embedder(target)
        # signed hashing can yield negative cosines; similarity is floored at 0
        sims.append(max(cosine_similarity(ep, et), 0.0))
        rouges.append(rouge_l_f1(tt, pt))
        embs.append(ep)

    values = [
        float(len(pairs)),
        p_avg,
        p_std,
        _ttr(p_tok),
        t_avg,
        t_std,
        _ttr(t_tok),
        float(np.mean(ratios)),
        float(np.mean(novelty)),
        float(np.mean(sims)),
        float(np.mean(rouges)),
    ]
    mean_emb = np.mean(embs, axis=0)
    names = GENERATION_FEATURES + tuple(f"prompt_emb_{i}" for i in range(len(mean_emb)))
    return MetaFeatureVector("generation", names, tuple(values) + tuple(float(x) for x in mean_emb))


# ---------------------------------------------------------------------------
# dataset fixtures


def read_dataset(path: str | Path) -> list[tuple[str, str]]:
    """Read a two-column tab-separated fixture, skipping blank and ``#`` lines.

    Rows come back as raw column pairs: ``(label, text)`` for label-based
    files and ``(prompt, target)`` for generation files.
    """
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two tab-separated columns")
        rows.append((parts[0], parts[1]))
    return rows


def extract_from_file(path: str | Path, template: str) -> MetaFeatureVector:
    rows = read_dataset(path)
    if template == "label_based":
        return extract_label_based([(text, label) for label, text in rows])
    if template == "generation":
        return extract_generation(rows)
    raise ValueError(f"unknown template {template!r}")


# ---------------------------------------------------------------------------
# system profile


def _cpu_freq_mhz() -> float:
    try:
        for line in Path("/proc/cpuinfo").read_text().splitlines():
            if line.lower().startswith("cpu mhz"):
                return float(line.split(":")[1])
    except (OSError, ValueError, IndexError):
        pass
    return 0.0


def _ram_total_mb() -> float:
    try:
        for line in Path("/proc/meminfo").read_text().splitlines():
            if line.startswith("MemTotal:"):
                return float(line.split()[1]) / 1024.0
    except (OSError, ValueError, IndexError):
        pass
    return 0.0


def _gpu_vram_mb() -> float:
    exe = shutil.which("nvidia-smi")
    if exe is None:
        return 0.0
    try:
        out = subprocess.run(
            [exe, "--query-gpu=memory.total", "--format=csv,noheader,nounits"],
            capture_output=True, text=True, timeout=10, check=True,
        ).stdout
        return max((float(x) for x in out.split()), default=0.0)
    except (OSError, subprocess.SubprocessError, ValueError):
        return 0.0


_ALIASES = {"cores": "cpu_cores", "freq": "cpu_freq", "ram": "ram_total", "vram": "gpu_vram"}


def system_profile(
    overrides: Mapping[str, float] | None = None,
    gpu_probe: Callable[[], float] = _gpu_vram_mb,
) -> SystemProfile:
    """Host hardware profile; any field may be overridden (short aliases accepted)."""
    values = {}
    for k, v in (overrides or {}).items():
        key = _ALIASES.get(k, k)
        if key not in SystemProfile.FIELDS:
            raise ValueError(f"unknown system profile field {k!r}")
        values[key] = v
    probes = {
        "cpu_cores": lambda: os.cpu_count() or 1,
        "cpu_freq": _cpu_freq_mhz,
        "ram_total": _ram_total_mb,
        "gpu_vram": gpu_probe,
    }
    for key, probe in probes.items():
        if key not in values:
            values[key] = probe()
    return SystemProfile(int(values["cpu_cores"]), float(values["cpu_freq"]), float(values["ram_total"]), float(values["gpu_vram"]))


# ---------------------------------------------------------------------------
# standardization and distance


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    template: str | None = None

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / (self.std + EPS_SCALE)


def fit_scaler(vectors: Sequence[MetaFeatureVector] | np.ndarray) -> Scaler:
    """Per-dimension mean and population std. Accepts feature vectors or a 2-D array."""
    template = None
    if isinstance(vectors, np.ndarray):
        X = np.atleast_2d(vectors.astype(float))
    else:
        if not vectors:
            raise ValueError("need at least one vector")
        template = vectors[0].template
        names = vectors[0].names
        for v in vectors:
            if v.template != template or v.names != names:
                raise ValueError("template mismatch between feature vectors")
        X = np.vstack([v.as_array() for v in vectors])
    if X.shape[0] == 0:
        raise ValueError("need at least one vector")
    return Scaler(X.mean(axis=0), X.std(axis=0), template)


def standardize(scaler: Scaler, v: MetaFeatureVector | np.ndarray) -> np.ndarray:
    if isinstance(v, MetaFeatureVector):
        if scaler.template is not None and v.template != scaler.template:
            raise ValueError("template mismatch")
        v = v.as_array()
    if np.shape(v)[-1] != scaler.mean.shape[0]:
        raise ValueError("dimension mismatch")
    return scaler.transform(v)


def distance(a: np.ndarray, b: np.ndarray, metric: str = "euclidean") -> float:
    """Euclidean distance or cosine distance (``1 - cos``; a zero vector gives 1)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    if metric == "euclidean":
        return float(np.linalg.norm(a - b))
    if metric == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            return 1.0
        return float(max(0.0, 1.0 - np.clip(a @ b / (na * nb), -1.0, 1.0)))
    raise ValueError(f"unknown metric {metric!r}")
