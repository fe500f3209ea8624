"""Mixed discrete/continuous pipeline space and the probabilistic sampler over it.

The space has three levels: a fine-tuning method (root categorical), a model
conditional on the method, and a list of hyperparameter specs attached to each
(method, model) arm. The sampler keeps one probability vector per categorical
node and one truncated normal per continuous node; continuous nodes live on a
transformed scale (identity for ``linear``, ``log10`` for ``log``).

Node keys:
    ``method``                     root categorical over methods
    ``model[<method>]``            categorical over that method's models
    ``<method>/<model>/<param>``   one hyperparameter of one arm
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np
import yaml
from scipy.special import ndtr, ndtri

EPS_PROB = 1e-6
METHOD_NODE = "method"


class SpaceError(ValueError):
    """Raised when a space definition is malformed or a config does not fit it."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Categorical:
    name: str
    values: tuple

    def __post_init__(self) -> None:
        if not self.values:
            raise SpaceError(f"categorical {self.name!r} has no values")
        if len(set(map(repr, self.values))) != len(self.values):
            raise SpaceError(f"categorical {self.name!r} has duplicate values")

    def index(self, value: Any) -> int:
        for i, v in enumerate(self.values):
            if v == value:
                return i
        raise SpaceError(f"value {value!r} not in {self.name!r}")


@dataclass(frozen=True)
class Continuous:
    name: str
    lower: float
    upper: float
    scale: str = "linear"

    def __post_init__(self) -> None:
        if self.scale not in ("linear", "log"):
            raise SpaceError(f"{self.name!r}: unknown scale {self.scale!r}")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise SpaceError(f"{self.name!r}: bounds must be finite")
        if not self.lower < self.upper:
            raise SpaceError(f"{self.name!r}: lower bound {self.lower} must be < upper {self.upper}")
        if self.scale == "log" and self.lower <= 0:
            raise SpaceError(f"{self.name!r}: log scale requires positive bounds")

    @property
    def t_lower(self) -> float:
        return math.log10(self.lower) if self.scale == "log" else self.lower

    @property
    def t_upper(self) -> float:
        return math.log10(self.upper) if self.scale == "log" else self.upper

    @property
    def width(self) -> float:
        return self.t_upper - self.t_lower

    def to_t(self, value: float) -> float:
        return math.log10(value) if self.scale == "log" else float(value)

    def from_t(self, t: float) -> float:
        raw = 10.0**t if self.scale == "log" else t
        return min(max(raw, self.lower), self.upper)

    def contains(self, value: Any) -> bool:
        try:
            v = float(value)
        except (TypeError, ValueError):
            return False
        return self.lower <= v <= self.upper


ParamSpec = Categorical | Continuous


@dataclass(frozen=True)
class Configuration:
    """One concrete pipeline: method, model and hyperparameter values."""

    method: str
    model: str
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"method": self.method, "model": self.model, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> Configuration:
        return cls(d["method"], d["model"], dict(d.get("params", {})))

    @property
    def arm(self) -> tuple[str, str]:
        return (self.method, self.model)


@dataclass
class SearchSpace:
    methods: list[str]
    models: dict[str, list[str]]
    hyperparameters: dict[tuple[str, str], list[ParamSpec]]
    _uniform: SamplerState | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.methods:
            raise SpaceError("no methods")
        if len(set(self.methods)) != len(self.methods):
            raise SpaceError("duplicate method id")
        for m in self.methods:
            models = self.models.get(m)
            if not models:
                raise SpaceError(f"method {m!r} has no models")
            if len(set(models)) != len(models):
                raise SpaceError(f"duplicate model id under method {m!r}")
            for mod in models:
                specs = self.hyperparameters.setdefault((m, mod), [])
                names = [s.name for s in specs]
                if len(set(names)) != len(names):
                    raise SpaceError(f"duplicate hyperparameter in arm {m}/{mod}")
        extra = set(self.hyperparameters) - set(self.arms())
        if extra:
            raise SpaceError(f"hyperparameters for unknown arms: {sorted(extra)}")

    def arms(self) -> list[tuple[str, str]]:
        return [(m, mod) for m in self.methods for mod in self.models[m]]

    def categorical_nodes(self) -> Iterator[tuple[str, int]]:
        """Yield ``(key, n_values)`` for every categorical node in canonical order."""
        yield METHOD_NODE, len(self.methods)
        for m in self.methods:
            yield model_node(m), len(self.models[m])
        for arm in self.arms():
            for spec in self.hyperparameters[arm]:
                if isinstance(spec, Categorical):
                    yield param_node(arm, spec.name), len(spec.values)

    def continuous_nodes(self) -> Iterator[tuple[str, Continuous]]:
        for arm in self.arms():
            for spec in self.hyperparameters[arm]:
                if isinstance(spec, Continuous):
                    yield param_node(arm, spec.name), spec

    def spec(self, arm: tuple[str, str], name: str) -> ParamSpec:
        for s in self.hyperparameters[arm]:
            if s.name == name:
                return s
        raise SpaceError(f"unknown hyperparameter {name!r} for arm {arm[0]}/{arm[1]}")

    def validate(self, config: Configuration) -> None:
        if config.method not in self.methods:
            raise SpaceError(f"unknown method {config.method!r}")
        if config.model not in self.models[config.method]:
            raise SpaceError(f"unknown model {config.model!r} for method {config.method!r}")
        specs = self.hyperparameters[config.arm]
        expected = {s.name for s in specs}
        if set(config.params) != expected:
            raise SpaceError(
                f"params {sorted(config.params)} do not match arm {config.method}/{config.model} "
                f"({sorted(expected)})"
            )
        for s in specs:
            v = config.params[s.name]
            if isinstance(s, Categorical):
                s.index(v)
            elif not s.contains(v):
                raise SpaceError(f"{s.name}={v!r} outside [{s.lower}, {s.upper}]")

    def path_nodes(self, config: Configuration) -> frozenset[str]:
        arm = config.arm
        keys = {METHOD_NODE, model_node(config.method)}
        keys.update(param_node(arm, s.name) for s in self.hyperparameters[arm])
        return frozenset(keys)


def model_node(method: str) -> str:
    return f"model[{method}]"


def param_node(arm: tuple[str, str], name: str) -> str:
    return f"{arm[0]}/{arm[1]}/{name}"


# ---------------------------------------------------------------------------
# space file parsing


def _spec_from_mapping(d: Any, where: str) -> ParamSpec:
    if not isinstance(d, dict):
        raise SpaceError(f"{where}: parameter spec must be a mapping")
    name = d.get("name")
    if not isinstance(name, str) or not name:
        raise SpaceError(f"{where}: parameter spec needs a name")
    kind = d.get("type")
    if kind == "categorical":
        values = d.get("values")
        if not isinstance(values, list):
            raise SpaceError(f"{where}: categorical {name!r} needs a values list")
        return Categorical(name, tuple(values))
    if kind == "continuous":
        try:
            lo, hi = float(d["low"]), float(d["high"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SpaceError(f"{where}: continuous {name!r} needs numeric low/high") from exc
        return Continuous(name, lo, hi, d.get("scale", "linear"))
    raise SpaceError(f"{where}: unknown parameter type {kind!r}")


def _scope_matches(scope: str, arm: tuple[str, str]) -> int | None:
    """Return the specificity of ``scope`` for ``arm`` or None when it does not apply."""
    if scope == "*":
        return 0
    if "/" not in scope:
        raise SpaceError(f"bad hyperparameter scope {scope!r} (expected '*' or 'method/model')")
    m, mod = scope.split("/", 1)
    if m not in ("*", arm[0]) or mod not in ("*", arm[1]):
        return None
    return (m != "*") + (mod != "*")


def parse_space(text: str) -> SearchSpace:
    """Parse a YAML space definition (grammar documented in the README).

    Raises:
        SpaceError: on YAML syntax errors (with line number) and on semantic
            errors such as duplicate ids or inverted bounds.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise SpaceError(f"syntax error: {exc.problem}", line=line) from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise SpaceError("space document must be a mapping", line=1)

    raw_methods = doc.get("methods") or []
    if not isinstance(raw_methods, list):
        raise SpaceError("'methods' must be a list")
    if not raw_methods:
        raise SpaceError("no methods")
    shared_models = doc.get("models")

    methods: list[str] = []
    models: dict[str, list[str]] = {}
    for entry in raw_methods:
        if isinstance(entry, str):
            mid, mods = entry, shared_models
        elif isinstance(entry, dict) and "id" in entry:
            mid, mods = str(entry["id"]), entry.get("models", shared_models)
        else:
            raise SpaceError(f"bad method entry {entry!r}")
        if mid in models:
            raise SpaceError(f"duplicate method id {mid!r}")
        if not isinstance(mods, list) or not mods:
            raise SpaceError(f"method {mid!r} has no models")
        methods.append(mid)
        models[mid] = [str(x) for x in mods]

    raw_hp = doc.get("hyperparameters") or {}
    if not isinstance(raw_hp, dict):
        raise SpaceError("'hyperparameters' must be a mapping of scope -> list")
    scoped: list[tuple[str, list[ParamSpec]]] = []
    for scope, specs in raw_hp.items():
        if not isinstance(specs, list):
            raise SpaceError(f"scope {scope!r}: expected a list of parameter specs")
        scoped.append((str(scope), [_spec_from_mapping(s, f"scope {scope!r}") for s in specs]))

    hyper: dict[tuple[str, str], list[ParamSpec]] = {}
    for m in methods:
        for mod in models[m]:
            arm = (m, mod)
            applicable = []
            for order, (scope, specs) in enumerate(scoped):
                level = _scope_matches(scope, arm)
                if level is not None:
                    applicable.append((level, order, specs))
            merged: dict[str, ParamSpec] = {}
            # more specific scopes override general ones; insertion order kept for new names
            for _, _, specs in sorted(applicable, key=lambda t: (t[0], t[1])):
                for s in specs:
                    merged[s.name] = s
            hyper[arm] = list(merged.values())

    for scope, _ in scoped:
        if scope != "*":
            m, mod = scope.split("/", 1)
            if m != "*" and m not in models:
                raise SpaceError(f"scope {scope!r} names unknown method {m!r}")
            if mod != "*" and not any(mod in models[x] for x in models if m in ("*", x)):
                raise SpaceError(f"scope {scope!r} names unknown model {mod!r}")

    return SearchSpace(methods, models, hyper)


def dump_space(space: SearchSpace) -> str:
    """Serialize ``space`` back to the YAML grammar, one scope per arm."""
    hp = {}
    for arm in space.arms():
        specs = []
        for s in space.hyperparameters[arm]:
            if isinstance(s, Categorical):
                specs.append({"name": s.name, "type": "categorical", "values": list(s.values)})
            else:
                specs.append(
                    {"name": s.name, "type": "continuous", "low": s.lower, "high": s.upper, "scale": s.scale}
                )
        if specs:
            hp[f"{arm[0]}/{arm[1]}"] = specs
    doc = {"methods": [{"id": m, "models": list(space.models[m])} for m in space.methods], "hyperparameters": hp}
    return yaml.safe_dump(doc, sort_keys=False)


# ---------------------------------------------------------------------------
# sampler state


@dataclass(frozen=True)
class SamplerState:
    """The probabilistic model over configurations.

    Arrays are shared between states produced by updates and must be treated
    as read-only. ``active`` is only set on induced (empirical) states and
    names the nodes on the realized path; updates leave other nodes alone.
    """

    space: SearchSpace
    categorical: dict[str, np.ndarray]
    continuous: dict[str, tuple[float, float]]
    active: frozenset[str] | None = None

    def method_marginal(self) -> np.ndarray:
        return self.categorical[METHOD_NODE].copy()

    def is_active(self, key: str) -> bool:
        return self.active is None or key in self.active

    def check_invariants(self, tol: float = 1e-9) -> None:
        for key, p in self.categorical.items():
            if abs(p.sum() - 1.0) > tol or p.min() < EPS_PROB:
                raise AssertionError(f"node {key}: invalid distribution {p}")
        for key, spec in self.space.continuous_nodes():
            mean, std = self.continuous[key]
            if not std > 0 or not (spec.t_lower - 1e-12 <= mean <= spec.t_upper + 1e-12):
                raise AssertionError(f"node {key}: invalid (mean={mean}, std={std})")

    def to_dict(self) -> dict:
        return {
            "categorical": {k: v.tolist() for k, v in self.categorical.items()},
            "continuous": {k: list(v) for k, v in self.continuous.items()},
        }

    @classmethod
    def from_dict(cls, space: SearchSpace, d: dict) -> SamplerState:
        cat = {k: np.asarray(v, dtype=float) for k, v in d["categorical"].items()}
        cont = {k: (float(v[0]), float(v[1])) for k, v in d["continuous"].items()}
        state = cls(space, cat, cont)
        _check_same_space(state, init_uniform(space))
        return state


def init_uniform(space: SearchSpace) -> SamplerState:
    if space._uniform is None:
        space._uniform = _uniform(space)
    u = space._uniform
    return SamplerState(space, dict(u.categorical), dict(u.continuous))


def _uniform(space: SearchSpace) -> SamplerState:
    cat = {key: np.full(n, 1.0 / n) for key, n in space.categorical_nodes()}
    cont = {
        key: ((spec.t_lower + spec.t_upper) / 2.0, spec.width / 4.0)
        for key, spec in space.continuous_nodes()
    }
    return SamplerState(space, cat, cont)


def empirical_distribution(space: SearchSpace, config: Configuration) -> SamplerState:
    """Distribution concentrated on ``config``: one-hot on its path, uniform elsewhere.

    Continuous nodes on the path are centred on the observed value with stddev
    of one eighth of the range; off-path continuous nodes keep their uniform
    initialisation.
    """
    space.validate(config)
    base = init_uniform(space)
    cat = dict(base.categorical)
    cont = dict(base.continuous)

    def one_hot(n: int, i: int) -> np.ndarray:
        v = np.zeros(n)
        v[i] = 1.0
        return v

    cat[METHOD_NODE] = one_hot(len(space.methods), space.methods.index(config.method))
    mods = space.models[config.method]
    cat[model_node(config.method)] = one_hot(len(mods), mods.index(config.model))
    for spec in space.hyperparameters[config.arm]:
        key = param_node(config.arm, spec.name)
        value = config.params[spec.name]
        if isinstance(spec, Categorical):
            cat[key] = one_hot(len(spec.values), spec.index(value))
        else:
            cont[key] = (spec.to_t(float(value)), spec.width / 8.0)
    return SamplerState(space, cat, cont, active=space.path_nodes(config))


def clamp_normalize(p: np.ndarray, eps: float = EPS_PROB) -> np.ndarray:
    """Clamp entries to ``eps`` and renormalize so the result sums to one.

    Entries that would drop below ``eps`` after rescaling are pinned at
    ``eps`` and the remainder is rescaled again, so the floor survives the
    renormalization.
    """
    p = np.asarray(p, dtype=float)
    n = p.size
    pinned = p <= eps
    if pinned.all():
        return np.full(n, 1.0 / n)
    out = np.empty(n)
    while True:
        free_mass = 1.0 - eps * pinned.sum()
        free = p[~pinned]
        scaled = free * (free_mass / free.sum())
        low = scaled < eps
        if not low.any():
            out[pinned] = eps
            out[~pinned] = scaled
            return out
        idx = np.flatnonzero(~pinned)[low]
        pinned[idx] = True


def _check_same_space(a: SamplerState, b: SamplerState) -> None:
    if a.categorical.keys() != b.categorical.keys() or a.continuous.keys() != b.continuous.keys():
        raise SpaceError("sampler states are defined on different spaces")
    for key, p in a.categorical.items():
        if p.shape != b.categorical[key].shape:
            raise SpaceError(f"node {key}: size mismatch")


def _continuous_bounds(space: SearchSpace) -> dict[str, Continuous]:
    return dict(space.continuous_nodes())


def apply_positive_update(state: SamplerState, induced: SamplerState, alpha: float) -> SamplerState:
    """Pull ``state`` toward ``induced``: ``P <- (1 - alpha) P + alpha P_i``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    _check_same_space(state, induced)
    if alpha == 0.0:
        return SamplerState(state.space, dict(state.categorical), dict(state.continuous))
    cat = dict(state.categorical)
    cont = dict(state.continuous)
    for key, q in induced.categorical.items():
        if induced.is_active(key):
            cat[key] = clamp_normalize((1.0 - alpha) * state.categorical[key] + alpha * q)
    for key, (qm, qs) in induced.continuous.items():
        if induced.is_active(key):
            m, s = state.continuous[key]
            cont[key] = ((1.0 - alpha) * m + alpha * qm, (1.0 - alpha) * s + alpha * qs)
    return SamplerState(state.space, cat, cont)


def apply_negative_update(state: SamplerState, induced: SamplerState, alpha: float) -> SamplerState:
    """Push ``state`` away from ``induced``: ``P <- (1 + alpha) P - alpha P_i``.

    ``alpha`` is the magnitude of the negative rate. Categorical vectors are
    clamped and renormalized; continuous means are clamped to the range and
    stddevs floored at one hundredth of the range.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    _check_same_space(state, induced)
    if alpha == 0.0:
        return SamplerState(state.space, dict(state.categorical), dict(state.continuous))
    cat = dict(state.categorical)
    cont = dict(state.continuous)
    for key, q in induced.categorical.items():
        if induced.is_active(key):
            cat[key] = clamp_normalize((1.0 + alpha) * state.categorical[key] - alpha * q)
    bounds = _continuous_bounds(state.space)
    for key, (qm, qs) in induced.continuous.items():
        if induced.is_active(key):
            spec = bounds[key]
            m, s = state.continuous[key]
            m = min(max((1.0 + alpha) * m - alpha * qm, spec.t_lower), spec.t_upper)
            s = max(spec.width / 100.0, (1.0 + alpha) * s - alpha * qs)
            cont[key] = (m, s)
    return SamplerState(state.space, cat, cont)


def method_marginal(state: SamplerState) -> np.ndarray:
    return state.method_marginal()


def _draw_categorical(p: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(p)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(i, p.size - 1)


def _draw_truncnorm(mean: float, std: float, lo: float, hi: float, rng: np.random.Generator) -> float:
    a = ndtr((lo - mean) / std)
    b = ndtr((hi - mean) / std)
    u = a + rng.random() * (b - a)
    if not 0.0 < u < 1.0 or b - a <= 0.0:
        return min(max(mean, lo), hi)
    return float(min(max(mean + std * ndtri(u), lo), hi))


def sample(state: SamplerState, rng: np.random.Generator) -> Configuration:
    """Draw one configuration. Draw order: method, model, then arm params in spec order."""
    space = state.space
    method = space.methods[_draw_categorical(state.categorical[METHOD_NODE], rng)]
    mods = space.models[method]
    model = mods[_draw_categorical(state.categorical[model_node(method)], rng)]
    arm = (method, model)
    params: dict[str, Any] = {}
    for spec in space.hyperparameters[arm]:
        key = param_node(arm, spec.name)
        if isinstance(spec, Categorical):
            params[spec.name] = spec.values[_draw_categorical(state.categorical[key], rng)]
        else:
            mean, std = state.continuous[key]
            t = _draw_truncnorm(mean, std, spec.t_lower, spec.t_upper, rng)
            params[spec.name] = spec.from_t(t)
    return Configuration(method, model, params)


def sample_batch(state: SamplerState, rng: np.random.Generator, n: int) -> list[Configuration]:
    return [sample(state, rng) for _ in range(n)]


def space_from_lists(
    methods: Sequence[str],
    models: Sequence[str],
    params: Sequence[ParamSpec] = (),
) -> SearchSpace:
    """Build a fully crossed space where every arm shares ``params``."""
    return SearchSpace(
        list(methods),
        {m: list(models) for m in methods},
        {(m, mod): list(params) for m in methods for mod in models},
    )
