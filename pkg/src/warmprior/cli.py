"""Command-line entry point: ``warmprior <command> [options]``.

Commands mirror the experimental protocol on surrogate tasks: seed a store
with zero-shot runs, build or stratify priors, run a search in one mode and
report comparisons. Every JSON output embeds ``config_hash``, the sha256 of
the canonical resolved configuration, and every file is replaced atomically.
Validation failures print ``error: ...`` and exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Sequence

import yaml

from . import analysis
from .metafeatures import extract_from_file
from .optimizer import Budget, SearchTrace, run_search
from .prior import PriorParams, build_prior, knn_prior, prior_grid, stratify_priors
from .space import SamplerState, SpaceError, dump_space, init_uniform, method_marginal, parse_space
from .store import Experience, ExperienceStore, StoreError, counts_by_label
from .study import HOUR, RUN_HOURS, SEED_HOURS, trace_experiences
from .surrogate import FamilySpec, SurrogateTask, default_space, family_from_spec

log = logging.getLogger("warmprior")

MODES = ("zero_shot", "knn", "warm")
ENV_STORE = "WARMPRIOR_STORE"
ENV_OUT = "WARMPRIOR_OUT"


class UsageError(ValueError):
    """Invalid command-line input."""


# ---------------------------------------------------------------- helpers


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_json(path: Path, doc: dict) -> None:
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    raise TypeError(f"not serializable: {type(x).__name__}")


def file_digest(path: Path) -> str | None:
    if not path.exists():
        return None
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_space(path: str | None):
    if path is None:
        return default_space()
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"space file not found: {path}")
    return parse_space(p.read_text(encoding="utf-8"))


def load_family(args) -> FamilySpec:
    d = {}
    if args.family:
        p = Path(args.family)
        if not p.is_file():
            raise UsageError(f"family file not found: {args.family}")
        d = FamilySpec.load(p.read_text(encoding="utf-8")).to_dict()
    for key in ("family_seed", "n_tasks", "relatedness"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    spec = FamilySpec.from_dict(d)
    if spec.n_tasks < 1:
        raise UsageError("n_tasks must be >= 1")
    if not 0.0 <= spec.relatedness <= 1.0:
        raise UsageError("relatedness must lie in [0, 1]")
    return spec


def load_prior(path: str | None) -> PriorParams:
    if path is None:
        return PriorParams()
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"prior file not found: {path}")
    return PriorParams.load(p.read_text(encoding="utf-8"))


def pick_task(tasks: list[SurrogateTask], index: int) -> SurrogateTask:
    if not 0 <= index < len(tasks):
        raise UsageError(f"task index {index} out of range for a family of {len(tasks)}")
    return tasks[index]


def make_budget(args, default_hours: float) -> Budget:
    seconds = args.budget_seconds
    if seconds is None and args.budget_evals is None:
        seconds = default_hours * HOUR
    if seconds is not None and not seconds > 0:
        raise UsageError("--budget-seconds must be > 0")
    return Budget(max_evaluations=args.budget_evals, wall_clock_limit=seconds)


def budget_dict(b: Budget) -> dict:
    return {
        "max_evaluations": b.max_evaluations,
        "wall_clock_limit": b.wall_clock_limit,
        "per_pipeline_timeout": b.per_pipeline_timeout,
    }


def open_store(path: str | None, must_exist: bool = True) -> tuple[Path, ExperienceStore]:
    path = path or os.environ.get(ENV_STORE)
    if not path:
        raise UsageError(f"--store is required (or set {ENV_STORE})")
    p = Path(path)
    if must_exist and not p.is_file():
        raise UsageError(f"store not found: {path}")
    return p, ExperienceStore(p)


def out_dir(args) -> Path:
    out = args.out or os.environ.get(ENV_OUT)
    if not out:
        raise UsageError(f"--out is required (or set {ENV_OUT})")
    return Path(out)


def pool_for(store: ExperienceStore, task: SurrogateTask) -> list[Experience]:
    return store.query(task.family, exclude_task=task.task_id)


def marginal_doc(state: SamplerState) -> dict:
    return {"methods": list(state.space.methods), "probabilities": method_marginal(state).tolist()}


# ---------------------------------------------------------------- commands


def cmd_extract_features(args) -> int:
    path = Path(args.dataset)
    if not path.is_file():
        raise UsageError(f"dataset not found: {args.dataset}")
    vec = extract_from_file(path, args.template)
    config = {"command": "extract-features", "dataset_sha256": file_digest(path), "template": args.template}
    doc = {"config": config, "config_hash": config_hash(config), "features": vec.to_dict()}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_seed_store(args) -> int:
    space = load_space(args.space)
    spec = load_family(args)
    tasks = family_from_spec(spec, space)
    indices = args.tasks if args.tasks is not None else list(range(len(tasks)))
    chosen = [pick_task(tasks, i) for i in indices]
    budget = make_budget(args, SEED_HOURS)
    store_path, _ = open_store(args.store, must_exist=False)

    experiences: list[Experience] = []
    for task in chosen:
        trace = run_search(
            space, init_uniform(space), task.evaluate, budget,
            batch_size=args.batch_size, seed=args.seed, virtual_clock=args.virtual_clock,
        )
        experiences.extend(trace_experiences(trace, task))

    # build the whole file next to the target, then swap it in
    store_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = store_path.with_name(store_path.name + ".building")
    tmp.unlink(missing_ok=True)
    if args.append and store_path.exists():
        tmp.write_bytes(store_path.read_bytes())
    ExperienceStore(tmp).extend(experiences)
    os.replace(tmp, store_path)

    config = {
        "command": "seed-store", "space": dump_space(space), "family": spec.to_dict(),
        "tasks": indices, "budget": budget_dict(budget), "seed": args.seed,
        "batch_size": args.batch_size, "virtual_clock": args.virtual_clock,
    }
    counts = counts_by_label(experiences)
    doc = {"config": config, "config_hash": config_hash(config), "store": str(store_path),
           "added": len(experiences), **counts,
           "per_task": {t.task_id: counts_by_label([e for e in experiences if e.task_id == t.task_id]) for t in chosen}}
    if args.out:
        write_json(Path(args.out), doc)
    sys.stdout.write(json.dumps({k: doc[k] for k in ("config_hash", "added", "positive", "negative")}) + "\n")
    return 0


def cmd_build_prior(args) -> int:
    space = load_space(args.space)
    spec = load_family(args)
    task = pick_task(family_from_spec(spec, space), args.task)
    store_path, store = open_store(args.store)
    params = load_prior(args.prior)
    state, report = build_prior(init_uniform(space), pool_for(store, task), task.features, task.system, params)
    config = {
        "command": "build-prior", "space": dump_space(space), "family": spec.to_dict(), "task": args.task,
        "prior": params.to_dict(), "store_sha256": file_digest(store_path),
    }
    h = config_hash(config)
    out = out_dir(args)
    write_json(out / "state.json", {
        "config": config, "config_hash": h, "task_id": task.task_id,
        "method_marginal": marginal_doc(state), "state": state.to_dict(), "beta": report.beta,
    })
    atomic_write(out / "prior_report.csv", _rows_csv(report.rows, ("id", "task_id", "label", "distance", "utility", "alpha")))
    return 0


def _rows_csv(rows: Sequence[dict], fields: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if row.get(k) is None else row[k]) for k in fields})
    return buf.getvalue()


def load_grid(path: str | None) -> list[PriorParams]:
    if path is None:
        return prior_grid()
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"grid file not found: {path}")
    doc = yaml.safe_load(p.read_text(encoding="utf-8"))
    if not isinstance(doc, list) or not doc:
        raise UsageError("grid file must hold a non-empty list of prior documents")
    return [PriorParams.from_dict(d) for d in doc]


def cmd_stratify(args) -> int:
    space = load_space(args.space)
    spec = load_family(args)
    task = pick_task(family_from_spec(spec, space), args.task)
    store_path, store = open_store(args.store)
    grid = load_grid(args.grid)
    pool = pool_for(store, task)
    base = init_uniform(space)
    marginals = []
    for params in grid:
        state, _ = build_prior(base, pool, task.features, task.system, params)
        marginals.append(method_marginal(state).tolist())
    ids = [f"p{i:03d}" for i in range(len(grid))]
    strat = stratify_priors(list(zip(ids, marginals)))

    config = {
        "command": "stratify", "space": dump_space(space), "family": spec.to_dict(), "task": args.task,
        "grid": [p.to_dict() for p in grid], "store_sha256": file_digest(store_path),
    }
    h = config_hash(config)
    out = out_dir(args)
    rows = [{"candidate": ids[i], "tv": strat.tv[i], "stratum": strat.stratum_of(i)} for i in strat.order]
    atomic_write(out / "strata.csv", _rows_csv(rows, ("candidate", "tv", "stratum")))
    selected = {
        name: {role: {"candidate": ids[i], "tv": strat.tv[i], "prior": grid[i].to_dict()} for role, i in reps.items()}
        for name, reps in strat.representatives.items()
    }
    write_json(out / "selected.json", {"config_hash": h, "selected": selected})
    for name, reps in strat.representatives.items():
        for role, i in reps.items():
            atomic_write(out / "priors" / f"{name}_{role}.yaml", grid[i].dump())
    write_json(out / "marginals.json", {
        "config_hash": h, "methods": list(space.methods),
        "series": {ids[i]: marginals[i] for i in range(len(grid))},
    })
    return 0


def _start_state(args, space, task, store_path: Path | None, store: ExperienceStore | None):
    if args.mode == "zero_shot":
        return init_uniform(space), {}
    pool = pool_for(store, task)
    extra = {"store_sha256": file_digest(store_path)}
    if args.mode == "knn":
        if args.k is None or args.k < 1:
            raise UsageError("--mode knn needs --k >= 1")
        return knn_prior(init_uniform(space), pool, args.k, task.features, task.system), {**extra, "k": args.k}
    params = load_prior(args.prior)
    state, _ = build_prior(init_uniform(space), pool, task.features, task.system, params)
    return state, {**extra, "prior": params.to_dict()}


def cmd_run(args) -> int:
    if args.mode != "knn" and args.k is not None:
        raise UsageError("--k only applies to --mode knn")
    if args.mode != "warm" and args.prior is not None:
        raise UsageError("--prior only applies to --mode warm")
    space = load_space(args.space)
    spec = load_family(args)
    task = pick_task(family_from_spec(spec, space), args.task)
    store_path = store = None
    if args.mode != "zero_shot":
        store_path, store = open_store(args.store)
    budget = make_budget(args, RUN_HOURS)
    state, extra = _start_state(args, space, task, store_path, store)
    trace = run_search(
        space, state, task.evaluate, budget, batch_size=args.batch_size, seed=args.seed,
        virtual_clock=args.virtual_clock, workers=args.workers,
    )
    name = args.name or (f"knn_{args.k}" if args.mode == "knn" else args.mode)
    config = {
        "command": "run", "mode": args.mode, "space": dump_space(space), "family": spec.to_dict(),
        "task": args.task, "budget": budget_dict(budget), "seed": args.seed, "batch_size": args.batch_size,
        "virtual_clock": args.virtual_clock, **extra,
    }
    out = out_dir(args)
    trace.write(out / "trace.jsonl")
    write_json(out / "summary.json", {
        "name": name, "config": config, "config_hash": config_hash(config), "task_id": task.task_id,
        "summary": analysis.summarize(trace), "initial_marginal": marginal_doc(state),
        "final_marginal": marginal_doc(trace.final_state),
    })
    return 0


def _load_trace(path: str) -> tuple[str, SearchTrace, dict | None]:
    p = Path(path)
    meta = None
    if p.is_dir():
        summary = p / "summary.json"
        if summary.is_file():
            meta = json.loads(summary.read_text(encoding="utf-8"))
        p = p / "trace.jsonl"
    if not p.is_file():
        raise UsageError(f"trace not found: {path}")
    name = meta["name"] if meta and "name" in meta else (p.parent.name if p.name == "trace.jsonl" else p.stem)
    return name, SearchTrace.read(p), meta


def cmd_report(args) -> int:
    loaded = [_load_trace(p) for p in args.traces]
    base_name, base_trace, base_meta = _load_trace(args.baseline)
    traces: dict[str, SearchTrace] = {}
    metas: dict[str, dict | None] = {}
    for name, tr, meta in [(base_name, base_trace, base_meta), *loaded]:
        if name in traces and name != base_name:
            raise UsageError(f"duplicate run name {name!r}; rename with run --name")
        traces.setdefault(name, tr)
        metas.setdefault(name, meta)

    rows = analysis.comparison_table(traces, base_name)
    marginals = {n: m["initial_marginal"]["probabilities"] for n, m in metas.items() if m}
    methods = next((m["initial_marginal"]["methods"] for m in metas.values() if m), None)
    config = {
        "command": "report", "baseline": base_name,
        "traces": {n: hashlib.sha256(tr.to_jsonl().encode()).hexdigest() for n, tr in traces.items()},
    }
    h = config_hash(config)
    out = out_dir(args)
    atomic_write(out / "table.csv", analysis.table_csv(rows))
    write_json(out / "table.json", {"config_hash": h, "baseline": base_name, "rows": rows})
    plot = analysis.plot_data(traces, marginals or None, methods)
    plot["config_hash"] = h
    write_json(out / "plot.json", plot)
    sys.stdout.write(analysis.table_csv(rows))
    return 0


# ---------------------------------------------------------------- parser


def _family_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", help="surrogate family YAML (FamilySpec fields)")
    p.add_argument("--family-seed", type=int, dest="family_seed")
    p.add_argument("--n-tasks", type=int, dest="n_tasks")
    p.add_argument("--relatedness", type=float)
    p.add_argument("--space", help="search space YAML (default: built-in surrogate space)")


def _budget_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--budget-evals", type=int, dest="budget_evals")
    p.add_argument("--budget-seconds", type=float, dest="budget_seconds")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--batch-size", type=int, default=5, dest="batch_size")
    p.add_argument("--virtual-clock", action=argparse.BooleanOptionalAction, default=True, dest="virtual_clock")


def _index_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated task indices, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="warmprior", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-features", help="meta-features of a TSV dataset")
    p.add_argument("dataset")
    p.add_argument("--template", choices=("label_based", "generation"), required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("seed-store", help="zero-shot runs on surrogate tasks, every outcome stored")
    _family_args(p)
    _budget_args(p)
    p.add_argument("--store")
    p.add_argument("--tasks", type=_index_list, help="task indices (default: all)")
    p.add_argument("--append", action="store_true", help="keep existing records instead of rebuilding")
    p.add_argument("--out", help="optional JSON summary path")
    p.set_defaults(func=cmd_seed_store)

    p = sub.add_parser("build-prior", help="warm state plus per-experience report")
    _family_args(p)
    p.add_argument("--store")
    p.add_argument("--task", type=int, default=0)
    p.add_argument("--prior", help="prior parameters YAML")
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_prior)

    p = sub.add_parser("stratify", help="split a grid of priors into bias strata")
    _family_args(p)
    p.add_argument("--store")
    p.add_argument("--task", type=int, default=0)
    p.add_argument("--grid", help="YAML list of prior documents (default: built-in grid)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stratify)

    p = sub.add_parser("run", help="one search run")
    _family_args(p)
    _budget_args(p)
    p.add_argument("--store")
    p.add_argument("--task", type=int, default=0)
    p.add_argument("--mode", choices=MODES, default="zero_shot")
    p.add_argument("--k", type=int)
    p.add_argument("--prior")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--name", help="label used by report (default: derived from mode)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="comparison table, win ratios and plot data")
    p.add_argument("traces", nargs="+", help="run directories or trace files")
    p.add_argument("--baseline", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, SpaceError, StoreError, ValueError, KeyError, yaml.YAMLError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
