import csv
import json

import pytest

from warmprior.cli import main
from warmprior.store import ExperienceStore, counts_by_label

from conftest import data_path

FAMILY = ["--family-seed", "1", "--n-tasks", "3", "--relatedness", "0.9"]
SHORT = ["--budget-seconds", "36000"]


@pytest.fixture(scope="module")
def seeded(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    store = root / "store.jsonl"
    assert main(["seed-store", "--store", str(store), *FAMILY, *SHORT, "--tasks", "1,2"]) == 0
    return root, store


def test_extract_features(tmp_path):
    out = tmp_path / "f.json"
    assert main(["extract-features", str(data_path("generation.tsv")), "--template", "generation", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    feats = dict(zip(doc["features"]["names"], doc["features"]["values"]))
    assert feats["rouge_l_f1"] == pytest.approx((2 / 3 + 6 / 7 + 1 / 2) / 3)
    assert len(doc["config_hash"]) == 64


def test_seed_store_rebuilds(seeded):
    root, store = seeded
    n = len(ExperienceStore(store))
    assert n > 0
    assert {e.task_id for e in ExperienceStore(store)} == {"classification-1-t1", "classification-1-t2"}
    main(["seed-store", "--store", str(root / "again.jsonl"), *FAMILY, *SHORT, "--tasks", "1,2"])
    assert len(ExperienceStore(root / "again.jsonl")) == n


def test_high_hazard_family_mostly_negative(tmp_path):
    fam = tmp_path / "fam.yaml"
    fam.write_text("family_seed: 5\nn_tasks: 2\nrelatedness: 0.5\nhazard_low: 0.6\nhazard_high: 0.98\n")
    store = tmp_path / "s.jsonl"
    assert main(["seed-store", "--store", str(store), "--family", str(fam), *SHORT]) == 0
    c = counts_by_label(ExperienceStore(store).all())
    assert c["negative"] > 2 * c["positive"]


def test_run_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--mode", "zero_shot", *FAMILY, *SHORT, "--seed", "42", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "trace.jsonl").read_bytes() == (tmp_path / "b" / "trace.jsonl").read_bytes()
    sa = json.loads((tmp_path / "a" / "summary.json").read_text())
    sb = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert sa["config_hash"] == sb["config_hash"]


def test_modes_and_report(seeded, tmp_path):
    root, store = seeded
    runs = {}
    for mode, extra in [("zero_shot", []), ("knn", ["--k", "50"]), ("warm", [])]:
        out = tmp_path / mode
        assert main(["run", "--mode", mode, *extra, "--store", str(store), *FAMILY, *SHORT, "--out", str(out)]) == 0
        runs[mode] = out
    assert main(["report", str(runs["knn"]), str(runs["warm"]), "--baseline", str(runs["zero_shot"]),
                 "--out", str(tmp_path / "rep")]) == 0
    rows = list(csv.DictReader((tmp_path / "rep" / "table.csv").open()))
    assert [r["prior"] for r in rows] == ["zero_shot", "knn_50", "warm"]
    plot = json.loads((tmp_path / "rep" / "plot.json").read_text())
    assert set(plot["pareto"]) == {"zero_shot", "knn_50", "warm"}
    assert len(plot["method_marginals"]["methods"]) == 3


def test_report_self_win_ratio(tmp_path):
    out = tmp_path / "zs"
    main(["run", "--mode", "zero_shot", *FAMILY, *SHORT, "--out", str(out)])
    main(["report", str(out), "--baseline", str(out), "--out", str(tmp_path / "rep")])
    doc = json.loads((tmp_path / "rep" / "table.json").read_text())
    from warmprior.optimizer import SearchTrace, pareto_front

    tr = SearchTrace.read(out / "trace.jsonl")
    pts = [(r.outcome.quality, r.outcome.evaluation_time) for r in tr.successes]
    front = set(pareto_front(pts))
    expected = sum(p in front for p in pts) / len(pts)
    assert doc["rows"][0]["win_ratio"] == pytest.approx(expected)


def test_build_prior_and_stratify(seeded, tmp_path):
    root, store = seeded
    prior = tmp_path / "p.yaml"
    prior.write_text("utility_scheme: log_front\nk_neg: 10\n")
    assert main(["build-prior", "--store", str(store), *FAMILY, "--prior", str(prior), "--out", str(tmp_path / "bp")]) == 0
    state = json.loads((tmp_path / "bp" / "state.json").read_text())
    assert sum(state["method_marginal"]["probabilities"]) == pytest.approx(1.0)
    rows = list(csv.DictReader((tmp_path / "bp" / "prior_report.csv").open()))
    assert sum(r["label"] == "negative" for r in rows) <= 10

    grid = tmp_path / "grid.yaml"
    grid.write_text("- {k_pos: 0}\n- {k_neg: 0}\n- {}\n- {rate_scheme: adaptive}\n- {beta_scale: 2.0}\n")
    assert main(["stratify", "--store", str(store), *FAMILY, "--grid", str(grid), "--out", str(tmp_path / "st")]) == 0
    strata = list(csv.DictReader((tmp_path / "st" / "strata.csv").open()))
    assert len(strata) == 5 and {r["stratum"] for r in strata} == {"low", "moderate", "high"}
    assert (tmp_path / "st" / "priors" / "high_max.yaml").exists()


@pytest.mark.parametrize("argv", [
    ["run", "--mode", "knn", "--out", "x"],
    ["run", "--mode", "warm", "--store", "/nonexistent/s.jsonl", "--out", "x"],
    ["run", "--mode", "zero_shot", "--space", "/nonexistent.yaml", "--out", "x"],
    ["run", "--mode", "zero_shot", "--task", "9", "--out", "x"],
    ["run", "--mode", "zero_shot", "--relatedness", "2", "--out", "x"],
    ["extract-features", "/nonexistent.tsv", "--template", "generation"],
])
def test_validation_exits_nonzero(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("WARMPRIOR_STORE", raising=False)
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_bad_space_file(tmp_path, capsys):
    bad = tmp_path / "space.yaml"
    bad.write_text("methods: [a, b\n")
    assert main(["run", "--space", str(bad), "--budget-evals", "5", "--out", str(tmp_path / "o")]) == 2
    assert "line" in capsys.readouterr().err


def test_custom_space(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--space", str(data_path("space.yaml")), *FAMILY, "--budget-evals", "20", "--out", str(out)]) == 0
    assert len((out / "trace.jsonl").read_text().splitlines()) == 20
