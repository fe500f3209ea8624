import math

import numpy as np
import pytest

from warmprior.prior import (
    BETA_MAX,
    PriorParams,
    build_prior,
    compute_beta,
    front_utility,
    knn_prior,
    learning_rates,
    non_dominated_sort,
    prior_grid,
    stratify_priors,
    tv_distance,
    utility_front,
    utility_weighted_sum,
)
from warmprior.space import EPS_PROB, init_uniform, method_marginal
from warmprior.store import Experience, FitnessVector

from conftest import SYSTEM, config, feats, random_experiences


def brute_fronts(X):
    """Peel fronts by repeated full scans (maximize every column)."""
    X = np.asarray(X)
    left = set(range(len(X)))
    fronts = [None] * len(X)
    rank = 0
    while left:
        cur = [i for i in left if not any(
            all(X[j] >= X[i]) and any(X[j] > X[i]) for j in left if j != i)]
        for i in cur:
            fronts[i] = rank
        left -= set(cur)
        rank += 1
    return fronts, rank


def pos(q, et, task="a", cfg=None, f=(0.0, 0.0)):
    return Experience(task, "fam", cfg or config(), feats(f), SYSTEM, metrics=FitnessVector.of(et, quality=q))


def neg(task="a", cfg=None, f=(0.0, 0.0)):
    return Experience(task, "fam", cfg or config(), feats(f), SYSTEM, failure="runtime_error")


class TestBeta:
    def test_std_only(self):
        assert compute_beta([1, 2, 3], 1.0, "std_only") == pytest.approx(1 / (math.sqrt(2 / 3) + 1e-8))
        assert compute_beta([1, 2, 3], 1.0, "std_only") == pytest.approx(1.2247, abs=1e-4)

    def test_std_plus_mean(self):
        assert compute_beta([1, 2, 3], 1.0, "std_plus_mean") == pytest.approx(0.3550, abs=1e-4)

    def test_equal_distances_capped(self):
        assert compute_beta([2, 2, 2], 1.0, "std_only") == BETA_MAX


class TestUtilities:
    def test_weighted_middle(self):
        ps = [FitnessVector.of(et, f1=q) for q, et in [(0.2, 10), (0.4, 20), (0.6, 30)]]
        u = utility_weighted_sum(ps, {"f1": 1, "evaluation_time": 1})
        assert u[1] == pytest.approx(0.5)
        # first: f1 norm 0, ET norm flipped 1
        assert u[0] == pytest.approx(0.5) and u[2] == pytest.approx(0.5)

    def test_single_objective_weights(self):
        ps = [FitnessVector.of(et, f1=q) for q, et in [(0.2, 10), (0.4, 20), (0.8, 30)]]
        u = utility_weighted_sum(ps, {"f1": 1, "evaluation_time": 0})
        assert u.tolist() == pytest.approx([0.0, 1 / 3, 1.0])

    def test_constant_metrics(self):
        ps = [FitnessVector.of(5.0, f1=0.3)] * 4
        assert utility_weighted_sum(ps).tolist() == [0.5] * 4

    def test_no_positives(self):
        with pytest.raises(ValueError):
            utility_weighted_sum([])

    @pytest.mark.parametrize("f,n,lin,log", [(0, 3, 1.0, 1.0), (2, 3, 1 / 3, 0.5), (0, 1, 1.0, 1.0)])
    def test_front_values(self, f, n, lin, log):
        assert front_utility(f, n, "linear") == pytest.approx(lin)
        assert front_utility(f, n, "log") == pytest.approx(log)

    def test_front_schemes_rank_alike(self):
        ps = [FitnessVector.of(et, f1=q) for q, et in [(0.9, 10), (0.5, 20), (0.4, 30), (0.8, 5)]]
        lin, log = utility_front(ps, "linear"), utility_front(ps, "log")
        assert np.array_equal(np.argsort(-lin, kind="stable"), np.argsort(-log, kind="stable"))


class TestSort:
    def test_mutually_non_dominated(self):
        f, n = non_dominated_sort([[1, 0], [0, 1], [0.5, 0.5]])
        assert f == [0, 0, 0] and n == 1

    def test_chain(self):
        f, n = non_dominated_sort([[3, 3], [2, 2], [1, 1]])
        assert f == [0, 1, 2] and n == 3

    def test_directions(self):
        pts = [FitnessVector.of(10.0, f1=0.5), FitnessVector.of(20.0, f1=0.5)]
        assert non_dominated_sort(pts)[0] == [0, 1]

    @pytest.mark.parametrize("seed", range(5))
    def test_against_brute_force(self, seed):
        X = np.random.default_rng(seed).integers(0, 6, size=(50, 2)).astype(float)
        assert non_dominated_sort(X) == brute_fronts(X)


class TestRates:
    def _exps(self):
        return [pos(0.5, 10), neg()]

    def test_fixed_at_zero_distance(self):
        rp, rn = learning_rates(self._exps(), [0, 0], [1.0], PriorParams(), beta=3.0)
        assert rp.tolist() == [0.05] and rn.tolist() == [0.02]

    def test_half_life(self):
        rp, _ = learning_rates(self._exps(), [math.log(2), 0], [1.0], PriorParams(), beta=1.0)
        assert rp[0] == pytest.approx(0.025)

    def test_adaptive(self):
        exps = [pos(0.5, 10)] * 10 + [neg()] * 160
        rp, rn = learning_rates(exps, [0] * 170, [1.0] * 10, PriorParams(rate_scheme="adaptive"), beta=1.0)
        assert rp[0] == pytest.approx(0.1) and rn[0] == pytest.approx(0.00625)

    def test_missing_utility(self):
        with pytest.raises(ValueError):
            learning_rates(self._exps(), [0, 0], [], PriorParams(), beta=1.0)

    def test_monotone_in_distance(self):
        d = np.linspace(0, 5, 20)
        exps = [pos(0.5, 10)] * 20
        rp, _ = learning_rates(exps, d, [0.7] * 20, PriorParams(), beta=0.8)
        assert np.all(np.diff(rp) <= 0) and rp.max() <= 0.05


class TestBuildPrior:
    def test_empty(self, space):
        s = init_uniform(space)
        out, rep = build_prior(s, [], feats([0, 0]), SYSTEM, PriorParams())
        assert out is s and rep.rows == []

    def test_single_full_pull(self, space):
        e = pos(0.7, 10, cfg=config("m2"))
        out, rep = build_prior(init_uniform(space), [e], feats([0, 0]), SYSTEM, PriorParams(alpha_pos=1.0))
        assert method_marginal(out).tolist() == pytest.approx([EPS_PROB, EPS_PROB, 1 - 2 * EPS_PROB])
        assert rep.rows[0]["distance"] == 0.0 and rep.rows[0]["alpha"] == 1.0

    def test_zero_limits_identity(self, space, rng):
        exps = random_experiences(space, rng, 30)
        s = init_uniform(space)
        out, _ = build_prior(s, exps, feats(rng.normal(size=4)), SYSTEM, PriorParams(k_pos=0, k_neg=0))
        for k in s.categorical:
            assert np.array_equal(out.categorical[k], s.categorical[k])
        assert out.continuous == s.continuous

    def test_sweeps_in_distance_order(self, space):
        exps = [pos(0.5, 10, f=(3.0, 0.0)), neg(f=(1.0, 0.0)), pos(0.9, 5, f=(1.0, 0.0)), neg(f=(5.0, 0.0))]
        _, rep = build_prior(init_uniform(space), exps, feats([0, 0]), SYSTEM, PriorParams())
        assert [r["label"] for r in rep.rows] == ["positive", "positive", "negative", "negative"]
        for a, b in zip(rep.rows, rep.rows[1:]):
            if a["label"] == b["label"]:
                assert a["distance"] <= b["distance"]

    def test_limits(self, space, rng):
        exps = random_experiences(space, rng, 40)
        _, rep = build_prior(init_uniform(space), exps, feats(rng.normal(size=4)), SYSTEM, PriorParams(k_pos=3, k_neg=2))
        assert [r["label"] for r in rep.rows] == ["positive"] * 3 + ["negative"] * 2

    def test_template_mismatch(self, space):
        with pytest.raises(ValueError):
            build_prior(init_uniform(space), [pos(0.5, 1.0)], feats([0, 0, 0]), SYSTEM, PriorParams())

    def test_params_round_trip(self):
        p = PriorParams(distance_metric="cosine", k_pos=10, k_neg=math.inf, metric_weights={"f1": 1.0})
        assert PriorParams.load(p.dump()) == p

    def test_params_validation(self):
        with pytest.raises(ValueError):
            PriorParams(utility_scheme="nope")
        with pytest.raises(ValueError):
            PriorParams.from_dict({"bogus": 1})


class TestKnn:
    def test_k50_rate(self, space):
        e = pos(0.5, 10, cfg=config("m0"))
        out = knn_prior(init_uniform(space), [e], 50, feats([0, 0]), SYSTEM)
        assert method_marginal(out)[0] == pytest.approx(1 / 3 + 0.02 * (1 - 1 / 3))

    def test_one_each_full_rate(self, space):
        exps = [pos(0.5, 10, cfg=config("m0")), neg(cfg=config("m1"))]
        out = knn_prior(init_uniform(space), exps, 1, feats([0, 0]), SYSTEM)
        # pull to one-hot m0, then push (2P - e_m1) = [2, -1, 0] -> clamped
        assert method_marginal(out).tolist() == pytest.approx([1 - 2 * EPS_PROB, EPS_PROB, EPS_PROB])

    def test_no_negatives(self, space):
        exps = [pos(0.5, 10, cfg=config("m1"))]
        out = knn_prior(init_uniform(space), exps, 2, feats([0, 0]), SYSTEM)
        assert method_marginal(out)[1] == pytest.approx(1 / 3 + 0.5 * 2 / 3)

    def test_bad_k(self, space):
        with pytest.raises(ValueError):
            knn_prior(init_uniform(space), [], 0, feats([0]), SYSTEM)


class TestTV:
    def test_values(self):
        assert tv_distance([0.2, 0.8], [0.2, 0.8]) == 0
        assert tv_distance([1, 0, 0], [1 / 3] * 3) == pytest.approx(2 / 3)
        assert tv_distance([1, 0], [0, 1]) == 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            tv_distance([1, 0], [1, 0, 0])
        with pytest.raises(ValueError):
            tv_distance([0.5, 0.6], [0.5, 0.5])


def marginal_with_tv(t, n=3):
    # one-hot-leaning vector whose TV to uniform is exactly t
    u = 1 / n
    p = np.full(n, u - t / (n - 1))
    p[0] = u + t
    return p


class TestStratify:
    def test_gap_example(self):
        tvs = [0.01, 0.012, 0.05, 0.06, 0.2, 0.22]
        st = stratify_priors([(i, marginal_with_tv(t)) for i, t in enumerate(tvs)])
        assert st.strata == {"low": [0, 1], "moderate": [2, 3], "high": [4, 5]}
        assert st.representatives["low"] == {"median": 0, "max": 1}

    def test_all_equal(self):
        st = stratify_priors([(i, [1 / 3] * 3) for i in range(9)])
        assert [len(v) for v in st.strata.values()] == [3, 3, 3]

    def test_too_few(self):
        with pytest.raises(ValueError):
            stratify_priors([(0, [1.0]), (1, [1.0])])

    def test_random_partition(self):
        rng = np.random.default_rng(0)
        cands = [(i, rng.dirichlet([1, 1, 1])) for i in range(180)]
        st = stratify_priors(cands)
        members = sorted(i for v in st.strata.values() for i in v)
        assert members == list(range(180))
        for name, reps in st.representatives.items():
            tvs = sorted(st.tv[i] for i in st.strata[name])
            assert reps["max"] in st.strata[name] and st.tv[reps["max"]] == tvs[-1]
            assert st.tv[reps["median"]] == tvs[(len(tvs) - 1) // 2]


def test_grid_size():
    grid = prior_grid()
    assert len(grid) == 180 and len(set(grid)) == 180
