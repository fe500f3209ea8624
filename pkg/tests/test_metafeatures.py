import math

import numpy as np
import pytest

from warmprior.metafeatures import (
    HashingEmbedder,
    MetaFeatureVector,
    SystemProfile,
    distance,
    extract_from_file,
    extract_generation,
    extract_label_based,
    fit_scaler,
    hashed_bow,
    landmark_accuracy,
    lcs_length,
    rouge_l_f1,
    standardize,
    system_profile,
    tokenize,
)

from conftest import data_path, feats


def brute_lcs(a, b):
    # exponential oracle: longest common subsequence by subset enumeration of the shorter list
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    best = 0
    for mask in range(1 << len(short)):
        sub = [short[i] for i in range(len(short)) if mask >> i & 1]
        it = iter(long_)
        if all(tok in it for tok in sub):
            best = max(best, len(sub))
    return best


class TestLabelBased:
    def test_uniform_four_classes(self):
        docs = [(f"doc {i}", i % 4) for i in range(100)]
        v = extract_label_based(docs)
        assert v["entropy"] == pytest.approx(2.0)
        assert v["imbalance_ratio"] == 1.0
        assert v["min_class_prob"] == v["max_class_prob"] == 0.25

    def test_ninety_ten(self):
        docs = [("x", "a")] * 90 + [("y", "b")] * 10
        v = extract_label_based(docs)
        assert v["min_class_prob"] == pytest.approx(0.1)
        assert v["max_class_prob"] == pytest.approx(0.9)
        assert v["imbalance_ratio"] == pytest.approx(9.0)
        assert v["entropy"] == pytest.approx(0.4690, abs=1e-4)

    def test_equal_lengths(self):
        docs = [("z" * 100, i % 2) for i in range(20)]
        v = extract_label_based(docs)
        assert v["avg_length"] == 100 and v["std_length"] == 0 and v["cv_length"] == 0

    def test_shipped_fixture(self):
        v = extract_from_file(data_path("labels.tsv"), "label_based")
        assert v["nr_samples"] == 12 and v["nr_classes"] == 2
        # p = (2/3, 1/3): -(2/3)log2(2/3) - (1/3)log2(1/3)
        assert v["entropy"] == pytest.approx(math.log2(3) - 2 / 3, abs=1e-12)
        assert v["imbalance_ratio"] == pytest.approx(2.0)
        assert 0.0 <= v["landmark_accuracy"] <= 1.0


class TestLandmark:
    @staticmethod
    def centroid_oracle(docs):
        # nearest-centroid on raw hashed counts, same split rule
        X = hashed_bow([t for t, _ in docs])
        y = np.array([lab for _, lab in docs])
        perm = np.random.default_rng(42).permutation(len(docs))
        n_tr = int(round(0.7 * len(docs)))
        tr, te = perm[:n_tr], perm[n_tr:]
        cents = {c: X[tr][y[tr] == c].mean(0) for c in set(y[tr])}
        pred = [min(cents, key=lambda c: np.linalg.norm(X[i] - cents[c])) for i in te]
        return float(np.mean(np.array(pred) == y[te]))

    def test_separable(self):
        docs = [("aaa aaa aaa", 0)] * 20 + [("bbb bbb bbb", 1)] * 20
        assert self.centroid_oracle(docs) == 1.0
        assert landmark_accuracy(docs) == 1.0

    def test_random_labels(self):
        rng = np.random.default_rng(5)
        vocab = [f"w{i}" for i in range(300)]
        labels = rng.permutation(np.repeat([0, 1], 500))
        docs = [(" ".join(rng.choice(vocab, 12)), int(y)) for y in labels]
        assert 0.4 <= landmark_accuracy(docs) <= 0.6

    def test_single_class(self):
        with pytest.raises(ValueError):
            landmark_accuracy([("x", 0)] * 20)

    def test_identical_texts(self):
        assert landmark_accuracy([("same", 0)] * 7 + [("same", 1)] * 3) == pytest.approx(0.7)

    def test_deterministic(self):
        docs = [(f"tok{i % 7} tok{i % 3}", i % 2) for i in range(60)]
        assert landmark_accuracy(docs) == landmark_accuracy(list(docs))


class TestRouge:
    def test_identical_and_disjoint(self):
        assert rouge_l_f1(["a", "b"], ["a", "b"]) == 1.0
        assert rouge_l_f1(["a"], ["b"]) == 0.0

    def test_empty(self):
        assert rouge_l_f1([], []) == 1.0
        assert rouge_l_f1([], ["a"]) == 0.0

    def test_six_sevenths(self):
        assert lcs_length(list("abcd"), list("acd")) == brute_lcs(list("abcd"), list("acd")) == 3
        assert rouge_l_f1(list("abcd"), list("acd")) == pytest.approx(6 / 7)

    def test_cat_pair(self):
        a, b = tokenize("the cat sat"), tokenize("the cat ran")
        assert brute_lcs(a, b) == 2
        assert rouge_l_f1(a, b) == pytest.approx(2 / 3)

    def test_lcs_against_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a = list(rng.choice(list("abc"), rng.integers(0, 8)))
            b = list(rng.choice(list("abc"), rng.integers(0, 8)))
            assert lcs_length(a, b) == brute_lcs(a, b)


class TestGeneration:
    def test_identity_pairs(self):
        v = extract_generation([("hello there world", "hello there world"), ("a b", "a b")])
        assert v["vocabulary_novelty"] == 0.0
        assert v["rouge_l_f1"] == 1.0
        assert v["semantic_similarity"] == pytest.approx(1.0)
        assert v["length_ratio"] == 1.0

    def test_disjoint(self):
        v = extract_generation([("aa bb", "cc dd"), ("ee", "ff gg")])
        assert v["vocabulary_novelty"] == 1.0 and v["rouge_l_f1"] == 0.0

    def test_empty_prompt_floor(self):
        v = extract_generation([("", "abc")])
        assert v["length_ratio"] == 3.0

    def test_shipped_fixture(self):
        # pairs: (the cat sat | the cat ran), (a dog barks | a dog barks loudly), (the dog | the cat)
        v = extract_from_file(data_path("generation.tsv"), "generation")
        assert v["nr_samples"] == 3
        assert v["prompt_ttr"] == pytest.approx(6 / 8)
        assert v["target_ttr"] == pytest.approx(7 / 9)
        assert v["prompt_avg_length"] == pytest.approx(29 / 3)
        assert v["target_avg_length"] == pytest.approx(12.0)
        assert v["length_ratio"] == pytest.approx((1 + 18 / 11 + 1) / 3)
        assert v["vocabulary_novelty"] == pytest.approx((1 / 3 + 1 / 4 + 1 / 2) / 3)
        assert v["rouge_l_f1"] == pytest.approx((2 / 3 + 6 / 7 + 1 / 2) / 3)
        assert 0.0 <= v["semantic_similarity"] <= 1.0
        assert len(v.names) == 11 + 64

    def test_bit_deterministic(self):
        a = extract_from_file(data_path("generation.tsv"), "generation")
        b = extract_from_file(data_path("generation.tsv"), "generation")
        assert a.values == b.values

    def test_embedder_dimension(self):
        e = HashingEmbedder(16)
        assert e("some text").shape == (16,)


class TestSystem:
    def test_overrides_verbatim(self):
        p = system_profile({"cores": 16, "freq": 3600, "ram": 35840, "vram": 24576})
        assert p == SystemProfile(16, 3600.0, 35840.0, 24576.0)

    def test_no_gpu(self):
        assert system_profile({"cores": 2}, gpu_probe=lambda: 0.0).gpu_vram == 0.0

    def test_unknown_field(self):
        with pytest.raises(ValueError):
            system_profile({"disk": 1})


class TestScaler:
    def test_single_vector(self):
        v = feats([3, -1, 7])
        assert standardize(fit_scaler([v]), v).tolist() == [0, 0, 0]

    def test_zero_variance(self):
        vs = [feats([1, 5]), feats([2, 5])]
        out = standardize(fit_scaler(vs), vs[0])
        assert out[1] == 0.0

    def test_one_two_three(self):
        vs = [feats([x]) for x in (1, 2, 3)]
        s = fit_scaler(vs)
        got = [standardize(s, v)[0] for v in vs]
        sd = math.sqrt(2 / 3)
        assert got == pytest.approx([-1 / sd, 0, 1 / sd], abs=1e-7)
        assert got[2] == pytest.approx(1.2247, abs=1e-4)

    def test_template_mismatch(self):
        with pytest.raises(ValueError):
            fit_scaler([feats([1]), feats([1], template="other")])


class TestDistance:
    def test_same(self):
        a = np.array([1.0, 2.0])
        assert distance(a, a) == 0 and distance(a, a, "cosine") == pytest.approx(0, abs=1e-12)

    def test_orthogonal(self):
        a, b = np.array([1.0, 0]), np.array([0, 1.0])
        assert distance(a, b, "cosine") == pytest.approx(1.0)
        assert distance(a, b) == pytest.approx(math.sqrt(2))

    def test_three_four_five(self):
        assert distance(np.zeros(2), np.array([3.0, 4.0])) == 5.0

    def test_zero_vector_cosine(self):
        assert distance(np.zeros(2), np.array([1.0, 1.0]), "cosine") == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            distance(np.zeros(2), np.zeros(3))


def test_feature_vector_rejects_nan():
    with pytest.raises(ValueError):
        MetaFeatureVector("t", ("a",), (math.nan,))


def test_tokenize():
    assert tokenize("The Cat, sat!") == ["the", "cat", "sat"]
