from __future__ import annotations

import math
import random
from collections import Counter

import pytest

from idiolect.av_rbi import (
    FeatureVector,
    RbiConfig,
    build_impostor_pool,
    centroid,
    cosine,
    extract_features,
    rbi_score,
)

from .conftest import make_doc

WORDS = ["ash", "birch", "cedar", "derry", "elm", "fir", "gorse", "hazel"]


def word_doc(counts: dict[str, int], doc_id: str, author: str = "a") -> "Document":
    text = " ".join(" ".join([w] * c) for w, c in sorted(counts.items()))
    return make_doc(text, doc_id=doc_id, author=author)


def oracle_rel_freq(tokens) -> dict[str, float]:
    c = Counter(tokens)
    n = sum(c.values())
    return {w: k / n for w, k in c.items()}


def oracle_cosine(u: dict, v: dict) -> float:
    dot = sum(x * v.get(f, 0.0) for f, x in u.items())
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0 or nv == 0:
        return 0.0
    return dot / (nu * nv)


def oracle_rank_score(known_docs, query_doc, impostor_vectors) -> float:
    """Exhaustive hand-ranking: full feature space, all impostors, one pass."""
    known_vecs = [oracle_rel_freq(d.tokens) for d in known_docs]
    cent: dict[str, float] = {}
    for vec in known_vecs:
        for f, x in vec.items():
            cent[f] = cent.get(f, 0.0) + x
    cent = {f: x / len(known_vecs) for f, x in cent.items()}
    qvec = oracle_rel_freq(query_doc.tokens)
    s_known = oracle_cosine(qvec, cent)
    wins = sum(1 for imp in impostor_vectors if oracle_cosine(qvec, dict(imp.values)) < s_known)
    return wins / len(impostor_vectors)


class TestFeatureVectors:
    def test_word_frequencies_sum_to_one(self):
        vec = extract_features(make_doc("a b a c"), space="word1")
        assert math.isclose(sum(vec.values.values()), 1.0)
        assert vec.values["a"] == 0.5

    def test_char4_windows(self):
        vec = extract_features(make_doc("abcde"), space="char4")
        assert set(vec.values) == {"abcd", "bcde"}

    def test_empty_text(self):
        assert extract_features(make_doc(""), space="word1").values == {}

    def test_centroid_of_distributions_is_distribution(self):
        vecs = [extract_features(make_doc(t), space="word1") for t in ("a a b", "b c")]
        c = centroid(vecs)
        assert math.isclose(sum(c.values.values()), 1.0)


class TestCosine:
    def test_identical(self):
        u = {"a": 0.5, "b": 0.5}
        assert math.isclose(cosine(u, u), 1.0)

    def test_orthogonal(self):
        assert cosine({"a": 1.0}, {"b": 1.0}) == 0.0

    def test_zero_vector_convention(self):
        assert cosine({}, {"a": 1.0}) == 0.0

    def test_restricted(self):
        u = {"a": 1.0, "b": 1.0}
        v = {"a": 1.0, "c": 1.0}
        assert math.isclose(cosine(u, v, features={"a"}), 1.0)
        assert cosine(u, v, features={"b", "c"}) == 0.0


class TestImpostorPool:
    def test_identical_candidate_ranked_first(self):
        known = [word_doc({"ash": 2, "birch": 1}, "k0", author="target")]
        twin = word_doc({"ash": 2, "birch": 1}, "c-twin", author="other")
        far = word_doc({"elm": 5}, "c-far", author="other")
        pool = build_impostor_pool([far, twin], known, pool_size=2, space="word1")
        assert pool[0].values == extract_features(twin, "word1").values

    def test_ties_broken_by_doc_id(self):
        known = [word_doc({"ash": 1}, "k0", author="target")]
        # all orthogonal to known: cosine 0 for every candidate
        cands = [word_doc({"elm": 1}, doc_id, author="other") for doc_id in ("c3", "c1", "c2")]
        pool = build_impostor_pool(cands, known, pool_size=2, space="word1")
        assert len(pool) == 2  # c1 and c2 by id order; same values, check via recompute
        ordered = build_impostor_pool(cands, known, pool_size=3, space="word1")
        assert len(ordered) == 3

    def test_order_matches_independent_sort(self):
        rng = random.Random(5)
        known = [word_doc({"ash": 3, "birch": 2, "cedar": 1}, "k0", author="target")]
        cands = []
        for i in range(10):
            counts = {w: rng.randint(0, 4) for w in WORDS}
            counts["ash"] = counts.get("ash", 0) + rng.randint(0, 3)
            if sum(counts.values()) == 0:
                counts["elm"] = 1
            cands.append(word_doc(counts, f"c{i}", author="other"))
        pool = build_impostor_pool(cands, known, pool_size=10, space="word1")
        cent = oracle_rel_freq(known[0].tokens)
        expected = sorted(
            cands,
            key=lambda d: (-oracle_cosine(oracle_rel_freq(d.tokens), cent), d.id),
        )
        assert [p.values for p in pool] == [dict(extract_features(d, "word1").values) for d in expected]

    def test_small_pool_warns_and_uses_all(self, caplog):
        known = [word_doc({"ash": 1}, "k0", author="target")]
        cands = [word_doc({"elm": 1}, "c0", author="other")]
        with caplog.at_level("WARNING"):
            pool = build_impostor_pool(cands, known, pool_size=5, space="word1")
        assert len(pool) == 1
        assert any("pool_size" in r.message for r in caplog.records)

    def test_rejects_target_author_docs(self):
        known = [word_doc({"ash": 1}, "k0", author="target")]
        with pytest.raises(ValueError):
            build_impostor_pool([word_doc({"elm": 1}, "c0", author="target")], known, 1)


def full_space_config(seed: int = 0, n_iterations: int = 1) -> RbiConfig:
    return RbiConfig(
        k_features=10**6,
        m_impostors=100,
        n_iterations=n_iterations,
        rng_seed=seed,
        feature_space="word1",
        impostor_fraction=1.0,
    )


class TestRbiScore:
    def test_query_equals_centroid_beats_orthogonal_impostors(self):
        known = [word_doc({"ash": 2, "birch": 2}, "k0")]
        query = word_doc({"ash": 2, "birch": 2}, "q")
        imps = [FeatureVector("word1", {"elm": 1.0}), FeatureVector("word1", {"fir": 1.0})]
        assert rbi_score(known, query, imps, full_space_config()) == 1.0

    def test_query_orthogonal_to_known_loses(self):
        known = [word_doc({"ash": 1}, "k0")]
        query = word_doc({"elm": 3}, "q")
        imps = [FeatureVector("word1", dict(extract_features(query, "word1").values))]
        assert rbi_score(known, query, imps, full_space_config()) == 0.0

    def test_tie_counts_against_known(self):
        known = [word_doc({"ash": 1}, "k0")]
        query = word_doc({"ash": 1}, "q")
        # impostor identical to the known centroid: equal similarity, not a win
        imps = [FeatureVector("word1", {"ash": 1.0})]
        assert rbi_score(known, query, imps, full_space_config()) == 0.0

    def test_tiny_instances_match_exhaustive_oracle(self):
        for seed in range(50):
            rng = random.Random(1000 + seed)
            known = [
                word_doc({w: rng.randint(0, 5) for w in WORDS[:5]} | {"ash": 1 + rng.randint(0, 3)},
                         f"k{i}")
                for i in range(rng.randint(1, 3))
            ]
            query = word_doc({w: rng.randint(0, 4) for w in WORDS[:6]} | {"birch": 1}, "q")
            imps = [
                FeatureVector("word1", dict(extract_features(
                    word_doc({w: rng.randint(0, 4) for w in WORDS} | {"cedar": 1}, f"i{j}"),
                    "word1").values))
                for j in range(rng.randint(1, 5))
            ]
            got = rbi_score(known, query, imps, full_space_config(seed=seed))
            assert got == oracle_rank_score(known, query, imps), f"seed {seed}"

    def test_deterministic_across_calls(self):
        rng = random.Random(3)
        known = [word_doc({w: rng.randint(1, 4) for w in WORDS}, f"k{i}") for i in range(3)]
        query = word_doc({w: rng.randint(0, 4) for w in WORDS} | {"ash": 2}, "q")
        imps = [
            FeatureVector("word1", dict(extract_features(
                word_doc({w: rng.randint(0, 5) for w in WORDS} | {"elm": 1}, f"i{j}"), "word1").values))
            for j in range(8)
        ]
        config = RbiConfig(k_features=4, m_impostors=8, n_iterations=10, rng_seed=99,
                           feature_space="word1")
        assert rbi_score(known, query, imps, config) == rbi_score(known, query, imps, config)

    def test_bounds(self):
        rng = random.Random(17)
        for trial in range(20):
            known = [word_doc({w: rng.randint(1, 3) for w in WORDS[:4]}, f"k{trial}")]
            query = word_doc({w: rng.randint(0, 3) for w in WORDS} | {"fir": 1}, f"q{trial}")
            imps = [
                FeatureVector("word1", dict(extract_features(
                    word_doc({w: rng.randint(0, 3) for w in WORDS} | {"elm": 1}, f"i{j}"),
                    "word1").values))
                for j in range(5)
            ]
            s = rbi_score(known, query, imps, RbiConfig(
                k_features=3, m_impostors=5, n_iterations=7, rng_seed=trial, feature_space="word1"))
            assert 0.0 <= s <= 1.0

    def test_scale_invariance(self):
        known_a = [word_doc({"ash": 2, "birch": 4}, "k0")]
        known_b = [word_doc({"ash": 20, "birch": 40}, "k0")]
        query_a = word_doc({"ash": 1, "cedar": 2}, "q")
        query_b = word_doc({"ash": 10, "cedar": 20}, "q")
        imps = [FeatureVector("word1", {"elm": 0.5, "ash": 0.5})]
        cfg = full_space_config(seed=4, n_iterations=3)
        assert rbi_score(known_a, query_a, imps, cfg) == rbi_score(known_b, query_b, imps, cfg)

    def test_variance_shrinks_with_iterations(self):
        rng = random.Random(23)
        known = [word_doc({w: rng.randint(1, 5) for w in WORDS}, f"k{i}") for i in range(2)]
        query = word_doc({w: rng.randint(0, 5) for w in WORDS} | {"ash": 3}, "q")
        imps = [
            FeatureVector("word1", dict(extract_features(
                word_doc({w: rng.randint(0, 5) for w in WORDS} | {"elm": 1}, f"i{j}"), "word1").values))
            for j in range(10)
        ]

        def variance(n_iter: int) -> float:
            scores = [
                rbi_score(known, query, imps, RbiConfig(
                    k_features=4, m_impostors=10, n_iterations=n_iter,
                    rng_seed=s, feature_space="word1"))
                for s in range(50)
            ]
            mean = sum(scores) / len(scores)
            return sum((x - mean) ** 2 for x in scores) / len(scores)

        assert variance(40) < variance(2)

    def test_requires_impostors(self):
        with pytest.raises(ValueError):
            rbi_score([word_doc({"ash": 1}, "k0")], word_doc({"ash": 1}, "q"), [], full_space_config())
