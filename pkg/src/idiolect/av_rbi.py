"""Ranking-Based Impostors verification.

The known author is represented by the centroid of their document vectors.
Each iteration samples a feature subset and an impostor subset, computes
cosine similarities restricted to the sampled features, and scores the
fraction of sampled impostors that the known author strictly beats.  The
final score is the mean over iterations; everything is driven by pre-split
RNG streams so results are reproducible regardless of execution order.

Ties between the known author's similarity and an impostor's count against
the known author (conservative toward the different-author hypothesis).
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import Document

log = logging.getLogger(__name__)

FEATURE_SPACES = ("char4", "word1")


@dataclass(frozen=True)
class RbiConfig:
    k_features: int = 300
    m_impostors: int = 100
    n_iterations: int = 25
    rng_seed: int = 0
    feature_space: str = "char4"
    impostor_fraction: float = 0.5  # per-iteration impostor subsample, ceil(m * fraction)

    def __post_init__(self) -> None:
        if self.feature_space not in FEATURE_SPACES:
            raise ValueError(f"unknown feature space {self.feature_space!r}")
        if min(self.k_features, self.m_impostors, self.n_iterations) < 1:
            raise ValueError("k_features, m_impostors and n_iterations must be >= 1")
        if not 0.0 < self.impostor_fraction <= 1.0:
            raise ValueError("impostor_fraction must be in (0, 1]")


@dataclass(frozen=True)
class FeatureVector:
    space: str
    values: Mapping[str, float]  # relative frequencies, summing to 1 for non-empty text


def extract_features(doc: Document, space: str = "char4") -> FeatureVector:
    """Relative-frequency feature vector: character 4-grams of the text, or
    word unigrams over the token sequence."""
    if space == "char4":
        text = doc.clean_text
        counts = Counter(text[i : i + 4] for i in range(len(text) - 3))
    elif space == "word1":
        counts = Counter(doc.tokens)
    else:
        raise ValueError(f"unknown feature space {space!r}")
    total = sum(counts.values())
    if total == 0:
        return FeatureVector(space=space, values={})
    return FeatureVector(space=space, values={f: c / total for f, c in counts.items()})


def centroid(vectors: Sequence[FeatureVector]) -> FeatureVector:
    if not vectors:
        raise ValueError("centroid of no vectors")
    space = vectors[0].space
    if any(v.space != space for v in vectors):
        raise ValueError("cannot average vectors from different feature spaces")
    acc: dict[str, float] = {}
    for vec in vectors:
        for f, x in vec.values.items():
            acc[f] = acc.get(f, 0.0) + x
    n = len(vectors)
    return FeatureVector(space=space, values={f: x / n for f, x in acc.items()})


def cosine(u: Mapping[str, float], v: Mapping[str, float], features=None) -> float:
    """Cosine similarity, optionally restricted to a feature subset; defined
    as 0.0 when either restricted vector is all-zero."""
    if features is not None:
        features = set(features)
        u = {f: x for f, x in u.items() if f in features}
        v = {f: x for f, x in v.items() if f in features}
    dot = sum(x * v[f] for f, x in u.items() if f in v)
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


def build_impostor_pool(
    candidates: Sequence[Document],
    known: Sequence[Document],
    pool_size: int,
    space: str = "char4",
) -> list[FeatureVector]:
    """The pool_size candidate vectors most cosine-similar to the known-author
    centroid, descending; ties broken by document id."""
    if not known:
        raise ValueError("build_impostor_pool requires known documents")
    target_author = known[0].author_id
    offenders = [d.id for d in candidates if d.author_id == target_author]
    if offenders:
        raise ValueError(f"candidates include the target author's own documents: {offenders}")
    known_centroid = centroid([extract_features(d, space) for d in known])
    scored = []
    for doc in candidates:
        vec = extract_features(doc, space)
        scored.append((-cosine(vec.values, known_centroid.values), doc.id, vec))
    scored.sort(key=lambda t: (t[0], t[1]))
    if len(scored) < pool_size:
        log.warning(
            "impostor pool for author %s: only %d candidates for pool_size %d; using all",
            target_author, len(scored), pool_size,
        )
    return [vec for _, _, vec in scored[:pool_size]]


def rbi_score(
    known: Sequence[Document],
    query: Document,
    impostors: Sequence[FeatureVector],
    config: RbiConfig,
) -> float:
    """Mean over iterations of the fraction of sampled impostors whose
    similarity to the query falls strictly below the known author's."""
    if not impostors:
        raise ValueError("rbi_score requires a non-empty impostor pool")
    space = config.feature_space
    known_vec = centroid([extract_features(d, space) for d in known])
    query_vec = extract_features(query, space)

    vocab: set[str] = set(known_vec.values) | set(query_vec.values)
    for imp in impostors:
        if imp.space != space:
            raise ValueError(f"impostor vector space {imp.space!r} != config {space!r}")
        vocab |= set(imp.values)
    vocab_list = sorted(vocab)
    if not vocab_list:
        log.warning("rbi_score: empty feature vocabulary for query %s; scoring 0.0", query.id)
        return 0.0

    k = min(config.k_features, len(vocab_list))
    if k < config.k_features:
        log.debug("k_features %d clamped to vocabulary size %d", config.k_features, k)
    n_sub = max(1, math.ceil(len(impostors) * config.impostor_fraction))

    streams = np.random.SeedSequence(config.rng_seed).spawn(config.n_iterations)
    total = 0.0
    for stream in streams:
        rng = np.random.default_rng(stream)
        feat_idx = rng.choice(len(vocab_list), size=k, replace=False)
        features = {vocab_list[i] for i in feat_idx}
        imp_idx = rng.choice(len(impostors), size=n_sub, replace=False)
        s_known = cosine(query_vec.values, known_vec.values, features)
        wins = sum(
            1 for j in imp_idx if cosine(query_vec.values, impostors[j].values, features) < s_known
        )
        total += wins / n_sub
    return total / config.n_iterations
