"""N-gram tracing verification: character 9-gram set overlap, Simpson coefficient.

The known material is pooled as the union of each document's n-gram set, so
no n-gram can span a document boundary.  Inputs are expected to be masked
documents (see masking.masked_view); the scorer itself just reads clean_text.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from .corpus import Document

log = logging.getLogger(__name__)

DEFAULT_N = 9


@dataclass(frozen=True)
class NgramSet:
    n: int
    grams: frozenset[str]

    def __post_init__(self) -> None:
        bad = next((g for g in self.grams if len(g) != self.n), None)
        if bad is not None:
            raise ValueError(f"gram {bad!r} has length {len(bad)}, expected {self.n}")

    def __len__(self) -> int:
        return len(self.grams)


def char_ngrams(text: str, n: int = DEFAULT_N) -> NgramSet:
    """All distinct contiguous character windows of length n; empty set if the
    text is shorter than n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return NgramSet(n=n, grams=frozenset(text[i : i + n] for i in range(len(text) - n + 1)))


def simpson_overlap(a: NgramSet, b: NgramSet) -> float:
    """|a ∩ b| / min(|a|, |b|); 0.0 when either set is empty."""
    if a.n != b.n:
        raise ValueError(f"n-gram length mismatch: {a.n} vs {b.n}")
    if not a.grams or not b.grams:
        return 0.0
    return len(a.grams & b.grams) / min(len(a.grams), len(b.grams))


def known_ngram_union(known: Sequence[Document], n: int = DEFAULT_N) -> NgramSet:
    grams: set[str] = set()
    for doc in known:
        grams |= char_ngrams(doc.clean_text, n).grams
    return NgramSet(n=n, grams=frozenset(grams))


def ngram_trace_score(known: Sequence[Document], query: Document, n: int = DEFAULT_N) -> float:
    """Simpson overlap between the pooled known n-gram set and the query's."""
    if not known:
        raise ValueError("ngram_trace_score requires at least one known document")
    query_set = char_ngrams(query.clean_text, n)
    if not query_set.grams:
        log.warning("query %s has no %d-grams after masking; scoring 0.0", query.id, n)
        return 0.0
    return simpson_overlap(known_ngram_union(known, n), query_set)
