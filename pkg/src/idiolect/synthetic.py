"""Synthetic authors for offline experiments and tests.

Each generated author has a sharp, individual profile: a personal Zipf
ranking over a core function-word set, personal function-word transition
habits (a small Markov chain), a private slice of a shared content
vocabulary, and personal sentence-final punctuation preferences.  Texts
sampled from a profile therefore carry exactly the kind of repetitive,
idiosyncratic signal the verification methods look for, while the lexical
stub adversary (uniform sampling over the shared vocabulary) does not.

`python -m idiolect.synthetic out.jsonl` writes a ready-to-ingest corpus.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .seeds import seed_for

FUNCTION_CORE: tuple[str, ...] = (
    "the", "a", "an", "and", "or", "but", "if", "so", "of", "in", "to", "for",
    "with", "on", "at", "by", "from", "up", "about", "into", "over", "after",
    "is", "are", "was", "were", "be", "have", "has", "had", "do", "does",
    "did", "not", "i", "you", "he", "she", "it", "we", "they", "that", "this",
    "as", "when", "then",
)

_SYLLABLES = (
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du",
    "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu",
    "ma", "me", "mi", "mo", "mu", "na", "ne", "ni", "no", "nu",
    "pa", "pe", "pi", "po", "pu", "ra", "re", "ri", "ro", "ru",
    "sa", "se", "si", "so", "su", "ta", "te", "ti", "to", "tu",
)

SENTENCE_PUNCT = (".", "!", "?")


def content_word_pool(size: int = 500) -> list[str]:
    """Deterministic pool of pronounceable three-syllable pseudo-words."""
    pool = []
    for parts in itertools.product(_SYLLABLES, repeat=3):
        pool.append("".join(parts))
        if len(pool) >= size:
            return pool
    raise ValueError(f"cannot build a pool of {size} words")


@dataclass
class AuthorProfile:
    author_id: str
    start_words: list[str]
    start_weights: list[float]
    transitions: dict[str, tuple[list[str], list[float]]]
    content_words: list[str]
    content_weights: list[float]
    punct_weights: list[float]
    function_rate: float = 0.6


def _zipf_weights(n: int) -> list[float]:
    return [1.0 / (i + 1) for i in range(n)]


def make_profile(author_id: str, seed: int, pool: Sequence[str]) -> AuthorProfile:
    rng = random.Random(seed_for(seed, "profile", author_id))
    ranking = rng.sample(FUNCTION_CORE, len(FUNCTION_CORE))
    transitions: dict[str, tuple[list[str], list[float]]] = {}
    for word in FUNCTION_CORE:
        preferred = rng.sample(FUNCTION_CORE, 3)
        others = [w for w in FUNCTION_CORE if w not in preferred]
        words = preferred + others
        weights = [0.5, 0.25, 0.1] + [0.15 / len(others)] * len(others)
        transitions[word] = (words, weights)
    return AuthorProfile(
        author_id=author_id,
        start_words=ranking,
        start_weights=_zipf_weights(len(ranking)),
        transitions=transitions,
        content_words=rng.sample(list(pool), 60),
        content_weights=_zipf_weights(60),
        punct_weights=[0.6 + rng.random() * 0.3, 0.2 * rng.random() + 0.05, 0.05],
    )


def generate_sentence(profile: AuthorProfile, rng: random.Random) -> list[str]:
    length = rng.randint(7, 14)
    tokens: list[str] = []
    prev = rng.choices(profile.start_words, weights=profile.start_weights, k=1)[0]
    tokens.append(prev)
    while len(tokens) < length:
        if rng.random() < profile.function_rate:
            words, weights = profile.transitions[prev]
            prev = rng.choices(words, weights=weights, k=1)[0]
            tokens.append(prev)
        else:
            tokens.append(
                rng.choices(profile.content_words, weights=profile.content_weights, k=1)[0]
            )
    tokens.append(rng.choices(SENTENCE_PUNCT, weights=profile.punct_weights, k=1)[0])
    return tokens


def generate_document_text(profile: AuthorProfile, rng: random.Random,
                           n_sentences: int | None = None) -> str:
    n = n_sentences if n_sentences is not None else rng.randint(6, 12)
    parts = []
    for _ in range(n):
        toks = generate_sentence(profile, rng)
        parts.append(" ".join(toks[:-1]) + toks[-1])  # attach sentence punctuation
    return " ".join(parts)


def generate_corpus(
    n_authors: int = 20,
    docs_per_author: int = 12,
    seed: int = 7,
    genre: str = "email",
    pool_size: int = 500,
) -> list[dict]:
    """JSONL-ready records for a corpus of synthetic authors."""
    pool = content_word_pool(pool_size)
    records = []
    for i in range(n_authors):
        author_id = f"author{i:02d}"
        profile = make_profile(author_id, seed, pool)
        rng = random.Random(seed_for(seed, "docs", author_id))
        for j in range(docs_per_author):
            records.append(
                {
                    "id": f"{author_id}/d{j:02d}",
                    "author": author_id,
                    "genre": genre,
                    "text": generate_document_text(profile, rng),
                }
            )
    return records


def shared_vocabulary(pool_size: int = 500) -> list[str]:
    """The full vocabulary the lexical stub samples from: every content word
    any author could use, plus the core function words."""
    return list(FUNCTION_CORE) + content_word_pool(pool_size)


def write_jsonl(records: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def main(argv: list[str] | None = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Generate a synthetic author corpus (JSONL).")
    parser.add_argument("output", help="path of the JSONL file to write")
    parser.add_argument("--authors", type=int, default=20)
    parser.add_argument("--docs-per-author", type=int, default=12)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    records = generate_corpus(
        n_authors=args.authors, docs_per_author=args.docs_per_author, seed=args.seed
    )
    write_jsonl(records, args.output)
    print(f"wrote {len(records)} documents for {args.authors} authors to {args.output}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
