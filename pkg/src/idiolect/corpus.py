"""Corpus ingestion: loading, genre-specific cleaning, tokenization, author partitioning.

Genres behave differently on purpose: email cleaning runs an ordered,
versioned list of regex passes; SMS/chat strips non-ASCII and normalizes
elongations; tweets additionally lowercase, anonymise mentions and replace
URLs with a placeholder.  All cleaners are idempotent, which the test suite
checks property-style.
"""

from __future__ import annotations

import json
import logging
import random
import re
import unicodedata
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

from .seeds import seed_for

log = logging.getLogger(__name__)

GENRES = ("email", "sms_chat", "tweet")

URL_PLACEHOLDER = "<url>"
MENTION_PLACEHOLDER = "userid"

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION_RE = re.compile(r"@+\w+")  # consume the whole @-run so output can't re-match
# cap runs of >=3 identical letters at 2 ("Sooooo" -> "Soo"); case-sensitive
_ELONGATION_RE = re.compile(r"([^\W\d_])\1{2,}", re.UNICODE)
_WHITESPACE_RE = re.compile(r"\s+")
# leading punctuation/space run on tweets, applied after whitespace collapse;
# '<' excluded so the <url> placeholder survives re-cleaning
_LEADING_PUNCT_RE = re.compile(r"^[^\w<]+")

# single tokens: placeholders like #NOUN, the <url> marker, words with internal
# apostrophes (contractions carry authorial signal), then isolated punctuation
_TOKEN_RE = re.compile(r"#[A-Z0-9_]+|<url>|\w+(?:'\w+)*|[^\w\s]", re.UNICODE)


class CorpusError(Exception):
    """Configuration or usage problem in the corpus layer."""


class LoadError(CorpusError):
    """A corpus file failed to load or parse; names the offending record."""


class AuthorSkipped(CorpusError):
    """Raised when an author cannot be partitioned; carries the skip reason."""

    def __init__(self, author_id: str, reason: str):
        super().__init__(f"author {author_id!r} skipped: {reason}")
        self.author_id = author_id
        self.reason = reason


@dataclass(frozen=True)
class Document:
    id: str
    author_id: str
    genre: str
    raw_text: str
    clean_text: str
    tokens: tuple[str, ...]

    @staticmethod
    def build(id: str, author_id: str, genre: str, raw_text: str) -> "Document":
        clean = clean_text(raw_text, genre)
        return Document(
            id=id,
            author_id=author_id,
            genre=genre,
            raw_text=raw_text,
            clean_text=clean,
            tokens=tuple(tokenize(clean)),
        )


@dataclass
class AuthorSplit:
    author_id: str
    known: list[Document]
    unknown: list[Document]
    role: str = "train"  # train | validation | test

    def __post_init__(self) -> None:
        known_ids = {d.id for d in self.known}
        unknown_ids = {d.id for d in self.unknown}
        if known_ids & unknown_ids:
            raise CorpusError(
                f"author {self.author_id!r}: known/unknown overlap: {sorted(known_ids & unknown_ids)}"
            )
        for doc in (*self.known, *self.unknown):
            if doc.author_id != self.author_id:
                raise CorpusError(
                    f"document {doc.id!r} has author {doc.author_id!r}, expected {self.author_id!r}"
                )


@dataclass(frozen=True)
class CorpusConfig:
    genre: str
    min_tokens_per_author: int = 1000
    known_budget: int | None = None
    unknown_budget: int | None = None
    rng_seed: int = 0
    n_unknown_docs: int = 1

    def __post_init__(self) -> None:
        if self.genre not in GENRES:
            raise CorpusError(f"unknown genre {self.genre!r}; expected one of {GENRES}")
        for name in ("known_budget", "unknown_budget"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise CorpusError(f"{name} must be positive, got {value}")
        if self.n_unknown_docs < 1:
            raise CorpusError("n_unknown_docs must be >= 1")

    @staticmethod
    def for_genre(genre: str, rng_seed: int = 0, **overrides) -> "CorpusConfig":
        """Genre defaults: tweets get the 2000/500 known/unknown token budgets."""
        defaults: dict = {"genre": genre, "rng_seed": rng_seed}
        if genre == "tweet":
            defaults.update(known_budget=2000, unknown_budget=500, min_tokens_per_author=2500)
        defaults.update(overrides)
        return CorpusConfig(**defaults)


# ---------------------------------------------------------------------------
# cleaning


@lru_cache(maxsize=4)
def _load_email_rules(path: str | None = None) -> tuple[tuple[re.Pattern, str], ...]:
    rules_path = Path(path) if path else Path(__file__).parent / "data" / "email_rules_v1.json"
    payload = json.loads(rules_path.read_text(encoding="utf-8"))
    compiled = []
    for rule in payload["rules"]:
        flags = 0
        for name in rule.get("flags", ()):
            flags |= getattr(re, name)
        compiled.append((re.compile(rule["pattern"], flags), rule["replacement"]))
    return tuple(compiled)


def _collapse_whitespace(text: str) -> str:
    return _WHITESPACE_RE.sub(" ", text).strip()


def _strip_non_ascii(text: str) -> str:
    return "".join(c for c in text if ord(c) < 128)


def _strip_emoji_and_nonprinting(text: str) -> str:
    out = []
    for c in text:
        cat = unicodedata.category(c)
        if cat in ("Cf", "Cc", "Co", "Cs", "So", "Sk"):
            continue
        if 0xFE00 <= ord(c) <= 0xFE0F:  # variation selectors
            continue
        out.append(c)
    return "".join(out)


def _clean_email(raw: str, rules_path: str | None) -> str:
    text = raw
    for pattern, replacement in _load_email_rules(rules_path):
        text = pattern.sub(replacement, text)
    return _collapse_whitespace(text)


# Pass ordering below matters for idempotence: character-level normalization
# (charset strip, elongation) runs before pattern replacement, otherwise a
# first pass can join or repair characters into something a second pass would
# then match (e.g. "ht\x1ftp://x" -> "http://x", or "htttp://x" -> "http://x").
# The retweet check runs last, on fully normalized text, so stripping leading
# punctuation or collapsing whitespace can never expose a new "rt :" prefix.


def _clean_sms(raw: str) -> str:
    text = _strip_non_ascii(raw)  # also removes U+FFFC object-replacement chars
    text = _ELONGATION_RE.sub(r"\1\1", text)
    text = _URL_RE.sub("", text)
    return _collapse_whitespace(text)


def _clean_tweet(raw: str) -> str:
    text = _strip_emoji_and_nonprinting(raw.lower())
    text = _ELONGATION_RE.sub(r"\1\1", text)
    text = _URL_RE.sub(URL_PLACEHOLDER, text)
    text = _MENTION_RE.sub(MENTION_PLACEHOLDER, text)
    # a replacement can butt a placeholder against identical letters
    # ("uu" + "userid"); capping is idempotent, so re-apply it
    text = _ELONGATION_RE.sub(r"\1\1", text)
    text = _collapse_whitespace(text)
    text = _LEADING_PUNCT_RE.sub("", text)
    if text.startswith("rt :"):
        return ""  # retweets carry someone else's words
    return text


def clean_text(raw: str, genre: str, email_rules_path: str | None = None) -> str:
    """Apply the genre's cleaning rules; idempotent for every genre."""
    if genre == "email":
        return _clean_email(raw, email_rules_path)
    if genre == "sms_chat":
        return _clean_sms(raw)
    if genre == "tweet":
        return _clean_tweet(raw)
    raise CorpusError(f"unknown genre {genre!r}; expected one of {GENRES}")


def tokenize(text: str) -> list[str]:
    """Whitespace split with punctuation isolated as standalone tokens.

    Word-internal apostrophes are kept ("can't" is one token), and the
    mask placeholders (#NOUN, ...) and <url> survive as single tokens so
    token sequences can be re-joined with spaces and re-tokenized stably.
    """
    return _TOKEN_RE.findall(text)


# ---------------------------------------------------------------------------
# loading


def _document_from_record(record: dict, where: str) -> Document:
    for key in ("id", "author", "genre", "text"):
        if key not in record:
            raise LoadError(f"{where}: record missing required field {key!r}")
    genre = record["genre"]
    if genre not in GENRES:
        raise LoadError(f"{where}: unknown genre {genre!r}")
    return Document.build(
        id=str(record["id"]),
        author_id=str(record["author"]),
        genre=genre,
        raw_text=str(record["text"]),
    )


def load_corpus(path: str | Path, format: str, genre: str | None = None) -> list[Document]:
    """Load a corpus from JSONL records or an <author>/<doc>.txt directory tree.

    Rejects the whole load on the first malformed record, naming the file
    and line, so partially-ingested corpora never reach later stages.
    """
    path = Path(path)
    if not path.exists():
        raise LoadError(f"corpus path does not exist: {path}")
    if format == "jsonl":
        docs = []
        seen_ids: set[str] = set()
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                where = f"{path}:{lineno}"
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise LoadError(f"{where}: invalid JSON: {exc}") from exc
                doc = _document_from_record(record, where)
                if doc.id in seen_ids:
                    raise LoadError(f"{where}: duplicate document id {doc.id!r}")
                seen_ids.add(doc.id)
                docs.append(doc)
        return docs
    if format == "directory_tree":
        if genre is None:
            raise CorpusError("directory_tree loading requires an explicit genre")
        if genre not in GENRES:
            raise CorpusError(f"unknown genre {genre!r}; expected one of {GENRES}")
        docs = []
        for author_dir in sorted(p for p in path.iterdir() if p.is_dir()):
            for doc_path in sorted(author_dir.glob("*.txt")):
                try:
                    raw = doc_path.read_text(encoding="utf-8")
                except UnicodeDecodeError as exc:
                    raise LoadError(f"{doc_path}: not valid UTF-8: {exc}") from exc
                docs.append(
                    Document.build(
                        id=f"{author_dir.name}/{doc_path.stem}",
                        author_id=author_dir.name,
                        genre=genre,
                        raw_text=raw,
                    )
                )
        return docs
    raise CorpusError(f"unknown corpus format {format!r}; expected jsonl or directory_tree")


def prepare_author_docs(docs: list[Document], genre: str) -> list[Document]:
    """Drop documents that cleaned to nothing; dedup tweets on exact clean text."""
    kept = []
    seen: set[str] = set()
    for doc in docs:
        if not doc.tokens:
            continue
        if genre == "tweet":
            if doc.clean_text in seen:
                continue
            seen.add(doc.clean_text)
        kept.append(doc)
    return kept


# ---------------------------------------------------------------------------
# partitioning


def _truncate_to_budget(docs: list[Document], budget: int) -> tuple[list[Document], list[Document]]:
    """Take documents until `budget` tokens is exactly reached, cutting the last
    document on a token boundary; returns (taken, remaining untouched docs)."""
    taken: list[Document] = []
    remaining = budget
    for i, doc in enumerate(docs):
        if remaining == 0:
            return taken, docs[i:]
        if len(doc.tokens) <= remaining:
            taken.append(doc)
            remaining -= len(doc.tokens)
        else:
            head = doc.tokens[:remaining]
            taken.append(replace(doc, clean_text=" ".join(head), tokens=tuple(head)))
            remaining = 0
            return taken, docs[i + 1 :]
    if remaining > 0:
        raise AuthorSkipped(
            docs[0].author_id if docs else "?",
            f"insufficient tokens to fill budget of {budget}",
        )
    return taken, []


def partition_author(docs: list[Document], config: CorpusConfig) -> AuthorSplit:
    """Split one author's documents into known and unknown material.

    Deterministic for a given rng_seed.  With token budgets configured
    (tweets), known and unknown are truncated to exactly the budgeted token
    counts without ever splitting a token.  Authors below the minimum token
    count raise AuthorSkipped with the reason recorded.
    """
    if not docs:
        raise AuthorSkipped("?", "no documents")
    author_id = docs[0].author_id
    docs = prepare_author_docs(list(docs), config.genre)
    if not docs:
        raise AuthorSkipped(author_id, "no non-empty documents after cleaning")
    if any(d.author_id != author_id for d in docs):
        raise CorpusError("partition_author received documents from multiple authors")

    total = sum(len(d.tokens) for d in docs)
    if total < config.min_tokens_per_author:
        raise AuthorSkipped(
            author_id,
            f"insufficient tokens: {total} < {config.min_tokens_per_author}",
        )

    rng = random.Random(seed_for(config.rng_seed, "partition", author_id))
    shuffled = sorted(docs, key=lambda d: d.id)
    rng.shuffle(shuffled)

    if config.known_budget is not None or config.unknown_budget is not None:
        if not (config.known_budget and config.unknown_budget):
            raise CorpusError("known_budget and unknown_budget must be set together")
        known, rest = _truncate_to_budget(shuffled, config.known_budget)
        unknown, _ = _truncate_to_budget(rest, config.unknown_budget)
        return AuthorSplit(author_id=author_id, known=known, unknown=unknown)

    if len(shuffled) <= config.n_unknown_docs:
        raise AuthorSkipped(
            author_id,
            f"needs more than {config.n_unknown_docs} documents to hold out unknown text",
        )
    unknown = shuffled[: config.n_unknown_docs]
    known = shuffled[config.n_unknown_docs :]
    return AuthorSplit(author_id=author_id, known=known, unknown=unknown)


def partition_corpus(
    docs: list[Document], config: CorpusConfig
) -> tuple[list[AuthorSplit], list[dict]]:
    """Partition every author; skipped authors come back as reason records."""
    by_author: dict[str, list[Document]] = {}
    for doc in docs:
        by_author.setdefault(doc.author_id, []).append(doc)
    splits: list[AuthorSplit] = []
    skips: list[dict] = []
    for author_id in sorted(by_author):
        try:
            splits.append(partition_author(by_author[author_id], config))
        except AuthorSkipped as exc:
            log.info("skipping author %s: %s", author_id, exc.reason)
            skips.append({"author": author_id, "reason": exc.reason})
    return splits, skips


def train_validation_split(
    docs: list[Document], rng_seed: int, train_fraction: float = 0.8
) -> tuple[list[Document], list[Document]]:
    """Seeded 80/20 (by document count) split of training material, for
    scorers that need a held-out validation slice."""
    if not 0.0 < train_fraction < 1.0:
        raise CorpusError(f"train_fraction must be in (0,1), got {train_fraction}")
    ordered = sorted(docs, key=lambda d: d.id)
    rng = random.Random(seed_for(rng_seed, "train-validation"))
    rng.shuffle(ordered)
    n_train = max(1, round(len(ordered) * train_fraction))
    return ordered[:n_train], ordered[n_train:]


def assign_roles(
    splits: list[AuthorSplit],
    rng_seed: int,
    train_fraction: float = 0.5,
    validation_fraction: float = 0.0,
) -> list[AuthorSplit]:
    """Seeded assignment of authors to train/validation/test roles, in place."""
    if not 0.0 < train_fraction < 1.0:
        raise CorpusError(f"train_fraction must be in (0,1), got {train_fraction}")
    ordered = sorted(splits, key=lambda s: s.author_id)
    rng = random.Random(seed_for(rng_seed, "roles"))
    rng.shuffle(ordered)
    n_train = max(1, round(len(ordered) * train_fraction))
    n_val = int(n_train * validation_fraction)
    for i, split in enumerate(ordered):
        if i < n_train - n_val:
            split.role = "train"
        elif i < n_train:
            split.role = "validation"
        else:
            split.role = "test"
    return splits
