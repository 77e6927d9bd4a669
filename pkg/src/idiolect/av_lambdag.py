"""Grammar-model verification: n-gram language models over masked token
sequences, compared as a log-likelihood ratio against reference models.

Models use interpolated Witten-Bell smoothing, which keeps every probability
strictly positive (unseen events inherit mass from shorter contexts, bottoming
out in a uniform distribution over the vocabulary plus an unknown symbol) and
behaves sensibly on the tiny vocabularies that masked text produces.

Sequences are segmented into sentences at ./!/? punctuation tokens; each
sentence is scored left to right with begin-of-sentence padding as context.
Sentence ends are not predicted, so appending a token always lowers the
log-probability by exactly one (negative) term.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BOS = "<s>"
UNK = "<unk>"
SENTENCE_END = {".", "!", "?"}

FORMAT_VERSION = 1


class TrainingError(Exception):
    pass


def split_sentences(tokens: Sequence[str]) -> list[list[str]]:
    """Split at sentence-final punctuation; the punctuation token stays with
    its sentence."""
    sentences: list[list[str]] = []
    current: list[str] = []
    for tok in tokens:
        current.append(tok)
        if tok in SENTENCE_END:
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


@dataclass
class GrammarModel:
    order: int
    smoothing: str = "witten_bell"
    counts: dict[tuple[str, ...], int] = field(default_factory=dict)
    # derived tables, rebuilt on load
    context_totals: dict[tuple[str, ...], int] = field(default_factory=dict)
    types_after: dict[tuple[str, ...], int] = field(default_factory=dict)
    vocab: frozenset[str] = frozenset()

    @property
    def target_types(self) -> frozenset[str]:
        return self.vocab - {BOS}

    def _rebuild_derived(self) -> None:
        self.context_totals = {}
        self.types_after = {}
        targets: set[str] = set()
        for gram, c in self.counts.items():
            ctx, w = gram[:-1], gram[-1]
            self.context_totals[ctx] = self.context_totals.get(ctx, 0) + c
            self.types_after[ctx] = self.types_after.get(ctx, 0) + 1
            targets.add(w)
        self.vocab = frozenset(targets | {BOS})

    # -- probability queries ------------------------------------------------

    def prob(self, token: str, context: Sequence[str] = ()) -> float:
        """Smoothed P(token | context); strictly positive for any token."""
        w = token if token in self.target_types else UNK
        ctx = tuple(context)[-(self.order - 1) :] if self.order > 1 else ()
        return self._wb(w, ctx)

    def _wb(self, w: str, ctx: tuple[str, ...]) -> float:
        if not ctx:
            n = self.context_totals.get((), 0)
            t = self.types_after.get((), 0)
            if n == 0:
                raise TrainingError("model has no unigram counts")
            support = len(self.target_types) + 1  # observed types plus <unk>
            c = self.counts.get((w,), 0)
            return (c + t / support) / (n + t)
        c_ctx = self.context_totals.get(ctx, 0)
        if c_ctx == 0:
            return self._wb(w, ctx[1:])
        t = self.types_after[ctx]
        c = self.counts.get(ctx + (w,), 0)
        return (c + t * self._wb(w, ctx[1:])) / (c_ctx + t)

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "format_version": FORMAT_VERSION,
            "order": self.order,
            "smoothing": self.smoothing,
            "counts": {" ".join(gram): c for gram, c in sorted(self.counts.items())},
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GrammarModel":
        payload = json.loads(text)
        if payload.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format: {payload.get('format_version')}")
        model = cls(order=payload["order"], smoothing=payload["smoothing"])
        model.counts = {tuple(k.split(" ")): v for k, v in payload["counts"].items()}
        model._rebuild_derived()
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GrammarModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def train_grammar_model(masked_docs: Iterable[Sequence[str]], order: int) -> GrammarModel:
    """Count all n-grams up to `order` over sentence-padded masked sequences."""
    if order < 1:
        raise TrainingError(f"order must be >= 1, got {order}")
    model = GrammarModel(order=order)
    counts = model.counts
    saw_tokens = False
    for doc in masked_docs:
        for sentence in split_sentences(doc):
            saw_tokens = True
            padded = [BOS] * (order - 1) + list(sentence)
            for i in range(len(sentence)):
                pos = i + order - 1
                for k in range(order):
                    gram = tuple(padded[pos - k : pos + 1])
                    counts[gram] = counts.get(gram, 0) + 1
    if not saw_tokens:
        raise TrainingError("no non-empty training sequences")
    model._rebuild_derived()
    return model


def sequence_logprob(model: GrammarModel, seq: Sequence[str]) -> float:
    """Sum of log10 P(token | preceding context) over the sequence; 0.0 for
    the empty sequence and always finite."""
    total = 0.0
    for sentence in split_sentences(seq):
        padded = [BOS] * (model.order - 1) + list(sentence)
        for i in range(len(sentence)):
            pos = i + model.order - 1
            ctx = tuple(padded[pos - (model.order - 1) : pos])
            total += math.log10(model._wb(
                padded[pos] if padded[pos] in model.target_types else UNK, ctx
            ))
    return total


@dataclass(frozen=True)
class LambdaScore:
    value: float  # log10 likelihood ratio, mean over references
    n_references: int
    per_reference: tuple[float, ...]


def lambda_g(
    query: Sequence[str],
    candidate: GrammarModel,
    references: Sequence[GrammarModel],
) -> LambdaScore:
    """Mean over reference models of log10 P(query|candidate) - log10 P(query|reference)."""
    if not references:
        raise ValueError("lambda_g requires at least one reference model")
    if any(r.order != candidate.order for r in references):
        raise ValueError("candidate and reference models must share the same order")
    lp_candidate = sequence_logprob(candidate, query)
    per_ref = tuple(lp_candidate - sequence_logprob(ref, query) for ref in references)
    return LambdaScore(
        value=math.fsum(per_ref) / len(per_ref),
        n_references=len(per_ref),
        per_reference=per_ref,
    )
