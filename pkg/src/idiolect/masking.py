"""Content masking: replace topic-bearing tokens with part-of-speech placeholders.

Function words and punctuation pass through untouched; everything else is
collapsed to a placeholder like #NOUN.  Two texts about different topics but
with the same grammatical skeleton mask to the same sequence, which is what
lets the downstream verifiers compare style instead of subject matter.

The default tagger is deliberately simple: function words and punctuation by
lookup, content words by a small ordered suffix-rule table, everything else
#OTHER.  It trades accuracy for bit-stable, dependency-free output; callers
can plug in a real tagger via the `tagger` argument without code changes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

from .corpus import Document

FUNCTION = "FUNCTION"
PUNCT = "PUNCT"
CONTENT_TAGS = ("NOUN", "VERB", "ADJ", "ADV", "PROPN", "NUM", "OTHER_CONTENT")
ALL_TAGS = CONTENT_TAGS + (FUNCTION, PUNCT)

DEFAULT_PLACEHOLDERS: dict[str, str] = {
    "NOUN": "#NOUN",
    "VERB": "#VERB",
    "ADJ": "#ADJ",
    "ADV": "#ADV",
    "PROPN": "#PROPN",
    "NUM": "#NUM",
    "OTHER_CONTENT": "#OTHER",
}

_NUMERIC_RE = re.compile(r"^\d+(?:[.,:]\d+)*$")

# ordered by suffix length (longest first) at match time
_SUFFIX_RULES: tuple[tuple[str, str], ...] = (
    ("tion", "NOUN"),
    ("sion", "NOUN"),
    ("ment", "NOUN"),
    ("ness", "NOUN"),
    ("ance", "NOUN"),
    ("ence", "NOUN"),
    ("ship", "NOUN"),
    ("hood", "NOUN"),
    ("able", "ADJ"),
    ("ible", "ADJ"),
    ("less", "ADJ"),
    ("ing", "VERB"),
    ("ize", "VERB"),
    ("ise", "VERB"),
    ("ify", "VERB"),
    ("ate", "VERB"),
    ("ous", "ADJ"),
    ("ful", "ADJ"),
    ("ive", "ADJ"),
    ("ish", "ADJ"),
    ("ism", "NOUN"),
    ("ist", "NOUN"),
    ("ity", "NOUN"),
    ("ed", "VERB"),
    ("ly", "ADV"),
    ("al", "ADJ"),
    ("ic", "ADJ"),
    ("er", "NOUN"),
    ("or", "NOUN"),
)
_SUFFIX_RULES = tuple(sorted(_SUFFIX_RULES, key=lambda r: -len(r[0])))


class MaskingError(Exception):
    pass


@dataclass(frozen=True)
class TaggedToken:
    surface: str
    tag: str


@dataclass(frozen=True)
class MaskingRules:
    function_lexicon: frozenset[str]
    placeholder_map: dict[str, str]

    def __post_init__(self) -> None:
        missing = [t for t in CONTENT_TAGS if t not in self.placeholder_map]
        if missing:
            raise MaskingError(f"placeholder_map missing content tags: {missing}")
        clash = set(self.placeholder_map.values()) & {
            w.casefold() for w in self.function_lexicon
        }
        if clash:
            raise MaskingError(f"placeholders collide with function lexicon: {sorted(clash)}")

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(self.placeholder_map.values())


def load_function_lexicon(path: str | Path | None = None) -> frozenset[str]:
    """Read the one-token-per-line lexicon; '#'-prefixed lines are comments."""
    lex_path = Path(path) if path else Path(__file__).parent / "data" / "function_words_en_v1.txt"
    words = set()
    for line in lex_path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        words.add(line.casefold())
    return frozenset(words)


@lru_cache(maxsize=1)
def default_rules() -> MaskingRules:
    return MaskingRules(
        function_lexicon=load_function_lexicon(),
        placeholder_map=dict(DEFAULT_PLACEHOLDERS),
    )


def _is_punct(surface: str) -> bool:
    return bool(surface) and all(not c.isalnum() and not c.isspace() for c in surface)


def suffix_rule_tag(surface: str) -> str:
    """Default content-word tagger: numerals, capitalization, then suffix table."""
    if _NUMERIC_RE.match(surface):
        return "NUM"
    if surface[:1].isupper() and (len(surface) == 1 or surface[1:].islower()):
        return "PROPN"
    folded = surface.casefold()
    for suffix, tag in _SUFFIX_RULES:
        if folded.endswith(suffix) and len(folded) >= len(suffix) + 2:
            return tag
    return "OTHER_CONTENT"


def pos_tag(
    tokens: Sequence[str],
    tagger: Callable[[str], str] | None = None,
    rules: MaskingRules | None = None,
) -> list[TaggedToken]:
    """Assign exactly one tag per token, deterministically.

    Function words and punctuation are decided by lookup before the content
    tagger ever sees the token; an unrecognized content token falls back to
    OTHER_CONTENT rather than erroring.
    """
    rules = rules or default_rules()
    tagger = tagger or suffix_rule_tag
    tagged = []
    for surface in tokens:
        if surface.casefold() in rules.function_lexicon:
            tag = FUNCTION
        elif _is_punct(surface):
            tag = PUNCT
        elif surface in rules.placeholders:
            tag = "OTHER_CONTENT"
        else:
            tag = tagger(surface)
            if tag not in CONTENT_TAGS:
                tag = "OTHER_CONTENT"
        tagged.append(TaggedToken(surface=surface, tag=tag))
    return tagged


def posnoise_mask(tagged: Sequence[TaggedToken], rules: MaskingRules | None = None) -> list[str]:
    """Replace content tokens with placeholders, keeping function words and punctuation.

    Output length always equals input length.  Placeholder tokens map to
    themselves, so masking an already-masked sequence is a no-op.
    """
    rules = rules or default_rules()
    out = []
    for tok in tagged:
        if tok.tag in (FUNCTION, PUNCT) or tok.surface in rules.placeholders:
            out.append(tok.surface)
        else:
            out.append(rules.placeholder_map[tok.tag])
    return out


def mask_tokens(
    tokens: Sequence[str],
    rules: MaskingRules | None = None,
    tagger: Callable[[str], str] | None = None,
) -> list[str]:
    return posnoise_mask(pos_tag(tokens, tagger=tagger, rules=rules), rules=rules)


def masked_view(
    doc: Document,
    rules: MaskingRules | None = None,
    tagger: Callable[[str], str] | None = None,
) -> Document:
    """A Document whose text is the masked token sequence, space-joined.

    Placeholders survive tokenization as single tokens, so the returned
    document keeps the tokens == tokenize(clean_text) invariant and can be
    fed to any scorer that consumes Documents.
    """
    masked = mask_tokens(doc.tokens, rules=rules, tagger=tagger)
    return replace(doc, clean_text=" ".join(masked), tokens=tuple(masked))
