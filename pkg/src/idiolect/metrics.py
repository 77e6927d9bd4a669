"""Evaluation metrics: TNR and its degradation, confidence drop, lexical
diversity diagnostics, and bootstrap confidence intervals.

Rate arithmetic runs through exact rationals (reading each float at its
decimal face value) so that quantities like (0.8 - 0.6) / 0.8 come out as
exactly 0.25 in reports instead of accumulating binary rounding noise.
"""

from __future__ import annotations

import logging
import math
import zlib
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .calibration import DIFFERENT
from .corpus import tokenize

log = logging.getLogger(__name__)

DEFLATE_LEVEL = 6  # fixed and recorded in report metadata
BOOTSTRAP_RESAMPLES = 2000


@dataclass
class EvalRow:
    method: str
    condition: str  # genuine_test | impersonation
    strategy: str | None
    decisions: list[tuple[str, str]]  # (predicted, truth)
    llrs: list[float]

    def __post_init__(self) -> None:
        if len(self.decisions) != len(self.llrs):
            raise ValueError("decisions and llrs must align one-to-one")
        if self.condition == "impersonation":
            bad = [t for _, t in self.decisions if t != DIFFERENT]
            if bad:
                raise ValueError("impersonation rows must have truth=different_author")


@dataclass
class DiversityRow:
    text_id: str
    condition: str
    compressed_bytes: int
    entropy_bits: float
    ttr: float
    truncation_len: int


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


def tnr(decisions: Sequence[tuple[str, str]]) -> float:
    """Fraction of different-author cases predicted different_author."""
    if not decisions:
        raise ValueError("tnr is undefined on an empty set of decisions")
    wrong_truth = [t for _, t in decisions if t != DIFFERENT]
    if wrong_truth:
        raise ValueError("tnr expects rows with truth=different_author only")
    rejected = sum(1 for predicted, _ in decisions if predicted == DIFFERENT)
    return rejected / len(decisions)


def relative_tnr_degradation(tnr_test: float, tnr_imp: float) -> float:
    """(tnr_test - tnr_imp) / tnr_test, computed exactly.

    Positive means lost rejection ability on impersonations; negative means
    impersonations are rejected more reliably than genuine negatives.
    """
    t = _as_fraction(tnr_test)
    i = _as_fraction(tnr_imp)
    if t <= 0:
        raise ValueError("relative TNR degradation is undefined for tnr_test = 0")
    return float((t - i) / t)


def confidence_drop(llrs_test: Sequence[float], llrs_imp: Sequence[float]) -> float:
    """mean(|LLR_test|) - mean(|LLR_imp|) over true-negative LLRs.

    Positive means weaker evidential support when rejecting impersonations.
    Both inputs must be non-empty and strictly negative (true negatives).
    """
    if not llrs_test or not llrs_imp:
        raise ValueError("confidence_drop needs non-empty LLR lists on both sides")
    if any(v >= 0 for v in llrs_test) or any(v >= 0 for v in llrs_imp):
        raise ValueError("confidence_drop expects negative (true-negative) LLRs")
    mean_test = math.fsum(abs(v) for v in llrs_test) / len(llrs_test)
    mean_imp = math.fsum(abs(v) for v in llrs_imp) / len(llrs_imp)
    return mean_test - mean_imp


def compressed_size(text: str, truncation: int, level: int = DEFLATE_LEVEL) -> int:
    """DEFLATE-compressed byte count of the text truncated to `truncation` tokens."""
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    tokens = tokenize(text)[:truncation]
    data = " ".join(tokens).encode("utf-8")
    return len(zlib.compress(data, level))


def entropy(tokens: Sequence[str]) -> float:
    """Shannon entropy in bits per token over the empirical token distribution."""
    if not tokens:
        raise ValueError("entropy of an empty token sequence is undefined")
    n = len(tokens)
    return -math.fsum((c / n) * math.log2(c / n) for c in Counter(tokens).values())


def ttr(tokens: Sequence[str]) -> float:
    """Type-token ratio: distinct types over total tokens."""
    if not tokens:
        raise ValueError("ttr of an empty token sequence is undefined")
    return len(set(tokens)) / len(tokens)


def confidence_interval(
    values: Sequence[float],
    level: float = 0.95,
    n_resamples: int = BOOTSTRAP_RESAMPLES,
    seed: int = 0,
) -> tuple[float, float]:
    """Seeded percentile bootstrap around the mean.

    The interval is clamped to contain the sample mean.  A single value gives
    the degenerate interval (v, v) with a warning.
    """
    if not values:
        raise ValueError("confidence interval of no values")
    if len(values) == 1:
        log.warning("confidence interval over a single value is degenerate")
        return (float(values[0]), float(values[0]))
    arr = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(arr), size=(n_resamples, len(arr)))
    means = arr[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo = float(np.percentile(means, 100.0 * alpha))
    hi = float(np.percentile(means, 100.0 * (1.0 - alpha)))
    mean = float(arr.mean())
    return (min(lo, mean), max(hi, mean))


# ---------------------------------------------------------------------------
# chart emission (dependency-free, deterministic output)


def svg_bar_chart(
    title: str,
    labels: Sequence[str],
    values: Sequence[float],
    errors: Sequence[tuple[float, float]] | None = None,
    width: int = 640,
    height: int = 360,
) -> str:
    """A minimal grouped bar chart as an SVG string, with optional error bars.

    Deterministic output so charts can be diffed between reproducibility runs.
    """
    if len(labels) != len(values):
        raise ValueError("labels and values must align")
    n = len(values)
    if n == 0:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"></svg>'
    lo = min(0.0, min(values), *(e[0] for e in errors)) if errors else min(0.0, min(values))
    hi = max(0.0, max(values), *(e[1] for e in errors)) if errors else max(0.0, max(values))
    if hi == lo:
        hi = lo + 1.0
    margin = 50
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin

    def y_of(v: float) -> float:
        return margin + plot_h * (hi - v) / (hi - lo)

    bar_w = plot_w / max(n, 1) * 0.6
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{y_of(0.0):.2f}" x2="{width - margin}" '
        f'y2="{y_of(0.0):.2f}" stroke="black" stroke-width="1"/>',
    ]
    for i, (label, value) in enumerate(zip(labels, values)):
        cx = margin + plot_w * (i + 0.5) / n
        x = cx - bar_w / 2
        y0, y1 = y_of(max(0.0, value)), y_of(min(0.0, value))
        parts.append(
            f'<rect x="{x:.2f}" y="{y0:.2f}" width="{bar_w:.2f}" '
            f'height="{abs(y1 - y0):.2f}" fill="#4477aa"/>'
        )
        if errors is not None:
            e_lo, e_hi = errors[i]
            parts.append(
                f'<line x1="{cx:.2f}" y1="{y_of(e_lo):.2f}" x2="{cx:.2f}" '
                f'y2="{y_of(e_hi):.2f}" stroke="black" stroke-width="1"/>'
            )
        parts.append(
            f'<text x="{cx:.2f}" y="{height - margin + 16}" text-anchor="middle" '
            f'font-size="10">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
