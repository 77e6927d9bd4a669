"""Logistic-regression score calibration: raw verifier scores to log-likelihood ratios.

A single-feature logistic model P(same-author | s) = sigmoid(w*s + b) is fit by
Newton's method on training pairs with known ground truth.  The calibrated LLR
for a raw score is then the model's log-odds minus the prior log-odds, i.e.
w*s + b - prior in natural-log units, converted to the configured reporting
base (base 10 by the usual forensic convention).  Positive values support the
same-author hypothesis.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

SAME = "same_author"
DIFFERENT = "different_author"
INCONCLUSIVE = "inconclusive"

LN10 = math.log(10.0)

SEPARATION_RIDGE = 1e-6
FIT_TOL = 1e-8
FIT_MAX_ITER = 500


class FitError(Exception):
    pass


@dataclass(frozen=True)
class ScoreSample:
    raw_score: float
    label: str  # same_author | different_author
    method: str = ""
    pair: tuple[str, str] = ("", "")

    def __post_init__(self) -> None:
        if self.label not in (SAME, DIFFERENT):
            raise ValueError(f"unknown label {self.label!r}")


@dataclass
class Calibrator:
    weight: float
    bias: float
    method: str = ""
    prior_log_odds: float = 0.0
    log_base: str = "10"  # "10" or "e"
    fit_meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "weight": self.weight,
            "bias": self.bias,
            "prior_log_odds": self.prior_log_odds,
            "log_base": self.log_base,
            "fit_meta": self.fit_meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Calibrator":
        return cls(
            weight=d["weight"],
            bias=d["bias"],
            method=d.get("method", ""),
            prior_log_odds=d.get("prior_log_odds", 0.0),
            log_base=d.get("log_base", "10"),
            fit_meta=d.get("fit_meta", {}),
        )


@dataclass(frozen=True)
class Llr:
    value: float
    log_base: str = "10"
    method: str = ""
    author: str = ""
    query_id: str = ""


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _nll(scores, ys, w, b, ridge) -> float:
    total = 0.0
    for s, y in zip(scores, ys):
        z = w * s + b
        # -log P(y|z) = log(1 + exp(-z)) for y=1, log(1 + exp(z)) for y=0
        t = z if y == 1 else -z
        total += math.log1p(math.exp(-abs(t))) + max(-t, 0.0)
    return total + 0.5 * ridge * (w * w + b * b)


def _is_separable(same_scores, diff_scores) -> bool:
    return min(same_scores) > max(diff_scores) or max(same_scores) < min(diff_scores)


def fit_calibrator(
    samples: list[ScoreSample],
    method: str = "",
    log_base: str = "10",
    prior_log_odds: float = 0.0,
    max_iter: int = FIT_MAX_ITER,
    tol: float = FIT_TOL,
) -> Calibrator:
    """Maximum-likelihood logistic fit by Newton's method.

    Requires at least one sample of each label and finite raw scores.  On
    perfectly separated classes the likelihood has no finite maximum, so a
    small ridge penalty (1e-6) is applied and a warning logged.
    """
    if not samples:
        raise FitError("no calibration samples")
    scores = [s.raw_score for s in samples]
    if any(not math.isfinite(s) for s in scores):
        raise FitError("raw scores must be finite")
    ys = [1 if s.label == SAME else 0 for s in samples]
    same_scores = [s for s, y in zip(scores, ys) if y == 1]
    diff_scores = [s for s, y in zip(scores, ys) if y == 0]
    if not same_scores or not diff_scores:
        raise FitError("calibration needs samples of both labels")

    ridge = 0.0
    if _is_separable(same_scores, diff_scores):
        ridge = SEPARATION_RIDGE
        log.warning(
            "calibration scores for %r are perfectly separated; applying ridge %g",
            method or "unnamed method", ridge,
        )

    w, b = 0.0, 0.0
    converged = False
    iterations = 0
    nll = _nll(scores, ys, w, b, ridge)
    for iterations in range(1, max_iter + 1):
        g_w = -ridge * w
        g_b = -ridge * b
        h_ww = ridge
        h_wb = 0.0
        h_bb = ridge
        for s, y in zip(scores, ys):
            p = _sigmoid(w * s + b)
            r = y - p
            g_w += r * s
            g_b += r
            q = p * (1.0 - p)
            h_ww += q * s * s
            h_wb += q * s
            h_bb += q
        det = h_ww * h_bb - h_wb * h_wb
        if det <= 0 or not math.isfinite(det):
            raise FitError("singular Hessian during calibration fit")
        dw = (h_bb * g_w - h_wb * g_b) / det
        db = (h_ww * g_b - h_wb * g_w) / det
        # damped step: back off if the objective gets worse
        step = 1.0
        for _ in range(30):
            new_nll = _nll(scores, ys, w + step * dw, b + step * db, ridge)
            if new_nll <= nll + 1e-15:
                break
            step /= 2.0
        w += step * dw
        b += step * db
        nll = _nll(scores, ys, w, b, ridge)
        if max(abs(step * dw), abs(step * db)) < tol:
            converged = True
            break
    if not converged:
        log.warning("calibration fit for %r hit max_iter=%d without converging", method, max_iter)

    return Calibrator(
        weight=w,
        bias=b,
        method=method,
        prior_log_odds=prior_log_odds,
        log_base=log_base,
        fit_meta={
            "iterations": iterations,
            "converged": converged,
            "ridge": ridge,
            "n_same": len(same_scores),
            "n_different": len(diff_scores),
        },
    )


def apply(cal: Calibrator, raw: float, author: str = "", query_id: str = "") -> Llr:
    """Calibrated LLR for a raw score: log-odds minus prior, in the configured base."""
    natural = cal.weight * raw + cal.bias - cal.prior_log_odds
    value = natural if cal.log_base == "e" else natural / LN10
    return Llr(value=value, log_base=cal.log_base, method=cal.method,
               author=author, query_id=query_id)


def decide(llr: Llr, tau: float = 0.0) -> str:
    """Three-way decision with threshold tau; binary at tau=0, where the
    exact-zero boundary resolves to different_author (strict inequality for
    the same-author call)."""
    if llr.value > tau:
        return SAME
    if llr.value < -tau:
        return DIFFERENT
    return DIFFERENT if tau == 0.0 else INCONCLUSIVE


def cllr(same_llrs: list[float], diff_llrs: list[float], log_base: str = "10") -> float:
    """Log-likelihood-ratio cost; used as an internal check that calibration
    actually improves on an uncalibrated mapping."""
    if not same_llrs or not diff_llrs:
        raise ValueError("cllr needs LLRs for both classes")
    scale = LN10 if log_base == "10" else 1.0
    c_same = sum(math.log2(1.0 + math.exp(-v * scale)) for v in same_llrs) / len(same_llrs)
    c_diff = sum(math.log2(1.0 + math.exp(v * scale)) for v in diff_llrs) / len(diff_llrs)
    return 0.5 * (c_same + c_diff)
