"""Attack-efficacy and text-quality metrics.

Attacked (watermarked) texts are the positive class; human texts are negative.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .lm import InvalidInputError

BLEU_EPSILON = 1e-9


def asr(reports) -> float:
    """Fraction of attacked texts the detector misses."""
    reports = list(reports)
    if not reports:
        raise InvalidInputError("no reports")
    return sum(1 for r in reports if not r.decision) / len(reports)


def calibrate_threshold(human_scores: Sequence[float], target_fpr: float) -> float:
    """Smallest candidate threshold whose human false-positive rate is <= ``target_fpr``.

    Candidates are the observed human scores plus the next float above the
    maximum, so the answer is always an order statistic or just past the top.
    """
    h = np.sort(np.asarray(human_scores, dtype=np.float64))
    n = h.size
    if n == 0:
        raise InvalidInputError("empty human score sample")
    if not 0 <= target_fpr <= 1:
        raise InvalidInputError("target_fpr must lie in [0, 1]")
    allowed = math.floor(target_fpr * n + 1e-9)
    # fraction(h >= h[i]) = (n - first index of h[i]) / n
    for v in np.unique(h):
        if n - int(np.searchsorted(h, v, side="left")) <= allowed:
            return float(v)
    return float(np.nextafter(h[-1], np.inf))


def _confusion(attacked: np.ndarray, human: np.ndarray, t: float) -> tuple[int, int, int]:
    tp = int((attacked >= t).sum())
    fp = int((human >= t).sum())
    return tp, fp, attacked.size - tp


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def tpr_f1(attacked_scores: Sequence[float], human_scores: Sequence[float],
           threshold: float) -> tuple[float, float]:
    a = np.asarray(attacked_scores, dtype=np.float64)
    h = np.asarray(human_scores, dtype=np.float64)
    if a.size == 0:
        raise InvalidInputError("empty attacked score sample")
    tp, fp, fn = _confusion(a, h, threshold)
    return tp / a.size, _f1(tp, fp, fn)


def best_f1(attacked_scores: Sequence[float], human_scores: Sequence[float]) -> tuple[float, float]:
    """Maximum F1 over all thresholds; returns ``(f1, threshold)``.

    Scans every distinct merged score with a sort and cumulative counts.
    """
    a = np.sort(np.asarray(attacked_scores, dtype=np.float64))
    h = np.sort(np.asarray(human_scores, dtype=np.float64))
    if a.size == 0:
        raise InvalidInputError("empty attacked score sample")
    cand = np.unique(np.concatenate([a, h]))
    tp = a.size - np.searchsorted(a, cand, side="left")
    fp = h.size - np.searchsorted(h, cand, side="left")
    fn = a.size - tp
    f1 = 2 * tp / (2 * tp + fp + fn)
    i = int(np.argmax(f1))
    return float(f1[i]), float(cand[i])


@dataclass
class EfficacyReport:
    asr: float
    tpr_at_fpr: dict = field(default_factory=dict)
    f1_at_fpr: dict = field(default_factory=dict)
    best_f1: float = 0.0
    thresholds: dict = field(default_factory=dict)


def efficacy_report(attacked_reports, human_scores: Sequence[float],
                    fprs: Iterable[float] = (0.01, 0.10)) -> EfficacyReport:
    attacked_reports = list(attacked_reports)
    scores = [r.z for r in attacked_reports]
    rep = EfficacyReport(asr=asr(attacked_reports), best_f1=best_f1(scores, human_scores)[0])
    for fpr in fprs:
        t = calibrate_threshold(human_scores, fpr)
        tpr, f1 = tpr_f1(scores, human_scores, t)
        rep.thresholds[fpr] = t
        rep.tpr_at_fpr[fpr] = tpr
        rep.f1_at_fpr[fpr] = f1
    return rep


def ngrams(tokens: Sequence[int], n: int) -> list[tuple]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def self_bleu(candidate: Sequence[int], reference: Sequence[int], max_order: int = 4) -> float:
    """Sentence BLEU of ``candidate`` against a single ``reference``.

    Clipped n-gram precisions with uniform weights, zero matches replaced by
    ``BLEU_EPSILON``, and the usual brevity penalty. Orders longer than the
    candidate are dropped and the weights renormalised over the rest.
    """
    c, r = len(candidate), len(reference)
    if c == 0:
        return 0.0
    orders = range(1, min(max_order, c) + 1)
    log_p = 0.0
    for n in orders:
        cand = Counter(ngrams(candidate, n))
        ref = Counter(ngrams(reference, n))
        matches = sum(min(k, ref[g]) for g, k in cand.items())
        total = c - n + 1
        log_p += math.log(max(matches, BLEU_EPSILON) / total)
    log_p /= len(orders)
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    return bp * math.exp(log_p)


def distinct_n(tokens: Sequence[int], n: int = 1) -> float:
    grams = ngrams(list(tokens), n)
    if not grams:
        return 1.0
    return len(set(grams)) / len(grams)


def summarize(values: Iterable[float]) -> Mapping[str, float]:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        return {"mean": math.nan, "median": math.nan, "std": math.nan}
    return {"mean": float(v.mean()), "median": float(np.median(v)), "std": float(v.std())}
