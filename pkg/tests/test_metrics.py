import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biralab import metrics as mt
from biralab.lm import InvalidInputError
from biralab.watermark import report_from_count

scores = st.lists(st.floats(-10, 10, allow_nan=False).map(lambda x: round(x, 1)), min_size=1, max_size=60)


def _reports(decisions):
    return [report_from_count(230 if d else 115, 230, 0.5, 4.0) for d in decisions]


def test_asr():
    assert mt.asr(_reports([True] * 5)) == 0.0
    assert mt.asr(_reports([False] * 5)) == 1.0
    assert mt.asr(_reports([False, False, True, False])) == 0.75
    with pytest.raises(InvalidInputError):
        mt.asr([])


class TestCalibrate:
    def test_all_zero(self):
        t = mt.calibrate_threshold([0.0] * 50, 0.10)
        assert t > 0
        assert np.mean(np.zeros(50) >= t) == 0.0

    def test_one_to_hundred(self):
        h = np.arange(1, 101, dtype=float)
        t = mt.calibrate_threshold(h, 0.10)
        # exhaustive scan: smallest candidate whose FPR is <= 0.10
        oracle = min(c for c in list(h) + [math.inf] if np.mean(h >= c) <= 0.10)
        assert t == oracle == 91.0
        assert np.mean(h >= t) == 0.10

    def test_zero_fpr(self):
        h = [0.5, 2.0, 1.0]
        assert mt.calibrate_threshold(h, 0.0) > 2.0

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            mt.calibrate_threshold([], 0.1)

    @settings(max_examples=300, deadline=None)
    @given(scores, st.floats(0, 1), st.floats(0, 1))
    def test_fpr_respected_and_monotone(self, h, f1, f2):
        h = np.array(h)
        lo, hi = sorted((f1, f2))
        t_lo, t_hi = mt.calibrate_threshold(h, lo), mt.calibrate_threshold(h, hi)
        assert np.mean(h >= t_lo) <= lo + 1e-12
        assert np.mean(h >= t_hi) <= hi + 1e-12
        assert t_lo >= t_hi


def _scan(a, h):
    best = 0.0
    for t in sorted(set(a) | set(h)) + [math.inf]:
        tp = sum(x >= t for x in a)
        fp = sum(x >= t for x in h)
        fn = len(a) - tp
        if 2 * tp + fp + fn:
            best = max(best, 2 * tp / (2 * tp + fp + fn))
    return best


class TestF1:
    def test_separated(self):
        assert mt.tpr_f1([5, 6, 7], [0, 1, 2], 4.0) == (1.0, 1.0)
        assert mt.best_f1([5, 6, 7], [0, 1, 2])[0] == 1.0

    def test_full_overlap_balanced(self):
        z = np.random.default_rng(0).normal(size=500)
        f1, t = mt.best_f1(z, z.copy())
        assert abs(f1 - 2 / 3) <= 1e-9
        assert t == z.min()

    @settings(max_examples=300, deadline=None)
    @given(scores, scores)
    def test_matches_scan(self, a, h):
        assert mt.best_f1(a, h)[0] == pytest.approx(_scan(a, h), abs=1e-12)

    def test_efficacy_report(self):
        attacked = _reports([True, False, True, True])
        rep = mt.efficacy_report(attacked, list(np.linspace(-2, 2, 100)))
        assert rep.asr == 0.25
        assert set(rep.tpr_at_fpr) == {0.01, 0.10}
        assert all(0 <= v <= 1 for v in rep.tpr_at_fpr.values())


class TestBleu:
    def test_identity(self):
        x = list(range(30))
        assert mt.self_bleu(x, x) == 1.0
        assert mt.self_bleu([4, 4, 4], [4, 4, 4]) == 1.0

    def test_disjoint(self):
        assert mt.self_bleu(list(range(10)), list(range(100, 110))) < 1e-8

    def test_one_substitution(self):
        ref = list(range(20))
        cand = ref.copy()
        cand[10] = 999
        # clipped precisions 19/20, 17/19, 15/18, 13/17; no brevity penalty
        assert mt.self_bleu(cand, ref) == pytest.approx((195 / 360) ** 0.25, rel=1e-12)

    def test_brevity_penalty(self):
        ref = list(range(20))
        assert mt.self_bleu(ref[:10], ref) == pytest.approx(math.exp(1 - 20 / 10), rel=1e-12)

    def test_not_symmetric(self):
        a, b = list(range(10)), list(range(10)) + [50, 51]
        assert mt.self_bleu(a, b) != mt.self_bleu(b, a)

    def test_short_candidate(self):
        assert mt.self_bleu([1, 2], [1, 2]) == 1.0
        assert mt.self_bleu([], [1]) == 0.0


def test_distinct_n():
    assert mt.distinct_n([3] * 8, 1) == 1 / 8
    assert mt.distinct_n(list(range(8)), 1) == 1.0
    assert mt.distinct_n([1, 2, 1, 2], 2) == 2 / 3
