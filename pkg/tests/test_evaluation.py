import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from endgate import MetricError
from endgate.evaluation import (EvalReport, aggregate_wer, build_report, edit_ops,
                                eepr, latency_percentiles, relative_reduction,
                                report_csv_row, wer)
from endgate.pipeline import EndpointDecision


def _decision(ep_frame, eos_frame=100, audio_end=200, ref=("a",), hyp=("a",)):
    latency = None if ep_frame is None else (ep_frame - eos_frame) * 30
    return EndpointDecision(
        utterance_id="u", category="complete", ep_frame=ep_frame,
        source=None if ep_frame is None else "acoustic", arbitrated=False,
        latency_ms=latency, early=ep_frame is not None and ep_frame < eos_frame,
        hypothesis=list(hyp), ref_tokens=list(ref), eos_frame=eos_frame,
        audio_end_frame=audio_end)


def _levenshtein(a, b):
    """Independent row-iteration edit distance (no backtrace)."""
    if len(a) > len(b):
        a, b = b, a
    row = list(range(len(a) + 1))
    for j, y in enumerate(b, start=1):
        new = [j]
        for i, x in enumerate(a, start=1):
            new.append(min(row[i] + 1, new[-1] + 1, row[i - 1] + (x != y)))
        row = new
    return row[-1]


class TestWer:
    def test_identity(self):
        assert wer(["a", "b", "c"], ["a", "b", "c"]) == 0.0

    def test_single_deletion(self):
        assert wer("a b c d".split(), "a c d".split()) == 0.25

    def test_may_exceed_one(self):
        # 2 substitutions + 1 insertion over a 2-token reference
        assert wer("a b".split(), "x y z".split()) == 1.5

    def test_empty_reference_raises(self):
        with pytest.raises(MetricError):
            wer([], ["a"])

    def test_empty_hypothesis_all_deletions(self):
        assert wer(["a", "b"], []) == 1.0
        assert edit_ops(["a", "b"], []) == (0, 2, 0)

    def test_tie_breaking_prefers_substitution(self):
        s, d, i = edit_ops(["a"], ["b"])
        assert (s, d, i) == (1, 0, 0)

    def test_matches_levenshtein_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            ref = [int(x) for x in rng.integers(0, 4, size=rng.integers(1, 9))]
            hyp = [int(x) for x in rng.integers(0, 4, size=rng.integers(0, 9))]
            s, d, i = edit_ops(ref, hyp)
            assert s + d + i == _levenshtein(ref, hyp)

    def test_symmetry_up_to_ins_del_exchange(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a = [int(x) for x in rng.integers(0, 3, size=rng.integers(1, 7))]
            b = [int(x) for x in rng.integers(0, 3, size=rng.integers(1, 7))]
            sa, da, ia = edit_ops(a, b)
            sb, db, ib = edit_ops(b, a)
            assert sa + da + ia == sb + db + ib
            assert (da, ia) == (ib, db)

    def test_exhaustive_up_to_length_three(self):
        vocab = (0, 1, 2)
        seqs = [seq for n in range(4) for seq in itertools.product(vocab, repeat=n)]
        for ref in seqs:
            if not ref:
                continue
            for hyp in seqs:
                s, d, i = edit_ops(list(ref), list(hyp))
                assert s + d + i == _levenshtein(list(ref), list(hyp))


class TestEepr:
    def test_counting(self):
        decisions = [_decision(90), _decision(110), _decision(None)]
        assert eepr(decisions, "standard") == pytest.approx(1 / 3)

    def test_partial_boundary_is_strict(self):
        at_end = _decision(200, eos_frame=100, audio_end=200)
        assert eepr([at_end], "partial") == 0.0
        before_end = _decision(199, eos_frame=100, audio_end=200)
        assert eepr([before_end], "partial") == 1.0

    def test_all_late_is_zero(self):
        assert eepr([_decision(150), _decision(101)], "standard") == 0.0

    def test_none_not_early_in_either_mode(self):
        assert eepr([_decision(None)], "standard") == 0.0
        assert eepr([_decision(None)], "partial") == 0.0

    def test_empty_raises(self):
        with pytest.raises(MetricError):
            eepr([], "standard")

    def test_order_invariant(self):
        decisions = [_decision(f) for f in (90, 150, 95, None, 130)]
        assert eepr(decisions) == eepr(list(reversed(decisions)))


class TestLatencyPercentiles:
    def test_nearest_rank_on_ladder(self):
        # latencies 30..300 step 30; P50 is the 5th sorted value = 150
        decisions = [_decision(100 + k) for k in range(1, 11)]
        (p50, p90, p99), avg = latency_percentiles(decisions)
        assert (p50, p90, p99) == (150, 270, 300)
        assert avg == pytest.approx(165.0)

    def test_singleton(self):
        decisions = [_decision(109)]
        (p50, p90, p99), avg = latency_percentiles(decisions)
        assert p50 == p90 == p99 == 270
        assert avg == 270

    def test_early_decision_contributes_negative_latency(self):
        decisions = [_decision(90), _decision(110)]
        (p50, _, _), avg = latency_percentiles(decisions)
        assert p50 == -300
        assert avg == pytest.approx(0.0)

    def test_undecided_excluded(self):
        decisions = [_decision(None), _decision(110)]
        (p50, p90, p99), avg = latency_percentiles(decisions)
        assert p50 == p90 == p99 == 300

    def test_no_decided_raises(self):
        with pytest.raises(MetricError):
            latency_percentiles([_decision(None)])

    def test_against_sort_oracle_on_random_multisets(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n = int(rng.integers(1, 60))
            lat = [int(x) * 30 for x in rng.integers(-20, 60, size=n)]
            decisions = [_decision(100 + v // 30) for v in lat]
            values, avg = latency_percentiles(decisions)
            ordered = sorted(lat)
            for q, got in zip((0.5, 0.9, 0.99), values):
                assert got == ordered[max(1, math.ceil(q * n)) - 1]
                assert got in lat
            assert avg == pytest.approx(sum(lat) / n)

    @given(st.lists(st.integers(-50, 100), min_size=1, max_size=80))
    def test_percentile_monotonicity_and_membership(self, raw):
        decisions = [_decision(100 + v) for v in raw]
        (p50, p90, p99), _ = latency_percentiles(decisions)
        assert p50 <= p90 <= p99
        latencies = {d.latency_ms for d in decisions}
        assert {p50, p90, p99} <= latencies
        assert all(l % 30 == 0 for l in latencies)


class TestRelativeReduction:
    def _report(self, wer_val, eepr_val):
        return EvalReport(wer=wer_val, eepr=eepr_val, latency_p50=0,
                          latency_p90=0, latency_p99=0, latency_avg=0.0,
                          n_utterances=10)

    def test_improvement_sign(self):
        werr, _ = relative_reduction(self._report(0.10, 0.5),
                                     self._report(0.09, 0.5))
        assert werr == pytest.approx(-10.0)

    def test_identity_is_zero(self):
        werr, eeprr = relative_reduction(self._report(0.2, 0.3),
                                         self._report(0.2, 0.3))
        assert werr == 0.0 and eeprr == 0.0

    def test_published_ratio_cross_check(self):
        # 2.39% -> 2.19% early-endpoint rate is an 8.37% relative improvement
        _, eeprr = relative_reduction(self._report(0.1, 0.0239),
                                      self._report(0.1, 0.0219))
        assert eeprr == pytest.approx(-8.37, abs=0.01)

    def test_zero_baseline_raises(self):
        with pytest.raises(MetricError):
            relative_reduction(self._report(0.0, 0.5), self._report(0.1, 0.5))
        with pytest.raises(MetricError):
            relative_reduction(self._report(0.1, 0.0), self._report(0.1, 0.5))


class TestReport:
    def test_build_report_fields(self):
        decisions = [_decision(110, ref=("a", "b"), hyp=("a", "b")),
                     _decision(90, ref=("a", "b"), hyp=("a",)),
                     _decision(None, ref=("c",), hyp=("c",))]
        report = build_report(decisions, mode="standard")
        assert report.n_utterances == 3
        assert report.eepr == pytest.approx(1 / 3)
        assert report.wer == pytest.approx(1 / 5)  # 1 deletion over 5 ref tokens
        assert report.latency_p50 <= report.latency_p90 <= report.latency_p99

    def test_aggregate_wer_weights_by_reference_length(self):
        decisions = [_decision(110, ref=("a",) * 8, hyp=("a",) * 8),
                     _decision(110, ref=("b", "c"), hyp=("x", "c"))]
        assert aggregate_wer(decisions) == pytest.approx(1 / 10)

    def test_csv_row_layout(self):
        report = build_report([_decision(110)], mode="standard")
        row = report_csv_row(report)
        assert row.split(",")[0] == "0.000000"
        assert len(row.split(",")) == 9
