import csv
import io

import numpy as np
import pytest

from endgate import ConfigError
from endgate.evaluation import EvalReport
from endgate.sweep import (SweepGrids, OperatingPoint, baseline_anchor,
                           emit_curves, matched_pairs, pareto_frontier,
                           precompute_corpus, run_sweep)

SMALL = SweepGrids(t_ep=(0.5, 0.7, 0.9), eos_scale=(1.0, 2.0),
                   t_arb=(0.0, 0.2, 0.5, 0.8, 0.9),
                   baseline_t_ep=0.7, baseline_eos_scale=2.0)


@pytest.fixture(scope="module")
def sweep_points(trained_setup):
    te = trained_setup["test"]
    pre = precompute_corpus(te, trained_setup["frame_model"], trained_setup["sim"])
    return run_sweep(te, trained_setup["frame_model"], trained_setup["sim"],
                     trained_setup["arbitrator"], SMALL, "both", precomputed=pre)


def _point(lat, eepr_val, kind="baseline", t_arb=None):
    report = EvalReport(wer=0.1, eepr=eepr_val, latency_p50=0, latency_p90=0,
                        latency_p99=0, latency_avg=lat, n_utterances=10)
    return OperatingPoint("both", kind, 0.5, 1.0, t_arb, report)


class TestRunSweep:
    def test_point_count(self, sweep_points):
        assert len(sweep_points) == 3 * 2 + 5

    def test_latency_nondecreasing_in_t_arb(self, sweep_points):
        arbs = [p for p in sweep_points if p.kind == "arbitrated"]
        lats = [p.avg_latency for p in sorted(arbs, key=lambda p: p.t_arb)]
        assert all(a <= b + 1e-9 for a, b in zip(lats, lats[1:]))

    def test_t_arb_zero_equals_anchor_baseline(self, sweep_points):
        anchor = baseline_anchor(sweep_points, SMALL)
        accept_all = next(p for p in sweep_points
                          if p.kind == "arbitrated" and p.t_arb == 0.0)
        assert accept_all.report.wer == anchor.report.wer
        assert accept_all.report.eepr == anchor.report.eepr
        assert accept_all.report.latency_avg == anchor.report.latency_avg
        assert accept_all.report.latency_p99 == anchor.report.latency_p99

    def test_dominated_points_still_emitted(self, sweep_points):
        # run_sweep never filters; the frontier is a separate view
        frontier = pareto_frontier(sweep_points)
        assert len(frontier) <= len(sweep_points)
        assert len(sweep_points) == 11

    def test_rerun_identical(self, trained_setup, sweep_points):
        te = trained_setup["test"]
        again = run_sweep(te, trained_setup["frame_model"], trained_setup["sim"],
                          trained_setup["arbitrator"], SMALL, "both")
        for a, b in zip(sweep_points, again):
            assert a.report == b.report

    def test_parallel_matches_serial(self, trained_setup, sweep_points):
        te = trained_setup["test"]
        parallel = run_sweep(te, trained_setup["frame_model"], trained_setup["sim"],
                             trained_setup["arbitrator"], SMALL, "both", jobs=2)
        for a, b in zip(sweep_points, parallel):
            assert a.report == b.report

    def test_paired_decoder_randomness(self, trained_setup):
        # points differing only in thresholds share token emissions: the
        # schedules are threshold-independent by construction
        te = trained_setup["test"]
        pre1 = precompute_corpus(te, trained_setup["frame_model"], trained_setup["sim"])
        pre2 = precompute_corpus(te, trained_setup["frame_model"], trained_setup["sim"])
        for a, b in zip(pre1, pre2):
            assert np.array_equal(a.schedule.emit_frames, b.schedule.emit_frames)
            assert np.array_equal(a.schedule.emitted_ids, b.schedule.emitted_ids)
            assert np.array_equal(a.schedule.eos_uniforms, b.schedule.eos_uniforms)


class TestParetoFrontier:
    def test_documented_example(self):
        pts = [_point(100, 0.05), _point(200, 0.03), _point(150, 0.06)]
        frontier = pareto_frontier(pts)
        assert [(p.avg_latency, p.eepr) for p in frontier] == [(100, 0.05), (200, 0.03)]

    def test_single_point(self):
        pts = [_point(100, 0.05)]
        assert pareto_frontier(pts) == pts

    def test_duplicates_deduplicated(self):
        pts = [_point(100, 0.05), _point(100, 0.05)]
        assert len(pareto_frontier(pts)) == 1

    def test_against_quadratic_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            n = int(rng.integers(1, 40))
            pts = [_point(float(rng.integers(0, 15)) * 30,
                          float(rng.integers(0, 10)) / 10) for _ in range(n)]
            frontier = pareto_frontier(pts)
            keys = {(p.avg_latency, p.eepr) for p in pts}
            expected = sorted(
                k for k in keys
                if not any(q[0] <= k[0] and q[1] <= k[1] and q != k for q in keys))
            assert [(p.avg_latency, p.eepr) for p in frontier] == expected

    def test_frontier_ordered_by_latency(self):
        rng = np.random.default_rng(4)
        pts = [_point(float(rng.integers(0, 50)), float(rng.random())) for _ in range(60)]
        frontier = pareto_frontier(pts)
        lats = [p.avg_latency for p in frontier]
        assert lats == sorted(lats)


class TestMatchedPairs:
    def test_within_tolerance_only(self):
        base = [_point(100, 0.5), _point(500, 0.2)]
        arbs = [_point(110, 0.1, "arbitrated", 0.5), _point(300, 0.1, "arbitrated", 0.7)]
        pairs = matched_pairs(base, arbs)
        assert len(pairs) == 1
        assert pairs[0][0].avg_latency == 100

    def test_picks_nearest(self):
        base = [_point(100, 0.5), _point(120, 0.4)]
        arbs = [_point(111, 0.1, "arbitrated", 0.5)]
        pairs = matched_pairs(base, arbs)
        assert pairs[0][0].avg_latency == 120


class TestEmitCurves:
    def test_outputs_and_layout(self, sweep_points, tmp_path):
        anchor = baseline_anchor(sweep_points, SMALL)
        outputs = emit_curves(sweep_points, tmp_path / "curves", anchor)
        curves = (tmp_path / "curves" / "curves.csv").read_text().splitlines()
        assert len(curves) == len(sweep_points) + 1
        header = curves[0].split(",")
        assert header == ["config", "T_EP", "eos_scale", "T_arb", "avg_latency_ms",
                          "eepr", "eeprr_pct", "wer", "werr_pct", "p50", "p90", "p99"]
        rows = list(csv.DictReader(io.StringIO("\n".join(curves))))
        anchor_rows = [r for r in rows
                       if r["config"] == "both/baseline"
                       and float(r["T_EP"]) == SMALL.baseline_t_ep
                       and float(r["eos_scale"]) == SMALL.baseline_eos_scale]
        assert len(anchor_rows) == 1
        assert float(anchor_rows[0]["eeprr_pct"]) == 0.0
        assert float(anchor_rows[0]["werr_pct"]) == 0.0
        for key in ("eeprr_both", "werr_both", "curves", "frontier"):
            assert outputs[key].exists()

    def test_rerun_byte_identical(self, sweep_points, tmp_path):
        anchor = baseline_anchor(sweep_points, SMALL)
        emit_curves(sweep_points, tmp_path / "a", anchor)
        emit_curves(sweep_points, tmp_path / "b", anchor)
        assert ((tmp_path / "a" / "curves.csv").read_bytes()
                == (tmp_path / "b" / "curves.csv").read_bytes())
        assert ((tmp_path / "a" / "frontier.csv").read_bytes()
                == (tmp_path / "b" / "frontier.csv").read_bytes())


class TestGridValidation:
    def test_empty_grid_rejected(self):
        with pytest.raises(ConfigError):
            SweepGrids(t_ep=()).validate()

    def test_threshold_ranges(self):
        with pytest.raises(ConfigError):
            SweepGrids(t_ep=(1.5,), baseline_t_ep=1.5).validate()
        with pytest.raises(ConfigError):
            SweepGrids(eos_scale=(-1.0,), baseline_eos_scale=-1.0).validate()

    def test_anchor_must_be_on_grid(self):
        with pytest.raises(ConfigError):
            SweepGrids(baseline_t_ep=0.55).validate()
