import numpy as np
import pytest

from endgate import ConfigError, DependencyError
from endgate.evaluation import eepr
from endgate.pipeline import (PipelineConfig, decide, load_decisions,
                              precompute_utterance, replay_trace, run_corpus,
                              run_utterance, save_decisions)


@pytest.fixture(scope="module")
def precomputed(trained_setup):
    te = trained_setup["test"]
    return [precompute_utterance(u, trained_setup["frame_model"],
                                 trained_setup["sim"], te.vocab.n_speech)
            for u in te.utterances]


def _decide_all(trained_setup, precomputed, config):
    arb = trained_setup["arbitrator"] if config.use_arbitrator else None
    return [decide(u, p, arb, config)
            for u, p in zip(trained_setup["test"].utterances, precomputed)]


BASE = PipelineConfig(first_pass="both", use_arbitrator=False, t_ep=0.7,
                      eos_scale=2.0)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            PipelineConfig(first_pass="nope").validate()
        with pytest.raises(ConfigError):
            PipelineConfig(t_ep=1.5).validate()
        with pytest.raises(ConfigError):
            PipelineConfig(t_arb=-0.1).validate()
        with pytest.raises(ConfigError):
            PipelineConfig(eos_scale=-1).validate()

    def test_missing_arbitrator_raises(self, trained_setup, precomputed):
        config = PipelineConfig(use_arbitrator=True)
        with pytest.raises(DependencyError):
            decide(trained_setup["test"].utterances[0], precomputed[0], None, config)


class TestBaselineRule:
    def test_candidate_is_acoustic_or_e2e(self, trained_setup, precomputed):
        # oracle recomputation over the precomputed signals: the decision
        # frame is the first frame where guardrail or either detector fires
        decisions = _decide_all(trained_setup, precomputed, BASE)
        for utt, pre, dec in zip(trained_setup["test"].utterances, precomputed,
                                 decisions):
            count = 0
            expected = None
            for t in range(utt.n_frames):
                if pre.vad[t] < 0.5:
                    count += 1
                else:
                    count = 0
                if count >= BASE.guardrail_frames:
                    expected = (t, "guardrail")
                    break
                if pre.schedule.eos_event(t, BASE.eos_scale):
                    expected = (t, "e2e")
                    break
                if pre.ep[t] > BASE.t_ep:
                    expected = (t, "acoustic")
                    break
            assert (dec.ep_frame, dec.source) == (expected or (None, None))

    def test_acoustic_only_ignores_eos_events(self, trained_setup, precomputed):
        config = PipelineConfig(first_pass="acoustic_only", use_arbitrator=False,
                                t_ep=0.7, eos_scale=2.0)
        for utt, pre, dec in zip(trained_setup["test"].utterances, precomputed,
                                 _decide_all(trained_setup, precomputed, config)):
            assert dec.source in (None, "acoustic", "guardrail")

    def test_e2e_only_ignores_acoustic(self, trained_setup, precomputed):
        config = PipelineConfig(first_pass="e2e_only", use_arbitrator=False,
                                t_ep=0.0, eos_scale=2.0)
        for dec in _decide_all(trained_setup, precomputed, config):
            assert dec.source in (None, "e2e", "guardrail")

    def test_latency_and_early_fields(self, trained_setup, precomputed):
        for dec in _decide_all(trained_setup, precomputed, BASE):
            if dec.ep_frame is None:
                assert dec.latency_ms is None and not dec.early
            else:
                assert dec.latency_ms == (dec.ep_frame - dec.eos_frame) * 30
                assert dec.early == (dec.ep_frame < dec.eos_frame)


class TestDegenerateThresholds:
    def test_accept_all_matches_baseline_byte_identical(self, trained_setup,
                                                        precomputed, tmp_path):
        base = _decide_all(trained_setup, precomputed, BASE)
        accept_all = _decide_all(
            trained_setup, precomputed,
            PipelineConfig(first_pass="both", use_arbitrator=True, t_ep=0.7,
                           eos_scale=2.0, t_arb=0.0))
        pa, pb = tmp_path / "base.jsonl", tmp_path / "arb0.jsonl"
        save_decisions(pa, base)
        save_decisions(pb, accept_all)
        assert pa.read_bytes() == pb.read_bytes()

    def test_reject_all_forces_guardrail(self, trained_setup, precomputed):
        reject_all = _decide_all(
            trained_setup, precomputed,
            PipelineConfig(first_pass="both", use_arbitrator=True, t_ep=0.7,
                           eos_scale=2.0, t_arb=1.0))
        for utt, dec in zip(trained_setup["test"].utterances, reject_all):
            if utt.category == "complete":
                last_speech = int(np.nonzero(utt.speech_mask)[0][-1])
                assert dec.source == "guardrail"
                assert dec.ep_frame == last_speech + 58
                assert not dec.arbitrated

    def test_eos_scale_zero_and_tep_one_all_guardrail(self, trained_setup,
                                                      precomputed):
        config = PipelineConfig(first_pass="both", use_arbitrator=False,
                                t_ep=1.0, eos_scale=0.0)
        for dec in _decide_all(trained_setup, precomputed, config):
            assert dec.source in ("guardrail", None)


class TestGatingMonotonicity:
    def test_arbitration_never_advances_endpoints(self, trained_setup, precomputed):
        base = _decide_all(trained_setup, precomputed, BASE)
        for t_arb in (0.25, 0.5, 0.9):
            arbd = _decide_all(
                trained_setup, precomputed,
                PipelineConfig(first_pass="both", use_arbitrator=True, t_ep=0.7,
                               eos_scale=2.0, t_arb=t_arb))
            for b, a in zip(base, arbd):
                if a.ep_frame is not None:
                    assert b.ep_frame is not None
                    assert a.ep_frame >= b.ep_frame
            assert eepr(arbd) <= eepr(base)

    def test_accepted_frames_subset_of_candidates(self, trained_setup, precomputed):
        # gating-only contract: an arbitrated decision frame must be a
        # baseline candidate frame or a guardrail frame
        arbd = _decide_all(
            trained_setup, precomputed,
            PipelineConfig(first_pass="both", use_arbitrator=True, t_ep=0.7,
                           eos_scale=2.0, t_arb=0.5))
        for utt, pre, dec in zip(trained_setup["test"].utterances, precomputed,
                                 arbd):
            if dec.ep_frame is None or dec.source == "guardrail":
                continue
            t = dec.ep_frame
            acoustic = pre.ep[t] > 0.7
            e2e = pre.schedule.eos_event(t, 2.0)
            assert acoustic or e2e

    def test_guardrail_supremacy(self, trained_setup, precomputed):
        # no decision ever lands beyond the terminal-silence guardrail bound
        for config in (BASE,
                       PipelineConfig(first_pass="both", use_arbitrator=True,
                                      t_ep=0.7, eos_scale=2.0, t_arb=0.99)):
            for utt, dec in zip(trained_setup["test"].utterances,
                                _decide_all(trained_setup, precomputed, config)):
                speech = np.nonzero(utt.speech_mask)[0]
                bound = int(speech[-1]) + config.guardrail_frames
                if dec.ep_frame is not None:
                    assert dec.ep_frame <= bound


class TestRunCorpus:
    def test_decision_count_and_determinism(self, trained_setup, tmp_path):
        te = trained_setup["test"]
        args = (te, trained_setup["frame_model"], trained_setup["sim"], None, BASE)
        a = run_corpus(*args)
        b = run_corpus(*args)
        assert len(a) == len(te)
        pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_decisions(pa, a)
        save_decisions(pb, b)
        assert pa.read_bytes() == pb.read_bytes()

    def test_parallel_matches_serial(self, trained_setup, tmp_path):
        te = trained_setup["test"]
        args = (te, trained_setup["frame_model"], trained_setup["sim"], None, BASE)
        serial = run_corpus(*args, jobs=1)
        parallel = run_corpus(*args, jobs=2)
        pa, pb = tmp_path / "s.jsonl", tmp_path / "p.jsonl"
        save_decisions(pa, serial)
        save_decisions(pb, parallel)
        assert pa.read_bytes() == pb.read_bytes()

    def test_decisions_file_roundtrip(self, trained_setup, precomputed, tmp_path):
        decisions = _decide_all(trained_setup, precomputed, BASE)
        path = tmp_path / "d.jsonl"
        save_decisions(path, decisions)
        loaded = load_decisions(path)
        assert [d.to_record() for d in loaded] == [d.to_record() for d in decisions]


class TestTraceReplay:
    def test_trace_reproduces_decision(self, trained_setup):
        te = trained_setup["test"]
        for config in (BASE,
                       PipelineConfig(first_pass="both", use_arbitrator=True,
                                      t_ep=0.7, eos_scale=2.0, t_arb=0.5)):
            arb = trained_setup["arbitrator"] if config.use_arbitrator else None
            for utt in te.utterances[:40]:
                trace = []
                dec = run_utterance(utt, trained_setup["frame_model"],
                                    trained_setup["sim"], arb, config,
                                    te.vocab.n_speech, trace)
                assert replay_trace(trace) == (dec.ep_frame, dec.source)

    def test_trace_files_written(self, trained_setup, tmp_path):
        te = trained_setup["test"]
        run_corpus(te, trained_setup["frame_model"], trained_setup["sim"], None,
                   BASE, trace_dir=tmp_path / "traces")
        files = list((tmp_path / "traces").glob("*.trace"))
        assert len(files) == len(te)
