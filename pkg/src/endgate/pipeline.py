"""Frame-synchronous endpointing pipeline.

Per frame, in order: acoustic frame model posteriors, decoder emissions,
guardrail check (a guardrail fire finalizes immediately and is never
arbitrated), first-pass candidate detection per the enabled detectors, then
either arbitration (accept finalizes, reject logs the candidate and the
stream continues) or, without an arbitrator, immediate finalization.

Because the frame model is causal and the decoder draws from per-utterance
substreams, every per-frame quantity can be computed up front and the
decision loop replayed cheaply under different thresholds; sweeps exploit
this to share identical randomness across operating points.
"""

from __future__ import annotations

import hashlib
import json
from concurrent import futures
from dataclasses import dataclass, field

import numpy as np

from . import ConfigError, DependencyError, ParseError
from .arbitrator import ArbitratorModel, TextEmbeddingCache
from .corpus import Corpus, Utterance
from .features import FRAME_MS
from .firstpass import (GUARDRAIL_LIMIT_FRAMES, DecoderSchedule, DecoderSim,
                        FrameModel, GuardrailState, build_schedule,
                        guardrail_step)

FIRST_PASS_MODES = ("acoustic_only", "e2e_only", "both")


@dataclass
class PipelineConfig:
    first_pass: str = "both"
    use_arbitrator: bool = False
    t_ep: float = 0.5
    t_arb: float = 0.5
    eos_scale: float = 1.0
    guardrail_frames: int = GUARDRAIL_LIMIT_FRAMES

    def validate(self) -> None:
        if self.first_pass not in FIRST_PASS_MODES:
            raise ConfigError(
                f"first_pass must be one of {FIRST_PASS_MODES}, got {self.first_pass!r}"
            )
        if not 0.0 <= self.t_ep <= 1.0:
            raise ConfigError(f"t_ep must be in [0, 1], got {self.t_ep}")
        if not 0.0 <= self.t_arb <= 1.0:
            raise ConfigError(f"t_arb must be in [0, 1], got {self.t_arb}")
        if self.eos_scale < 0:
            raise ConfigError(f"eos_scale must be >= 0, got {self.eos_scale}")
        if self.guardrail_frames < 1:
            raise ConfigError("guardrail_frames must be >= 1")

    def fingerprint(self) -> str:
        blob = json.dumps(self.__dict__, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class EndpointDecision:
    """One utterance's endpointing outcome.

    `arbitrated` records whether second-pass gating visibly altered the
    outcome: it is True only when the final endpoint was an arbitrator accept
    that followed at least one rejected candidate.  An accept-all arbitrator
    therefore produces records identical to the baseline's, and guardrail
    decisions are never arbitrated.
    """

    utterance_id: str
    category: str
    ep_frame: int | None
    source: str | None            # acoustic | e2e | guardrail
    arbitrated: bool
    latency_ms: int | None        # (ep_frame - eos_frame) * 30, signed
    early: bool                   # ep_frame < eos_frame
    hypothesis: list              # token ids emitted up to ep_frame
    ref_tokens: list
    eos_frame: int
    audio_end_frame: int
    rejected: list = field(default_factory=list)  # (frame, source, p_arb)

    def to_record(self) -> dict:
        return {
            "id": self.utterance_id,
            "category": self.category,
            "ep_frame": self.ep_frame,
            "source": self.source,
            "arbitrated": self.arbitrated,
            "latency_ms": self.latency_ms,
            "early": self.early,
            "hypothesis": [int(t) for t in self.hypothesis],
            "ref_tokens": [int(t) for t in self.ref_tokens],
            "eos_frame": int(self.eos_frame),
            "audio_end_frame": int(self.audio_end_frame),
            "rejected": [[int(f), s, float(p)] for f, s, p in self.rejected],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "EndpointDecision":
        return cls(
            utterance_id=rec["id"],
            category=rec["category"],
            ep_frame=rec["ep_frame"],
            source=rec["source"],
            arbitrated=rec["arbitrated"],
            latency_ms=rec["latency_ms"],
            early=rec["early"],
            hypothesis=list(rec["hypothesis"]),
            ref_tokens=list(rec["ref_tokens"]),
            eos_frame=rec["eos_frame"],
            audio_end_frame=rec["audio_end_frame"],
            rejected=[(f, s, p) for f, s, p in rec["rejected"]],
        )


@dataclass
class Precomputed:
    """Threshold-independent per-utterance quantities."""

    ep: np.ndarray              # (T,) endpoint posterior
    vad: np.ndarray             # (T,) speech posterior
    hidden_cummax: np.ndarray   # (T, H) running max of the embedding stream
    schedule: DecoderSchedule


def precompute_utterance(utt: Utterance, frame_model: FrameModel,
                         sim: DecoderSim, n_speech_tokens: int) -> Precomputed:
    ep, vad, hidden = frame_model.forward_sequence(utt.features)
    return Precomputed(
        ep=ep,
        vad=vad,
        hidden_cummax=np.maximum.accumulate(hidden, axis=0),
        schedule=build_schedule(sim, utt, n_speech_tokens),
    )


def decide(utt: Utterance, pre: Precomputed, arbitrator: ArbitratorModel | None,
           config: PipelineConfig, trace: list | None = None) -> EndpointDecision:
    """Run the frame-synchronous decision loop over precomputed signals."""
    config.validate()
    if config.use_arbitrator and arbitrator is None:
        raise DependencyError("pipeline configured with use_arbitrator but no model")
    sched = pre.schedule
    guard = GuardrailState(limit_frames=config.guardrail_frames)
    cache = TextEmbeddingCache()
    use_acoustic = config.first_pass in ("acoustic_only", "both")
    use_e2e = config.first_pass in ("e2e_only", "both")

    rejected = []
    ep_frame = None
    source = None
    accepted_by_arbitrator = False
    n_emitted = 0
    emit_frames = sched.emit_frames

    for t in range(utt.n_frames):
        while n_emitted < len(emit_frames) and emit_frames[n_emitted] == t:
            if trace is not None:
                trace.append(f"{t}\ttoken\t{int(sched.emitted_ids[n_emitted])}")
            n_emitted += 1
        eos_now = sched.eos_event(t, config.eos_scale)
        if eos_now and trace is not None:
            trace.append(f"{t}\teos")

        if guardrail_step(guard, pre.vad[t]):
            ep_frame, source = t, "guardrail"
            if trace is not None:
                trace.append(f"{t}\tguardrail")
            break

        if use_e2e and eos_now:
            cand_source = "e2e"
        elif use_acoustic and pre.ep[t] > config.t_ep:
            cand_source = "acoustic"
        else:
            continue
        if trace is not None:
            trace.append(f"{t}\tcandidate\t{cand_source}")

        if config.use_arbitrator:
            tokens = sched.emitted_ids[:n_emitted]
            p_arb, accept = arbitrator.arbitrate(
                pre.hidden_cummax[t], tokens, cache, config.t_arb)
            if accept:
                ep_frame, source = t, cand_source
                accepted_by_arbitrator = True
                if trace is not None:
                    trace.append(f"{t}\taccept\t{cand_source}\t{p_arb!r}")
                break
            rejected.append((t, cand_source, p_arb))
            if trace is not None:
                trace.append(f"{t}\treject\t{cand_source}\t{p_arb!r}")
        else:
            ep_frame, source = t, cand_source
            break

    if ep_frame is None:
        n_emitted = sched.tokens_emitted_by(utt.audio_end_frame)
    hypothesis = [int(x) for x in sched.emitted_ids[:n_emitted]]
    latency = None if ep_frame is None else (ep_frame - utt.eos_frame) * FRAME_MS
    if trace is not None:
        trace.append(f"decision\t{ep_frame}\t{source}")
    return EndpointDecision(
        utterance_id=utt.id,
        category=utt.category,
        ep_frame=ep_frame,
        source=source,
        arbitrated=accepted_by_arbitrator and len(rejected) > 0,
        latency_ms=latency,
        early=ep_frame is not None and ep_frame < utt.eos_frame,
        hypothesis=hypothesis,
        ref_tokens=list(utt.token_ids),
        eos_frame=utt.eos_frame,
        audio_end_frame=utt.audio_end_frame,
        rejected=rejected,
    )


def run_utterance(utt: Utterance, frame_model: FrameModel, sim: DecoderSim,
                  arbitrator: ArbitratorModel | None, config: PipelineConfig,
                  n_speech_tokens: int, trace: list | None = None) -> EndpointDecision:
    pre = precompute_utterance(utt, frame_model, sim, n_speech_tokens)
    return decide(utt, pre, arbitrator, config, trace)


_WORKER = {}


def _init_worker(frame_model, sim, arbitrator, config, n_speech):
    _WORKER.update(frame_model=frame_model, sim=sim, arbitrator=arbitrator,
                   config=config, n_speech=n_speech)


def _run_one(utt):
    trace = []
    decision = run_utterance(utt, _WORKER["frame_model"], _WORKER["sim"],
                             _WORKER["arbitrator"], _WORKER["config"],
                             _WORKER["n_speech"], trace)
    return decision, trace


def run_corpus(corpus: Corpus, frame_model: FrameModel, sim: DecoderSim,
               arbitrator: ArbitratorModel | None, config: PipelineConfig,
               jobs: int = 1, trace_dir=None) -> list:
    """Decide every utterance; deterministic order regardless of worker count."""
    config.validate()
    if config.use_arbitrator and arbitrator is None:
        raise DependencyError("pipeline configured with use_arbitrator but no model")
    want_trace = trace_dir is not None
    n_speech = corpus.vocab.n_speech
    if jobs > 1:
        with futures.ProcessPoolExecutor(
                max_workers=jobs, initializer=_init_worker,
                initargs=(frame_model, sim, arbitrator, config, n_speech)) as pool:
            results = list(pool.map(_run_one, corpus.utterances, chunksize=16))
    else:
        results = []
        for utt in corpus.utterances:
            trace = [] if want_trace else None
            results.append(
                (run_utterance(utt, frame_model, sim, arbitrator, config,
                               n_speech, trace), trace))
    if want_trace:
        from pathlib import Path

        trace_dir = Path(trace_dir)
        trace_dir.mkdir(parents=True, exist_ok=True)
        for decision, trace in results:
            (trace_dir / f"{decision.utterance_id}.trace").write_text(
                "\n".join(trace or []) + "\n", encoding="utf-8")
    return [decision for decision, _ in results]


def replay_trace(lines) -> tuple:
    """Independent reconstruction of (ep_frame, source) from an event trace.

    Walks the logged events with the pipeline's precedence rules: a guardrail
    event finalizes, an accept finalizes at its candidate's source, and
    without arbitration events the first candidate finalizes.
    """
    events = [line.rstrip("\n").split("\t") for line in lines if line.strip()]
    arbitrated = any(p[1] in ("accept", "reject")
                     for p in events if p[0] != "decision" and len(p) > 1)
    for parts in events:
        if parts[0] == "decision":
            continue
        t, event = int(parts[0]), parts[1]
        if event == "guardrail":
            return t, "guardrail"
        if event == "accept":
            return t, parts[2]
        if event == "candidate" and not arbitrated:
            return t, parts[2]
    return None, None


def save_decisions(path, decisions) -> None:
    lines = [json.dumps(d.to_record(), sort_keys=True, separators=(",", ":"))
             for d in decisions]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_decisions(path) -> list:
    decisions = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                decisions.append(EndpointDecision.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ParseError(f"{path}: line {i + 1}: {exc}") from exc
    return decisions
