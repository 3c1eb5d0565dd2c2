"""First-pass endpointing: acoustic frame model, simulated E2E decoder, guardrail.

The frame model is a causal windowed feed-forward net with a shared trunk and
two binary softmax heads (endpoint posterior and VAD speech posterior); its
final trunk activation doubles as the per-frame acoustic embedding consumed
by the arbitrator.  The decoder simulator replays an utterance's ground-truth
transcript with seeded emission delays, substitution errors and probabilistic
EOS-symbol emission; all draws come from per-utterance substreams so replays
are bit-identical and the token stream is invariant to EOS-probability
scaling.  The guardrail counts consecutive non-speech frames and forces an
endpoint that is never arbitrated.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import ConfigError, DependencyError, ProtocolError
from .corpus import Corpus, Utterance
from .features import LOG_FLOOR
from .nnkit import (DenseLayer, TrainConfig, load_checkpoint, save_checkpoint,
                    sgd_step, softmax)

GUARDRAIL_LIMIT_FRAMES = 58  # 1740 ms of pause at 30 ms frames
VAD_SPEECH_THRESHOLD = 0.5


@dataclass
class FrameModelConfig:
    # The causal window must exceed the longest within-utterance pause
    # (900 ms = 30 frames) or the detector cannot trade pause tolerance for
    # latency at any threshold; 36 frames = 1080 ms.
    window: int = 36
    hidden_dims: tuple = (64, 32)        # last entry is the embedding dim H
    feature_dim: int = 192
    seed: int = 0

    def validate(self) -> None:
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not self.hidden_dims:
            raise ConfigError("hidden_dims must be non-empty")
        if any(d < 1 for d in self.hidden_dims):
            raise ConfigError("hidden dims must be >= 1")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")


class FrameModel:
    """Multi-task acoustic model: P(endpoint | window) and P(speech | window).

    Inference is causal: the posterior at frame t depends only on the most
    recent `window` frames, left-padded with the digital-silence floor frame
    (all bins at ln(1e-10)).  Inputs are standardized per feature dimension
    with statistics frozen at training time and clipped to +-5 standard
    deviations, which keeps the floor padding distinctive but bounded.
    """

    NORM_CLIP = 5.0

    def __init__(self, config: FrameModelConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        dims = [config.window * config.feature_dim, *config.hidden_dims]
        self.trunk = [DenseLayer.init(rng, dims[i], dims[i + 1], "relu")
                      for i in range(len(dims) - 1)]
        self.ep_head = DenseLayer.init(rng, dims[-1], 2, "identity")
        self.vad_head = DenseLayer.init(rng, dims[-1], 2, "identity")
        self.pad_frame = np.full(config.feature_dim, LOG_FLOOR)
        self.norm_mean = np.zeros(config.feature_dim)
        self.norm_std = np.ones(config.feature_dim)

    def set_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.norm_mean = np.asarray(mean, dtype=np.float64)
        self.norm_std = np.maximum(np.asarray(std, dtype=np.float64), 1e-6)

    def normalize(self, frames: np.ndarray) -> np.ndarray:
        z = (frames - self.norm_mean) / self.norm_std
        return np.clip(z, -self.NORM_CLIP, self.NORM_CLIP)

    @property
    def hidden_dim(self) -> int:
        return self.config.hidden_dims[-1]

    def _layers(self):
        return [*self.trunk, self.ep_head, self.vad_head]

    def parameters(self):
        params = []
        for layer in self._layers():
            params.extend([layer.weights, layer.bias])
        return params

    def gradients(self):
        grads = []
        for layer in self._layers():
            grads.extend([layer.grad_weights, layer.grad_bias])
        return grads

    def zero_grads(self):
        for layer in self._layers():
            layer.zero_grads()

    def padded_frames(self, frames: np.ndarray) -> np.ndarray:
        """Normalized frames with window-1 floor-pad rows prepended."""
        frames = np.asarray(frames, dtype=np.float64)
        k = self.config.window
        padded = np.concatenate([np.tile(self.pad_frame, (k - 1, 1)), frames])
        return self.normalize(padded)

    def windows(self, frames: np.ndarray) -> np.ndarray:
        """All causal windows of an utterance, shape (T, window * dim)."""
        padded = self.padded_frames(frames)
        t = np.asarray(frames).shape[0]
        k = self.config.window
        dim = self.config.feature_dim
        out = np.empty((t, k * dim))
        for j in range(k):
            out[:, j * dim:(j + 1) * dim] = padded[j:j + t]
        return out

    def forward_windows(self, w: np.ndarray):
        """Posteriors and embeddings for a batch of windows."""
        h = w
        for layer in self.trunk:
            h = layer.forward(h)
        ep = softmax(self.ep_head.forward(h))[..., 1]
        vad = softmax(self.vad_head.forward(h))[..., 1]
        return ep, vad, h

    def forward_sequence(self, frames: np.ndarray):
        """Per-frame (ep, vad, hidden) arrays for a whole utterance."""
        return self.forward_windows(self.windows(frames))

    def frame_step(self, frames_so_far: np.ndarray):
        """Causal single-frame evaluation at the latest frame."""
        frames = np.asarray(frames_so_far, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ConfigError("frame_step needs at least one frame")
        k = self.config.window
        recent = frames[-k:]
        if recent.shape[0] < k:
            pad = np.tile(self.pad_frame, (k - recent.shape[0], 1))
            recent = np.concatenate([pad, recent])
        ep, vad, h = self.forward_windows(self.normalize(recent).reshape(1, -1))
        return float(ep[0]), float(vad[0]), h[0]

    def _forward_cached(self, w: np.ndarray):
        h = w
        caches = []
        for layer in self.trunk:
            h, cache = layer.forward_cached(h)
            caches.append(cache)
        ep_logits, ep_cache = self.ep_head.forward_cached(h)
        vad_logits, vad_cache = self.vad_head.forward_cached(h)
        return softmax(ep_logits), softmax(vad_logits), caches, ep_cache, vad_cache

    def _backward_batch(self, w, ep_labels, vad_labels):
        """Accumulate gradients of the mean joint loss over a batch."""
        ep_p, vad_p, caches, ep_cache, vad_cache = self._forward_cached(w)
        n = w.shape[0]
        rows = np.arange(n)
        loss = float(
            -(np.log(np.maximum(ep_p[rows, ep_labels], 1e-12)).mean()
              + np.log(np.maximum(vad_p[rows, vad_labels], 1e-12)).mean()) / 2.0
        )
        d_ep = ep_p.copy()
        d_ep[rows, ep_labels] -= 1.0
        d_vad = vad_p.copy()
        d_vad[rows, vad_labels] -= 1.0
        scale = 1.0 / (2.0 * n)
        dh = self.ep_head.backward(d_ep * scale, ep_cache)
        dh += self.vad_head.backward(d_vad * scale, vad_cache)
        for layer, cache in zip(reversed(self.trunk), reversed(caches)):
            dh = layer.backward(dh, cache)
        return loss

    def loss_and_grads(self, window_vec, labels):
        """Pure joint loss + gradient list for one window; used by grad_check."""
        ep_label, vad_label = labels
        self.zero_grads()
        w = np.asarray(window_vec, dtype=np.float64).reshape(1, -1)
        loss = self._backward_batch(w, np.array([ep_label]), np.array([vad_label]))
        grads = [g.copy() for g in self.gradients()]
        self.zero_grads()
        return loss, grads

    def save(self, path) -> None:
        meta = {
            "window": self.config.window,
            "hidden_dims": list(self.config.hidden_dims),
            "feature_dim": self.config.feature_dim,
            "seed": self.config.seed,
        }
        named = [("norm.mean", self.norm_mean), ("norm.std", self.norm_std)]
        for i, layer in enumerate(self._layers()):
            name = f"layer{i}"
            named.append((f"{name}.weights", layer.weights))
            named.append((f"{name}.bias", layer.bias))
        save_checkpoint(path, "frame_model", meta, named)

    @classmethod
    def load(cls, path) -> "FrameModel":
        kind, meta, params = load_checkpoint(path)
        if kind != "frame_model":
            raise DependencyError(f"{path}: checkpoint kind {kind!r}, expected frame_model")
        config = FrameModelConfig(
            window=meta["window"],
            hidden_dims=tuple(meta["hidden_dims"]),
            feature_dim=meta["feature_dim"],
            seed=meta["seed"],
        )
        model = cls(config)
        model.set_normalization(params["norm.mean"], params["norm.std"])
        for i, layer in enumerate(model._layers()):
            layer.weights[...] = params[f"layer{i}.weights"]
            layer.bias[...] = params[f"layer{i}.bias"]
        return model


# Frames deeper than this into the trailing silence are subsampled during
# frame-model training; they are all alike and would otherwise dominate the
# per-frame loss.
TAIL_SUBSAMPLE_AFTER = 24
TAIL_KEEP_PROB = 0.35


def train_frame_model(train_corpus: Corpus, train_config: TrainConfig,
                      model_config: FrameModelConfig | None = None) -> FrameModel:
    """SGD on per-frame joint cross-entropy (endpoint head + VAD head).

    Endpoint labels are positive from eos_frame onward; VAD labels come from
    the generation-time speech mask.  Deep trailing-silence frames are
    subsampled (seed-deterministically) to keep the label mix informative.
    """
    train_config.validate()
    if len(train_corpus) == 0:
        raise DependencyError("cannot train frame model on an empty corpus")
    if model_config is None:
        dim = train_corpus.utterances[0].features.shape[1]
        model_config = FrameModelConfig(feature_dim=dim, seed=train_config.seed)
    model = FrameModel(model_config)
    k = model_config.window
    rng = np.random.default_rng(train_config.seed)

    all_frames = np.concatenate([u.features for u in train_corpus.utterances])
    model.set_normalization(all_frames.mean(axis=0), all_frames.std(axis=0))
    del all_frames

    padded = []
    ep_labels, vad_labels = [], []
    index = []
    for ui, utt in enumerate(train_corpus.utterances):
        t = utt.n_frames
        padded.append(model.padded_frames(utt.features))
        ep_labels.append((np.arange(t) >= utt.eos_frame).astype(np.int64))
        vad_labels.append(utt.speech_mask.astype(np.int64))
        deep = utt.eos_frame + TAIL_SUBSAMPLE_AFTER
        for fi in range(t):
            if fi >= deep and rng.random() >= TAIL_KEEP_PROB:
                continue
            index.append((ui, fi))
    index = np.asarray(index, dtype=np.int64)

    params = model.parameters()
    for _ in range(train_config.epochs):
        order = rng.permutation(len(index))
        for start in range(0, len(order), train_config.batch_size):
            batch = index[order[start:start + train_config.batch_size]]
            w = np.stack([padded[ui][fi:fi + k].reshape(-1) for ui, fi in batch])
            ep_y = np.array([ep_labels[ui][fi] for ui, fi in batch])
            vad_y = np.array([vad_labels[ui][fi] for ui, fi in batch])
            model.zero_grads()
            model._backward_batch(w, ep_y, vad_y)
            sgd_step(params, model.gradients(), train_config)
    return model


def frame_accuracy(model: FrameModel, corpus: Corpus):
    """(endpoint, vad) frame classification accuracy at the 0.5 boundary."""
    correct_ep = correct_vad = total = 0
    for utt in corpus.utterances:
        ep, vad, _ = model.forward_sequence(utt.features)
        ep_y = np.arange(utt.n_frames) >= utt.eos_frame
        correct_ep += int(((ep > 0.5) == ep_y).sum())
        correct_vad += int(((vad > VAD_SPEECH_THRESHOLD) == utt.speech_mask).sum())
        total += utt.n_frames
    return correct_ep / total, correct_vad / total


def acoustic_candidate(ep_posterior: float, threshold: float) -> bool:
    """Strict threshold gate on the endpoint posterior."""
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
    return ep_posterior > threshold


# -- simulated streaming E2E decoder ------------------------------------------


@dataclass
class DecoderSim:
    """Knobs of the simulated streaming recognizer.

    eos_prob is the per-frame EOS emission probability in trailing silence
    once every true token is out; false_eos_prob applies per frame inside a
    mid-utterance pause that has lasted more than pause_trigger_frames.  Both
    are multiplied by eos_scale and saturate at 1.
    """

    seed: int = 0
    p_delay: float = 0.5           # geometric token emission delay, mean 1/p
    sub_rate: float = 0.03         # per-token substitution probability
    eos_prob: float = 0.12
    false_eos_prob: float = 0.04
    pause_trigger_frames: int = 8
    eos_scale: float = 1.0

    def validate(self) -> None:
        if not 0 < self.p_delay <= 1:
            raise ConfigError("p_delay must be in (0, 1]")
        for name in ("sub_rate", "eos_prob", "false_eos_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.eos_scale < 0:
            raise ConfigError("eos_scale must be >= 0")
        if self.pause_trigger_frames < 0:
            raise ConfigError("pause_trigger_frames must be >= 0")

    def with_scale(self, eos_scale: float) -> "DecoderSim":
        return replace(self, eos_scale=eos_scale)


def _utterance_key(utt_id: str) -> int:
    digest = hashlib.sha256(utt_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class DecoderSchedule:
    """Precomputed per-utterance emission randomness.

    Token draws (delays, substitutions) and the per-frame EOS uniforms live
    in independent substreams keyed by (sim seed, utterance id), so changing
    eos_scale or any threshold leaves the token stream untouched and replays
    are bit-identical.
    """

    emit_frames: np.ndarray      # emission frame per true token, nondecreasing
    emitted_ids: np.ndarray      # token ids as emitted (after substitution)
    eos_uniforms: np.ndarray     # one uniform draw per frame
    eligible_true: np.ndarray    # (T,) trailing-silence EOS eligibility
    eligible_false: np.ndarray   # (T,) deep mid-pause false-EOS eligibility
    eos_prob: float
    false_eos_prob: float

    def eos_event(self, t: int, eos_scale: float) -> bool:
        if self.eligible_true[t]:
            return bool(self.eos_uniforms[t] < min(1.0, self.eos_prob * eos_scale))
        if self.eligible_false[t]:
            return bool(self.eos_uniforms[t] < min(1.0, self.false_eos_prob * eos_scale))
        return False

    def tokens_emitted_by(self, t: int) -> int:
        return int(np.searchsorted(self.emit_frames, t, side="right"))


def build_schedule(sim: DecoderSim, utt: Utterance, n_speech_tokens: int) -> DecoderSchedule:
    sim.validate()
    key = _utterance_key(utt.id)
    token_rng = np.random.default_rng([sim.seed & 0x7FFFFFFF, key, 1])
    eos_rng = np.random.default_rng([sim.seed & 0x7FFFFFFF, key, 2])

    ends = np.asarray(utt.token_ends, dtype=np.int64)
    n = len(ends)
    delays = token_rng.geometric(sim.p_delay, size=n)
    emit = np.maximum.accumulate(ends + delays)
    sub_draws = token_rng.random(n) < sim.sub_rate
    wrong = token_rng.integers(0, max(n_speech_tokens - 1, 1), size=n)
    ids = np.asarray(utt.token_ids, dtype=np.int64).copy()
    for i in range(n):
        if sub_draws[i] and n_speech_tokens > 1:
            ids[i] = wrong[i] if wrong[i] < utt.token_ids[i] else wrong[i] + 1

    t_total = utt.n_frames
    frames = np.arange(t_total)
    eos_uniforms = eos_rng.random(t_total)
    eligible_true = (frames >= utt.eos_frame) & (frames >= emit[-1])

    eligible_false = np.zeros(t_total, dtype=bool)
    in_run = 0
    for t in range(min(utt.eos_frame, t_total)):
        if utt.speech_mask[t]:
            in_run = 0
        else:
            in_run += 1
            if in_run > sim.pause_trigger_frames and t >= emit[0]:
                # only pauses inside speech count; leading silence has no
                # emitted token yet so the t >= emit[0] guard excludes it
                eligible_false[t] = True
    return DecoderSchedule(
        emit_frames=emit,
        emitted_ids=ids,
        eos_uniforms=eos_uniforms,
        eligible_true=eligible_true,
        eligible_false=eligible_false,
        eos_prob=sim.eos_prob,
        false_eos_prob=sim.false_eos_prob,
    )


@dataclass
class DecoderState:
    """Streaming cursor over a DecoderSchedule."""

    schedule: DecoderSchedule
    eos_scale: float
    next_frame: int = 0
    n_emitted: int = 0
    tokens: list = field(default_factory=list)
    events: list = field(default_factory=list)
    eos_emitted: bool = False
    eos_first_frame: int | None = None


def new_decoder_state(sim: DecoderSim, utt: Utterance, n_speech_tokens: int) -> DecoderState:
    return DecoderState(schedule=build_schedule(sim, utt, n_speech_tokens),
                        eos_scale=sim.eos_scale)


def decoder_step(state: DecoderState, t: int) -> list:
    """Advance the decoder by exactly one frame; returns emitted events.

    Events are ("token", id) and ("eos",).  Frames must be visited in order;
    skipping or repeating a frame raises ProtocolError.
    """
    if t != state.next_frame:
        raise ProtocolError(
            f"decoder_step expected frame {state.next_frame}, got {t}"
        )
    state.next_frame += 1
    events = []
    sched = state.schedule
    while (state.n_emitted < len(sched.emit_frames)
           and sched.emit_frames[state.n_emitted] == t):
        token = int(sched.emitted_ids[state.n_emitted])
        state.tokens.append(token)
        state.n_emitted += 1
        events.append(("token", token))
    if t < len(sched.eos_uniforms) and sched.eos_event(t, state.eos_scale):
        events.append(("eos",))
        if not state.eos_emitted:
            state.eos_emitted = True
            state.eos_first_frame = t
    state.events.append((t, events))
    return events


# -- VAD pause-duration guardrail ----------------------------------------------


@dataclass
class GuardrailState:
    """Counts consecutive non-speech frames; resets on any speech frame."""

    limit_frames: int = GUARDRAIL_LIMIT_FRAMES
    count: int = 0


def guardrail_step(state: GuardrailState, vad_posterior: float) -> bool:
    """Returns True on the frame where the counter reaches the limit."""
    if vad_posterior < VAD_SPEECH_THRESHOLD:
        state.count += 1
    else:
        state.count = 0
    return state.count >= state.limit_frames
