"""Second-pass endpoint arbitration.

A segment-level verifier gates first-pass candidate endpoints: an acoustic
encoder max-pools the frame model's per-frame embeddings over the whole
segment and passes the pooled vector through a dense stack; a text encoder
embeds the decoder's current one-best hypothesis, applies a per-token dense
stack and max-pools over tokens; the two embeddings are concatenated and a
fusion stack plus softmax yields the accept posterior.  Because the text
embedding depends only on the token sequence, it is cached and reused at
every frame where the hypothesis is unchanged.

The arbitrator can only accept or reject candidates; it never creates an
endpoint, and guardrail endpoints bypass it entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ConfigError, DependencyError
from .corpus import Corpus, TokenVocab
from .firstpass import DecoderSim, FrameModel, build_schedule
from .nnkit import (DenseLayer, EmbeddingTable, TrainConfig, load_checkpoint,
                    maxpool_time, save_checkpoint, sgd_step, softmax)

# Frames sampled around eos for training, plus extra early negatives.
TRAIN_WINDOW_FRAMES = 20
TRAIN_EARLY_SAMPLES = 20


@dataclass
class ArbitratorConfig:
    acoustic_dim: int = 32     # frame-model embedding dim consumed per frame
    acoustic_out: int = 16     # pooled-acoustics embedding size
    text_embed_dim: int = 16
    text_out: int = 16         # pooled-text embedding size
    fusion_hidden: int = 16
    seed: int = 0

    def validate(self) -> None:
        for name in ("acoustic_dim", "acoustic_out", "text_embed_dim",
                     "text_out", "fusion_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


class TextEmbeddingCache:
    """Maps a hypothesis token tuple to its pooled text embedding."""

    def __init__(self):
        self._store = {}
        self.hits = 0

    def __len__(self):
        return len(self._store)

    def get(self, key):
        value = self._store.get(key)
        if value is not None:
            self.hits += 1
        return value

    def put(self, key, value):
        self._store[key] = value


class ArbitratorModel:
    """Pooled acoustic + pooled text encoders fused into an accept posterior."""

    def __init__(self, config: ArbitratorConfig, vocab: TokenVocab):
        config.validate()
        self.config = config
        self.vocab = vocab
        rng = np.random.default_rng(config.seed)
        self.embeddings = EmbeddingTable.init(rng, vocab.n_embeddings,
                                              config.text_embed_dim)
        self.text_dense = DenseLayer.init(rng, config.text_embed_dim,
                                          config.text_out, "relu")
        self.acoustic_dense = DenseLayer.init(rng, config.acoustic_dim,
                                              config.acoustic_out, "relu")
        self.fusion_hidden = DenseLayer.init(
            rng, config.acoustic_out + config.text_out, config.fusion_hidden, "relu")
        self.fusion_out = DenseLayer.init(rng, config.fusion_hidden, 2, "identity")

    def _layers(self):
        return [self.text_dense, self.acoustic_dense, self.fusion_hidden,
                self.fusion_out]

    def parameters(self):
        params = [self.embeddings.table]
        for layer in self._layers():
            params.extend([layer.weights, layer.bias])
        return params

    def gradients(self):
        grads = [self.embeddings.grad_table]
        for layer in self._layers():
            grads.extend([layer.grad_weights, layer.grad_bias])
        return grads

    def zero_grads(self):
        self.embeddings.zero_grads()
        for layer in self._layers():
            layer.zero_grads()

    # -- encoders ---------------------------------------------------------

    def acoustic_encode(self, hidden_stream) -> np.ndarray:
        """Dense stack over the elementwise max of the embedding stream.

        Accepts either the full (t, H) stream or an already-pooled (H,)
        running max; the two are equivalent because max-pooling commutes
        with streaming.
        """
        arr = np.asarray(hidden_stream, dtype=np.float64)
        pooled = maxpool_time(arr) if arr.ndim == 2 else arr
        return self.acoustic_dense.forward(pooled)

    def _text_key(self, tokens):
        return tuple(int(t) for t in tokens)

    def _text_ids(self, tokens):
        # an empty hypothesis encodes the dedicated sentinel token
        return [self.vocab.sentinel_id] if len(tokens) == 0 else list(tokens)

    def text_encode(self, tokens, cache: TextEmbeddingCache | None = None) -> np.ndarray:
        key = self._text_key(tokens)
        if cache is not None:
            hit = cache.get(key)
            if hit is not None:
                return hit
        embedded = self.embeddings.lookup(self._text_ids(tokens))
        per_token = self.text_dense.forward(embedded)
        pooled = per_token.max(axis=0)
        if cache is not None:
            cache.put(key, pooled)
        return pooled

    def posterior(self, hidden_stream, tokens,
                  cache: TextEmbeddingCache | None = None) -> float:
        v = self.acoustic_encode(hidden_stream)
        e = self.text_encode(tokens, cache)
        logits = self.fusion_out.forward(self.fusion_hidden.forward(
            np.concatenate([v, e])))
        return float(softmax(logits)[1])

    def arbitrate(self, hidden_stream, tokens, cache, threshold: float):
        """Accept posterior and the strict threshold verdict."""
        if not 0.0 <= threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
        p = self.posterior(hidden_stream, tokens, cache)
        return p, p > threshold

    # -- training ----------------------------------------------------------

    def _backward_example(self, pooled_acoustic, tokens, label: int) -> float:
        """Accumulate gradients of one example's cross-entropy; returns loss."""
        ids = self._text_ids(tokens)
        embedded = self.embeddings.lookup(ids)
        per_token, text_cache = self.text_dense.forward_cached(embedded)
        argmax_rows = per_token.argmax(axis=0)
        e = per_token[argmax_rows, np.arange(per_token.shape[1])]
        v, ac_cache = self.acoustic_dense.forward_cached(pooled_acoustic)
        fused = np.concatenate([v, e])
        h, fh_cache = self.fusion_hidden.forward_cached(fused)
        logits, fo_cache = self.fusion_out.forward_cached(h)
        p = softmax(logits)
        loss = -float(np.log(max(p[label], 1e-12)))

        d_logits = p.copy()
        d_logits[label] -= 1.0
        dh = self.fusion_out.backward(d_logits, fo_cache)
        d_fused = self.fusion_hidden.backward(dh, fh_cache)
        dv = d_fused[: self.config.acoustic_out]
        de = d_fused[self.config.acoustic_out:]
        self.acoustic_dense.backward(dv, ac_cache)
        d_per_token = np.zeros_like(per_token)
        d_per_token[argmax_rows, np.arange(per_token.shape[1])] = de
        d_embedded = self.text_dense.backward(d_per_token, text_cache)
        self.embeddings.accumulate(ids, d_embedded)
        return loss

    def loss_and_grads(self, inputs, label: int):
        """Pure loss + gradient list for (pooled_acoustics, tokens)."""
        pooled, tokens = inputs
        self.zero_grads()
        loss = self._backward_example(np.asarray(pooled, dtype=np.float64),
                                      tokens, label)
        grads = [g.copy() for g in self.gradients()]
        self.zero_grads()
        return loss, grads

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "acoustic_dim": self.config.acoustic_dim,
            "acoustic_out": self.config.acoustic_out,
            "text_embed_dim": self.config.text_embed_dim,
            "text_out": self.config.text_out,
            "fusion_hidden": self.config.fusion_hidden,
            "seed": self.config.seed,
            "vocab": {"n_content": self.vocab.n_content,
                      "n_terminal": self.vocab.n_terminal,
                      "n_filler": self.vocab.n_filler},
        }
        named = [("embeddings.table", self.embeddings.table)]
        for i, layer in enumerate(self._layers()):
            named.append((f"layer{i}.weights", layer.weights))
            named.append((f"layer{i}.bias", layer.bias))
        save_checkpoint(path, "arbitrator", meta, named)

    @classmethod
    def load(cls, path) -> "ArbitratorModel":
        kind, meta, params = load_checkpoint(path)
        if kind != "arbitrator":
            raise DependencyError(f"{path}: checkpoint kind {kind!r}, expected arbitrator")
        vocab = TokenVocab(**meta["vocab"])
        config = ArbitratorConfig(
            acoustic_dim=meta["acoustic_dim"],
            acoustic_out=meta["acoustic_out"],
            text_embed_dim=meta["text_embed_dim"],
            text_out=meta["text_out"],
            fusion_hidden=meta["fusion_hidden"],
            seed=meta["seed"],
        )
        model = cls(config, vocab)
        model.embeddings.table[...] = params["embeddings.table"]
        for i, layer in enumerate(model._layers()):
            layer.weights[...] = params[f"layer{i}.weights"]
            layer.bias[...] = params[f"layer{i}.bias"]
        return model


def _training_frames(rng, utt, first_emit: int):
    """Frame indices sampled for one utterance: a window around eos plus
    uniformly sampled earlier frames for class balance."""
    lo = max(0, utt.eos_frame - TRAIN_WINDOW_FRAMES)
    hi = min(utt.audio_end_frame, utt.eos_frame + TRAIN_WINDOW_FRAMES)
    frames = list(range(lo, hi + 1))
    early_lo = max(0, first_emit)
    early_hi = lo - 1
    if early_hi >= early_lo:
        pool = np.arange(early_lo, early_hi + 1)
        take = min(TRAIN_EARLY_SAMPLES, pool.size)
        frames.extend(int(f) for f in rng.choice(pool, size=take, replace=False))
    return frames


def train_arbitrator(train_corpus: Corpus, frame_model: FrameModel,
                     sim: DecoderSim, train_config: TrainConfig,
                     model_config: ArbitratorConfig | None = None) -> ArbitratorModel:
    """Per-frame cross-entropy on (pooled acoustics, partial hypothesis) pairs.

    Each training frame t pairs the running max of the frame model's
    embedding stream up to t with the hypothesis emitted by the simulated
    decoder up to t; the label is whether t is at or past the true end of
    speech.
    """
    train_config.validate()
    if frame_model is None:
        raise DependencyError("train_arbitrator requires a trained frame model")
    if len(train_corpus) == 0:
        raise DependencyError("cannot train arbitrator on an empty corpus")
    if model_config is None:
        model_config = ArbitratorConfig(acoustic_dim=frame_model.hidden_dim,
                                        seed=train_config.seed)
    if model_config.acoustic_dim != frame_model.hidden_dim:
        raise ConfigError(
            f"arbitrator acoustic_dim {model_config.acoustic_dim} != "
            f"frame model embedding dim {frame_model.hidden_dim}"
        )
    model = ArbitratorModel(model_config, train_corpus.vocab)
    rng = np.random.default_rng(train_config.seed)

    examples = []  # (utt_idx, frame, label)
    pooled_streams = []
    schedules = []
    for ui, utt in enumerate(train_corpus.utterances):
        _, _, hidden = frame_model.forward_sequence(utt.features)
        pooled_streams.append(np.maximum.accumulate(hidden, axis=0))
        sched = build_schedule(sim, utt, train_corpus.vocab.n_speech)
        schedules.append(sched)
        first_emit = int(sched.emit_frames[0])
        for t in _training_frames(rng, utt, first_emit):
            examples.append((ui, t, int(t >= utt.eos_frame)))

    params = model.parameters()
    grads = model.gradients()
    for _ in range(train_config.epochs):
        order = rng.permutation(len(examples))
        for start in range(0, len(order), train_config.batch_size):
            batch = [examples[i] for i in order[start:start + train_config.batch_size]]
            model.zero_grads()
            for ui, t, label in batch:
                sched = schedules[ui]
                tokens = sched.emitted_ids[: sched.tokens_emitted_by(t)]
                model._backward_example(pooled_streams[ui][t], tokens, label)
            for g in grads:
                g /= len(batch)
            sgd_step(params, grads, train_config)
    return model


def candidate_accuracy(model: ArbitratorModel, corpus: Corpus,
                       frame_model: FrameModel, sim: DecoderSim) -> float:
    """Held-out classification accuracy on the training frame distribution."""
    rng = np.random.default_rng(0)
    correct = total = 0
    for utt in corpus.utterances:
        _, _, hidden = frame_model.forward_sequence(utt.features)
        pooled = np.maximum.accumulate(hidden, axis=0)
        sched = build_schedule(sim, utt, corpus.vocab.n_speech)
        cache = TextEmbeddingCache()
        for t in _training_frames(rng, utt, int(sched.emit_frames[0])):
            tokens = sched.emitted_ids[: sched.tokens_emitted_by(t)]
            p = model.posterior(pooled[t], tokens, cache)
            correct += int((p > 0.5) == (t >= utt.eos_frame))
            total += 1
    return correct / total
