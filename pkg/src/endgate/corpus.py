"""Synthetic endpointing corpus with exact end-of-speech ground truth.

Each utterance is a sequence of 192-dim feature frames at the 30 ms decision
rate, a token transcript with per-token end-frame alignments, an exact
eos_frame (first frame after user speech) and a category:

  complete    content tokens + terminal token + >= 2 s trailing silence
  hesitation  one injected mid-utterance pause (300-900 ms by default)
              before the final tokens, then terminal token + long tail
  incomplete  transcript ends on a non-terminal token and the audio is cut
              off at most 300 ms after the end of speech

Speech and silence frames are class-conditional Gaussians in feature space
with configurable separation; micro-gaps of a few frames between tokens make
the acoustic endpoint.  Ground truth comes free from generation, so no
aligner exists anywhere in this package.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ConfigError, ParseError

CORPUS_MAGIC = "ENDGATE-CORPUS v1"
CATEGORIES = ("complete", "hesitation", "incomplete")

# Frames are 30 ms; these mirror the generation contracts above.
MIN_COMPLETE_TAIL_FRAMES = 67      # >= 2 s of trailing silence
MAX_INCOMPLETE_TAIL_FRAMES = 10    # <= 300 ms of audio after eos


@dataclass(frozen=True)
class TokenVocab:
    """Speech-token id space plus reserved non-speech ids.

    Ids are laid out contiguously: content, then terminal, then filler.  The
    EOS symbol and the empty-hypothesis sentinel get their own ids above all
    speech tokens.
    """

    n_content: int = 8
    n_terminal: int = 2
    n_filler: int = 2

    def __post_init__(self):
        if self.n_content < 1 or self.n_terminal < 1:
            raise ConfigError("vocab needs at least one content and one terminal token")
        if self.n_filler < 0:
            raise ConfigError("n_filler must be >= 0")

    @property
    def n_speech(self) -> int:
        return self.n_content + self.n_terminal + self.n_filler

    @property
    def eos_id(self) -> int:
        return self.n_speech

    @property
    def sentinel_id(self) -> int:
        return self.n_speech + 1

    @property
    def n_embeddings(self) -> int:
        """Rows an embedding table over this vocabulary needs."""
        return self.n_speech + 2

    def content_ids(self):
        return range(0, self.n_content)

    def terminal_ids(self):
        return range(self.n_content, self.n_content + self.n_terminal)

    def filler_ids(self):
        return range(self.n_content + self.n_terminal, self.n_speech)

    def token_class(self, token_id: int) -> str:
        if 0 <= token_id < self.n_content:
            return "content"
        if token_id < self.n_content + self.n_terminal:
            return "terminal"
        if token_id < self.n_speech:
            return "filler"
        raise ConfigError(f"id {token_id} is not a speech token")

    def is_terminal(self, token_id: int) -> bool:
        return self.n_content <= token_id < self.n_content + self.n_terminal


@dataclass
class GenConfig:
    """Generator knobs; all durations are in 30 ms frames."""

    seed: int = 0
    n_complete: int = 400
    n_hesitation: int = 300
    n_incomplete: int = 300
    feature_dim: int = 192
    tokens_min: int = 3
    tokens_max: int = 8
    token_frames_min: int = 2
    token_frames_max: int = 6
    # Micro-gap between consecutive tokens: P(length >= s) = gap_continue ** s,
    # truncated at gap_max so it can never look like a hesitation pause.
    gap_continue: float = 0.75
    gap_max: int = 9
    pause_min: int = 10            # injected hesitation pause, 300 ms
    pause_max: int = 30            # 900 ms
    # P(pause length >= pause_min + d) decays as pause_decay ** d, truncated
    # at pause_max; geometric tails keep the pause-duration mass smooth so
    # threshold sweeps trace a continuous latency curve.
    pause_decay: float = 0.87
    post_pause_tokens_min: int = 2
    post_pause_tokens_max: int = 4
    # Probability that a hesitation carries a filler token right before its
    # pause; fillers are the text-visible hesitation marker the second pass
    # learns to read.
    filler_prob: float = 0.9
    lead_min: int = 2
    lead_max: int = 6
    trail_min: int = 67            # >= 2 s terminal silence
    trail_max: int = 100
    incomplete_tail_max: int = 10  # <= 300 ms after eos
    speech_level: float = 1.0
    silence_level: float = -1.0
    noise_scale: float = 0.35
    # Acoustic separation between token classes.  Zero by default: the
    # standalone acoustic detector must not be able to read sentence-finality
    # out of the signal, otherwise the semantic gap the second pass exploits
    # would not exist.  Token classes stay fully visible on the text side.
    class_sep: float = 0.0
    n_content_tokens: int = 8
    n_terminal_tokens: int = 2
    n_filler_tokens: int = 2

    def validate(self) -> None:
        for name in ("n_complete", "n_hesitation", "n_incomplete"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.tokens_min < 1 or self.tokens_min > self.tokens_max:
            raise ConfigError("require 1 <= tokens_min <= tokens_max")
        if self.token_frames_min < 1 or self.token_frames_min > self.token_frames_max:
            raise ConfigError("require 1 <= token_frames_min <= token_frames_max")
        if not 0 <= self.gap_continue < 1:
            raise ConfigError("gap_continue must be in [0, 1)")
        if self.gap_max < 0 or self.gap_max >= self.pause_min:
            raise ConfigError("require 0 <= gap_max < pause_min")
        if self.pause_min < 1 or self.pause_min > self.pause_max:
            raise ConfigError("require 1 <= pause_min <= pause_max")
        if not 0 <= self.pause_decay < 1:
            raise ConfigError("pause_decay must be in [0, 1)")
        if not 1 <= self.post_pause_tokens_min <= self.post_pause_tokens_max:
            raise ConfigError("require 1 <= post_pause_tokens_min <= post_pause_tokens_max")
        if not 0 <= self.filler_prob <= 1:
            raise ConfigError("filler_prob must be in [0, 1]")
        if self.lead_min < 0 or self.lead_min > self.lead_max:
            raise ConfigError("require 0 <= lead_min <= lead_max")
        if self.trail_min < MIN_COMPLETE_TAIL_FRAMES:
            raise ConfigError(
                f"trail_min must be >= {MIN_COMPLETE_TAIL_FRAMES} frames (2 s contract)"
            )
        if self.trail_min > self.trail_max:
            raise ConfigError("require trail_min <= trail_max")
        if not 1 <= self.incomplete_tail_max <= MAX_INCOMPLETE_TAIL_FRAMES:
            raise ConfigError(
                f"incomplete_tail_max must be in [1, {MAX_INCOMPLETE_TAIL_FRAMES}]"
            )
        if self.noise_scale <= 0:
            raise ConfigError("noise_scale must be > 0")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")

    def vocab(self) -> TokenVocab:
        return TokenVocab(self.n_content_tokens, self.n_terminal_tokens,
                          self.n_filler_tokens)


@dataclass
class Utterance:
    id: str
    features: np.ndarray          # (T, dim) float64
    token_ids: list
    token_ends: list              # last speech frame of each token
    eos_frame: int                # first frame after user speech
    audio_end_frame: int          # last frame index, T - 1
    category: str
    speech_mask: np.ndarray       # (T,) bool, True on token frames

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    def equals(self, other: "Utterance") -> bool:
        return (
            self.id == other.id
            and self.category == other.category
            and self.token_ids == other.token_ids
            and self.token_ends == other.token_ends
            and self.eos_frame == other.eos_frame
            and self.audio_end_frame == other.audio_end_frame
            and np.array_equal(self.speech_mask, other.speech_mask)
            and np.array_equal(self.features, other.features)
        )


@dataclass
class Corpus:
    vocab: TokenVocab
    utterances: list
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.utterances)

    def by_category(self, category: str) -> list:
        return [u for u in self.utterances if u.category == category]

    def equals(self, other: "Corpus") -> bool:
        return (
            self.vocab == other.vocab
            and len(self) == len(other)
            and all(a.equals(b) for a, b in zip(self.utterances, other.utterances))
        )


def validate_utterance(utt: Utterance, vocab: TokenVocab) -> None:
    """Enforce the structural invariants every utterance must satisfy."""
    uid = utt.id
    t = utt.n_frames
    if utt.features.ndim != 2:
        raise ConfigError(f"{uid}: features must be 2-D")
    if not np.all(np.isfinite(utt.features)):
        raise ConfigError(f"{uid}: non-finite feature values")
    if utt.speech_mask.shape != (t,):
        raise ConfigError(f"{uid}: speech mask length != frame count")
    if utt.audio_end_frame != t - 1:
        raise ConfigError(f"{uid}: audio_end_frame != last frame index")
    if not 0 < utt.eos_frame <= utt.audio_end_frame:
        raise ConfigError(f"{uid}: eos_frame {utt.eos_frame} outside audio")
    if not utt.token_ids:
        raise ConfigError(f"{uid}: empty transcript")
    if len(utt.token_ids) != len(utt.token_ends):
        raise ConfigError(f"{uid}: token/alignment count mismatch")
    ends = utt.token_ends
    if any(b <= a for a, b in zip(ends, ends[1:])):
        raise ConfigError(f"{uid}: token end frames not strictly increasing")
    if ends[-1] >= utt.eos_frame:
        raise ConfigError(f"{uid}: token ends must precede eos_frame")
    for tok in utt.token_ids:
        vocab.token_class(tok)
    if utt.speech_mask[utt.eos_frame:].any():
        raise ConfigError(f"{uid}: speech after eos_frame")
    if utt.category not in CATEGORIES:
        raise ConfigError(f"{uid}: unknown category {utt.category!r}")
    last_terminal = vocab.is_terminal(utt.token_ids[-1])
    if utt.category == "incomplete":
        if last_terminal:
            raise ConfigError(f"{uid}: incomplete utterance ends on a terminal token")
        if utt.audio_end_frame - utt.eos_frame > MAX_INCOMPLETE_TAIL_FRAMES:
            raise ConfigError(f"{uid}: incomplete tail too long")
    else:
        if not last_terminal:
            raise ConfigError(f"{uid}: {utt.category} utterance lacks terminal token")


def _sample_gap(rng: np.random.Generator, config: GenConfig) -> int:
    g = 0
    while g < config.gap_max and rng.random() < config.gap_continue:
        g += 1
    return g


def _sample_pause(rng: np.random.Generator, config: GenConfig) -> int:
    p = config.pause_min
    while p < config.pause_max and rng.random() < config.pause_decay:
        p += 1
    return p


def _build_segments(rng, config: GenConfig, vocab: TokenVocab, category: str):
    """Return a list of (kind, length, token_id) segments for one utterance."""
    segs = [("silence", int(rng.integers(config.lead_min, config.lead_max + 1)), None)]

    def add_token(token_id):
        length = int(rng.integers(config.token_frames_min, config.token_frames_max + 1))
        segs.append(("token", length, token_id))

    def add_content_run(count):
        for i in range(count):
            if i > 0:
                gap = _sample_gap(rng, config)
                if gap:
                    segs.append(("silence", gap, None))
            add_token(int(rng.choice(list(vocab.content_ids()))))

    lo_tokens = max(config.tokens_min, config.post_pause_tokens_min + 1)
    n_tokens = int(rng.integers(lo_tokens, max(lo_tokens, config.tokens_max) + 1))
    terminal = int(rng.choice(list(vocab.terminal_ids())))

    if category == "hesitation":
        post_hi = min(config.post_pause_tokens_max, n_tokens - 1)
        post = int(rng.integers(config.post_pause_tokens_min, post_hi + 1))
        add_content_run(n_tokens - post)
        if vocab.n_filler and rng.random() < config.filler_prob:
            gap = _sample_gap(rng, config)
            if gap:
                segs.append(("silence", gap, None))
            add_token(int(rng.choice(list(vocab.filler_ids()))))
        segs.append(("pause", _sample_pause(rng, config), None))
        add_content_run(post)
        gap = _sample_gap(rng, config)
        if gap:
            segs.append(("silence", gap, None))
        add_token(terminal)
        segs.append(("silence", int(rng.integers(config.trail_min, config.trail_max + 1)), None))
    elif category == "complete":
        add_content_run(n_tokens)
        gap = _sample_gap(rng, config)
        if gap:
            segs.append(("silence", gap, None))
        add_token(terminal)
        segs.append(("silence", int(rng.integers(config.trail_min, config.trail_max + 1)), None))
    elif category == "incomplete":
        add_content_run(n_tokens)
        segs.append(("silence", int(rng.integers(1, config.incomplete_tail_max + 1)), None))
    else:
        raise ConfigError(f"unknown category {category!r}")
    return segs


def _render_utterance(rng, config: GenConfig, vocab: TokenVocab, uid: str,
                      category: str, class_means: dict) -> Utterance:
    segs = _build_segments(rng, config, vocab, category)
    total = sum(length for _, length, _ in segs)
    features = np.empty((total, config.feature_dim))
    mask = np.zeros(total, dtype=bool)
    token_ids, token_ends = [], []
    pos = 0
    for kind, length, token_id in segs:
        if kind == "token":
            mean = class_means[vocab.token_class(token_id)]
            mask[pos:pos + length] = True
            token_ids.append(token_id)
            token_ends.append(pos + length - 1)
        else:
            mean = class_means["silence"]
        features[pos:pos + length] = mean + rng.normal(
            0.0, config.noise_scale, size=(length, config.feature_dim))
        pos += length
    eos_frame = token_ends[-1] + 1
    utt = Utterance(
        id=uid,
        features=features,
        token_ids=token_ids,
        token_ends=token_ends,
        eos_frame=eos_frame,
        audio_end_frame=total - 1,
        category=category,
        speech_mask=mask,
    )
    validate_utterance(utt, vocab)
    return utt


def generate_corpus(config: GenConfig) -> Corpus:
    """Deterministically generate a corpus from the seed in the config."""
    config.validate()
    vocab = config.vocab()
    rng = np.random.default_rng(config.seed)
    base = np.full(config.feature_dim, config.speech_level)
    class_means = {
        "content": base + rng.normal(0.0, config.class_sep, config.feature_dim),
        "terminal": base + rng.normal(0.0, config.class_sep, config.feature_dim),
        "filler": base + rng.normal(0.0, config.class_sep, config.feature_dim),
        "silence": np.full(config.feature_dim, config.silence_level),
    }
    counts = (("complete", config.n_complete),
              ("hesitation", config.n_hesitation),
              ("incomplete", config.n_incomplete))
    utterances = []
    idx = 0
    for category, count in counts:
        for _ in range(count):
            utterances.append(_render_utterance(
                rng, config, vocab, f"u{idx:05d}", category, class_means))
            idx += 1
    return Corpus(vocab=vocab, utterances=utterances, meta=asdict(config))


def split_corpus(corpus: Corpus, fractions, seed: int):
    """Stratified, seed-deterministic (train, dev, test) split.

    Within each category the per-split allocation follows largest-remainder
    rounding of fraction * category_size, so per-category proportions stay
    within one utterance of the requested fractions.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.default_rng(seed)
    assignment = {}
    for category in CATEGORIES:
        members = [u.id for u in corpus.utterances if u.category == category]
        rng.shuffle(members)
        n = len(members)
        ideal = [f * n for f in fractions]
        alloc = [int(x) for x in ideal]
        remainders = sorted(range(3), key=lambda i: (ideal[i] - alloc[i], -i),
                            reverse=True)
        for i in remainders[: n - sum(alloc)]:
            alloc[i] += 1
        start = 0
        for split_idx, size in enumerate(alloc):
            for uid in members[start:start + size]:
                assignment[uid] = split_idx
            start += size
    splits = ([], [], [])
    for utt in corpus.utterances:
        splits[assignment[utt.id]].append(utt)
    return tuple(
        Corpus(vocab=corpus.vocab, utterances=list(part), meta=dict(corpus.meta))
        for part in splits
    )


# -- on-disk format -----------------------------------------------------------
#
# A corpus directory holds corpus.jsonl (one header line, then one record per
# utterance) and features.bin (concatenated little-endian float64 frames).
# See docs/corpus-format.md.


def save_corpus(corpus: Corpus, directory) -> None:
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {
        "format": CORPUS_MAGIC,
        "vocab": {"n_content": corpus.vocab.n_content,
                  "n_terminal": corpus.vocab.n_terminal,
                  "n_filler": corpus.vocab.n_filler},
        "meta": corpus.meta,
        "count": len(corpus),
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    offset = 0
    chunks = []
    for utt in corpus.utterances:
        frames, dim = utt.features.shape
        record = {
            "id": utt.id,
            "category": utt.category,
            "tokens": list(map(int, utt.token_ids)),
            "token_ends": list(map(int, utt.token_ends)),
            "eos_frame": int(utt.eos_frame),
            "audio_end_frame": int(utt.audio_end_frame),
            "speech": "".join("1" if b else "0" for b in utt.speech_mask),
            "offset": offset,
            "frames": frames,
            "dim": dim,
        }
        lines.append(json.dumps(record, sort_keys=True, separators=(",", ":")))
        chunks.append(np.ascontiguousarray(utt.features, dtype="<f8").tobytes())
        offset += frames * dim * 8
    (directory / "corpus.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with open(directory / "features.bin", "wb") as fh:
        for chunk in chunks:
            fh.write(chunk)


def load_corpus(directory) -> Corpus:
    from pathlib import Path

    directory = Path(directory)
    index_path = directory / "corpus.jsonl"
    payload_path = directory / "features.bin"
    if not index_path.exists():
        raise ParseError(f"{index_path}: not found")
    payload = payload_path.read_bytes() if payload_path.exists() else b""
    text = index_path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise ParseError(f"{index_path}: empty file")

    def parse_line(i, line):
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{index_path}: line {i + 1}: {exc}") from exc

    header = parse_line(0, lines[0])
    if header.get("format") != CORPUS_MAGIC:
        raise ParseError(f"{index_path}: line 1: bad format marker")
    vocab = TokenVocab(**header["vocab"])
    utterances = []
    for i, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        rec = parse_line(i, line)
        try:
            frames, dim, offset = rec["frames"], rec["dim"], rec["offset"]
            nbytes = frames * dim * 8
            chunk = payload[offset:offset + nbytes]
            if len(chunk) != nbytes:
                raise ParseError(
                    f"{index_path}: line {i + 1}: feature payload truncated "
                    f"for {rec['id']!r}"
                )
            features = np.frombuffer(chunk, dtype="<f8").reshape(frames, dim).copy()
            mask = np.frombuffer(rec["speech"].encode("ascii"), dtype=np.uint8) == ord("1")
            if mask.shape[0] != frames:
                raise ParseError(
                    f"{index_path}: line {i + 1}: speech mask length mismatch"
                )
            utt = Utterance(
                id=rec["id"],
                features=features,
                token_ids=list(rec["tokens"]),
                token_ends=list(rec["token_ends"]),
                eos_frame=rec["eos_frame"],
                audio_end_frame=rec["audio_end_frame"],
                category=rec["category"],
                speech_mask=mask,
            )
        except KeyError as exc:
            raise ParseError(f"{index_path}: line {i + 1}: missing field {exc}") from exc
        validate_utterance(utt, vocab)
        utterances.append(utt)
    if len(utterances) != header.get("count"):
        raise ParseError(
            f"{index_path}: header count {header.get('count')} != "
            f"{len(utterances)} records"
        )
    return Corpus(vocab=vocab, utterances=utterances, meta=header.get("meta", {}))
