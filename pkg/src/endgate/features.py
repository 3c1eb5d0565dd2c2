"""Audio front-end: log-mel filterbanks, frame stacking, silence padding.

Produces 64-dim log-mel energies over 25 ms windows with 10 ms hops, then
stacks groups of three into 192-dim frames at the 30 ms decision rate.  The
window function, FFT size and mel scale are conventional defaults and stay
visible in FrontendConfig.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass

import numpy as np

from . import AudioFormatError, ConfigError, ParseError, ShapeError

SAMPLE_RATE = 16000
WINDOW_SAMPLES = 400      # 25 ms at 16 kHz
HOP_SAMPLES = 160         # 10 ms at 16 kHz
STACK = 3                 # 3 x 10 ms -> 30 ms decision rate
FRAME_MS = 30             # decision frame duration
ENERGY_FLOOR = 1e-10      # added to filterbank energies before the log
LOG_FLOOR = math.log(ENERGY_FLOOR)  # value of a digitally silent bin

FEATURE_MAGIC = "ENDGATE-FEAT v1"


@dataclass
class FrontendConfig:
    """Conventional fill-ins the 64-dim/25ms/10ms contract does not pin down."""

    n_fft: int = 512
    n_mels: int = 64
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    window: str = "hann"

    def validate(self) -> None:
        if self.n_fft < WINDOW_SAMPLES:
            raise ConfigError(f"n_fft must be >= {WINDOW_SAMPLES}, got {self.n_fft}")
        if self.n_mels < 1:
            raise ConfigError(f"n_mels must be >= 1, got {self.n_mels}")
        if not 0 <= self.fmin_hz < self.fmax_hz:
            raise ConfigError("require 0 <= fmin_hz < fmax_hz")
        if self.window != "hann":
            raise ConfigError(f"unsupported window {self.window!r}")


DEFAULT_FRONTEND = FrontendConfig()


@dataclass
class AudioBuffer:
    """Mono PCM audio normalized to [-1, 1]."""

    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise AudioFormatError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise AudioFormatError("AudioBuffer is mono; expected 1-D samples")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path) -> AudioBuffer:
    """Load 16 kHz 16-bit PCM mono WAV."""
    with wave.open(str(path), "rb") as wav:
        if wav.getnchannels() != 1:
            raise AudioFormatError(f"{path}: expected mono, got {wav.getnchannels()} channels")
        if wav.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: expected 16-bit PCM")
        rate = wav.getframerate()
        raw = wav.readframes(wav.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(rate, samples)


def write_wav(path, audio: AudioBuffer) -> None:
    ints = np.clip(np.rint(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(audio.sample_rate)
        wav.writeframes(ints.tobytes())


def pad_silence(audio: AudioBuffer, duration_ms: int) -> AudioBuffer:
    """Append duration_ms of exact digital zeros."""
    if duration_ms < 0:
        raise ConfigError(f"pad duration must be >= 0 ms, got {duration_ms}")
    n_zeros = (int(duration_ms) * audio.sample_rate) // 1000
    padded = np.concatenate([audio.samples, np.zeros(n_zeros)])
    return AudioBuffer(audio.sample_rate, padded)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FrontendConfig = DEFAULT_FRONTEND,
                   sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft // 2 + 1)."""
    n_bins = config.n_fft // 2 + 1
    mel_points = np.linspace(_hz_to_mel(config.fmin_hz), _hz_to_mel(config.fmax_hz),
                             config.n_mels + 2)
    hz_points = _mel_to_hz(mel_points)
    bin_freqs = np.arange(n_bins) * sample_rate / config.n_fft
    filters = np.zeros((config.n_mels, n_bins))
    for i in range(config.n_mels):
        lo, mid, hi = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (bin_freqs - lo) / max(mid - lo, 1e-12)
        falling = (hi - bin_freqs) / max(hi - mid, 1e-12)
        filters[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return filters


def log_mel(audio: AudioBuffer, config: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    """64-dim log-mel energies per 10 ms hop; shape (frames, n_mels).

    Frame count is floor((N - 400) / 160) + 1; every frame covers a full
    25 ms window.  Energies are |rfft| magnitudes through the filterbank,
    floored at ENERGY_FLOOR before the natural log.
    """
    config.validate()
    if audio.sample_rate != SAMPLE_RATE:
        raise AudioFormatError(
            f"unsupported sample rate {audio.sample_rate}; expected {SAMPLE_RATE}"
        )
    n = len(audio.samples)
    if n < WINDOW_SAMPLES:
        raise AudioFormatError(
            f"audio too short: {n} samples < one {WINDOW_SAMPLES}-sample window"
        )
    n_frames = (n - WINDOW_SAMPLES) // HOP_SAMPLES + 1
    window = np.hanning(WINDOW_SAMPLES)
    starts = np.arange(n_frames) * HOP_SAMPLES
    idx = starts[:, None] + np.arange(WINDOW_SAMPLES)[None, :]
    frames = audio.samples[idx] * window
    spectrum = np.abs(np.fft.rfft(frames, n=config.n_fft, axis=1))
    energies = spectrum @ mel_filterbank(config).T
    return np.log(energies + ENERGY_FLOOR)


def stack_downsample(mel: np.ndarray) -> np.ndarray:
    """Concatenate consecutive triples of 10 ms frames into 30 ms frames.

    Pure concatenation: output[k] = concat(mel[3k], mel[3k+1], mel[3k+2]);
    a trailing remainder of 1-2 frames is dropped.
    """
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2:
        raise ShapeError(f"expected (frames, dim) mel array, got shape {mel.shape}")
    n_out = mel.shape[0] // STACK
    if n_out == 0:
        return np.zeros((0, mel.shape[1] * STACK))
    return mel[:n_out * STACK].reshape(n_out, mel.shape[1] * STACK)


def featurize(audio: AudioBuffer, config: FrontendConfig = DEFAULT_FRONTEND) -> np.ndarray:
    """Full front-end: log-mel at 10 ms then stack to (frames, 192) at 30 ms."""
    return stack_downsample(log_mel(audio, config))


def save_features(path, frames: np.ndarray) -> None:
    """Write a feature file: text header + little-endian float64 payload."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeError("feature payload must be 2-D (frames, dim)")
    header = (
        f"{FEATURE_MAGIC}\n"
        f"frames {frames.shape[0]}\n"
        f"dim {frames.shape[1]}\n"
        f"hop_ms {FRAME_MS}\n"
        "END\n"
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(frames, dtype="<f8").tobytes())


def load_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = b"\nEND\n"
    idx = blob.find(sep)
    if idx < 0:
        raise ParseError(f"{path}: missing END header terminator")
    lines = blob[:idx].decode("utf-8").split("\n")
    if not lines or lines[0] != FEATURE_MAGIC:
        raise ParseError(f"{path}: bad magic line")
    fields = dict(line.split(" ", 1) for line in lines[1:] if line)
    try:
        n_frames = int(fields["frames"])
        dim = int(fields["dim"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: malformed header: {exc}") from exc
    payload = blob[idx + len(sep):]
    expected = n_frames * dim * 8
    if len(payload) != expected:
        raise ParseError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(n_frames, dim).copy()
