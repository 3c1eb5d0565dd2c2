import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from endgate import AudioFormatError, ConfigError, ParseError, ShapeError
from endgate.features import (ENERGY_FLOOR, HOP_SAMPLES, LOG_FLOOR, SAMPLE_RATE,
                              WINDOW_SAMPLES, AudioBuffer, featurize, load_features,
                              log_mel, mel_filterbank, pad_silence, read_wav,
                              save_features, stack_downsample, write_wav)


def _tone(freq_hz, seconds, amplitude=0.5):
    t = np.arange(int(seconds * SAMPLE_RATE)) / SAMPLE_RATE
    return AudioBuffer(SAMPLE_RATE, amplitude * np.sin(2 * np.pi * freq_hz * t))


class TestLogMel:
    def test_one_second_gives_98_frames(self):
        mel = log_mel(AudioBuffer(SAMPLE_RATE, np.zeros(16000)))
        assert mel.shape == (98, 64)

    def test_frame_count_formula_random_durations(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(WINDOW_SAMPLES, 48000))
            mel = log_mel(AudioBuffer(SAMPLE_RATE, np.zeros(n)))
            assert mel.shape[0] == (n - WINDOW_SAMPLES) // HOP_SAMPLES + 1

    def test_silence_hits_floor(self):
        mel = log_mel(AudioBuffer(SAMPLE_RATE, np.zeros(8000)))
        assert np.allclose(mel, math.log(ENERGY_FLOOR))
        assert np.allclose(mel, LOG_FLOOR)

    def test_pure_tone_argmax_stationary(self):
        mel = log_mel(_tone(1000, 1.0))
        argmaxes = mel.argmax(axis=1)
        assert len(set(argmaxes.tolist())) == 1

    def test_scale_monotone(self):
        rng = np.random.default_rng(1)
        audio = rng.normal(scale=0.2, size=9600).clip(-1, 1)
        quiet = log_mel(AudioBuffer(SAMPLE_RATE, audio * 0.5))
        loud = log_mel(AudioBuffer(SAMPLE_RATE, audio))
        assert np.all(loud >= quiet)

    def test_too_short_raises(self):
        with pytest.raises(AudioFormatError):
            log_mel(AudioBuffer(SAMPLE_RATE, np.zeros(399)))

    def test_wrong_rate_raises(self):
        with pytest.raises(AudioFormatError):
            log_mel(AudioBuffer(8000, np.zeros(8000)))

    def test_filterbank_rows_nonempty(self):
        filters = mel_filterbank()
        assert filters.shape == (64, 257)
        assert np.all(filters.sum(axis=1) > 0)


class TestStackDownsample:
    def test_98_to_32(self):
        assert stack_downsample(np.zeros((98, 64))).shape == (32, 192)

    def test_three_frames_concatenate(self):
        a, b, c = np.arange(64.0), np.arange(64.0) + 100, np.arange(64.0) + 200
        out = stack_downsample(np.stack([a, b, c]))
        assert out.shape == (1, 192)
        assert np.array_equal(out[0], np.concatenate([a, b, c]))

    def test_remainder_dropped(self):
        assert stack_downsample(np.zeros((2, 64))).shape == (0, 192)

    def test_values_preserved_by_slicing(self):
        rng = np.random.default_rng(2)
        mel = rng.normal(size=(31, 64))
        out = stack_downsample(mel)
        for k in range(out.shape[0]):
            assert np.array_equal(out[k].reshape(3, 64), mel[3 * k:3 * k + 3])


class TestPadSilence:
    def test_two_seconds_exact(self):
        audio = _tone(440, 3.5)
        padded = pad_silence(audio, 2000)
        assert len(padded.samples) == len(audio.samples) + 32000
        assert np.all(padded.samples[-32000:] == 0.0)
        assert np.array_equal(padded.samples[:len(audio.samples)], audio.samples)

    def test_zero_padding_is_identity(self):
        audio = _tone(440, 0.5)
        padded = pad_silence(audio, 0)
        assert np.array_equal(padded.samples, audio.samples)

    def test_empty_audio(self):
        padded = pad_silence(AudioBuffer(SAMPLE_RATE, np.zeros(0)), 300)
        assert len(padded.samples) == 4800
        assert np.all(padded.samples == 0.0)

    def test_negative_raises(self):
        with pytest.raises(ConfigError):
            pad_silence(_tone(440, 0.1), -1)

    @given(st.integers(min_value=0, max_value=5000))
    def test_length_formula(self, ms):
        audio = AudioBuffer(SAMPLE_RATE, np.ones(123))
        assert len(pad_silence(audio, ms).samples) == 123 + ms * SAMPLE_RATE // 1000


class TestWavIO:
    def test_roundtrip(self, tmp_path):
        audio = _tone(523, 0.25)
        path = tmp_path / "tone.wav"
        write_wav(path, audio)
        loaded = read_wav(path)
        assert loaded.sample_rate == SAMPLE_RATE
        assert np.allclose(loaded.samples, audio.samples, atol=1 / 32768)

    def test_pad_then_reload_bit_identical(self, tmp_path):
        audio = _tone(523, 0.25)
        p1, p2 = tmp_path / "a.wav", tmp_path / "b.wav"
        write_wav(p1, audio)
        write_wav(p2, pad_silence(read_wav(p1), 0))
        assert p1.read_bytes() == p2.read_bytes()


class TestFeatureFile:
    def test_roundtrip(self, tmp_path):
        frames = featurize(_tone(700, 1.0))
        assert frames.shape == (32, 192)
        path = tmp_path / "feats.bin"
        save_features(path, frames)
        assert np.array_equal(load_features(path), frames)

    def test_truncated_fails(self, tmp_path):
        path = tmp_path / "feats.bin"
        save_features(path, np.ones((4, 192)))
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(ParseError):
            load_features(path)

    def test_non_2d_rejected(self, tmp_path):
        with pytest.raises(ShapeError):
            save_features(tmp_path / "x.bin", np.ones(5))
