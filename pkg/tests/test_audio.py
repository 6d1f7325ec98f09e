import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiotrojan.audio import (AudioClip, Spectrogram, StftParams, check_cola, clip_guard,
                               istft, load_wav, save_wav, snr_db, stft)
from audiotrojan.errors import (AudioFormatError, ConfigurationError, InvalidInputError,
                                UnsupportedCodecError)

from conftest import SR, tone


def _write_raw_wav(path, fmt_tag, channels, rate, bits, payload, extensible=False):
    block = channels * bits // 8
    if extensible:
        fmt = struct.pack("<HHIIHH", 0xFFFE, channels, rate, rate * block, block, bits)
        fmt += struct.pack("<HHI", 22, bits, 0) + struct.pack("<H", fmt_tag) + b"\x00" * 14
    else:
        fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


class TestWavIO:
    def test_pcm16_extremes(self, tmp_path):
        p = tmp_path / "x.wav"
        _write_raw_wav(p, 1, 1, SR, 16, np.array([-32768, 0, 16384, 32767], "<i2").tobytes())
        clip = load_wav(p)
        assert clip.samples[0] == -1.0
        assert clip.samples[2] == 0.5
        assert clip.samples[3] == 32767 / 32768

    def test_save_full_scale(self, tmp_path):
        p = tmp_path / "x.wav"
        save_wav(AudioClip([1.0, -1.0, 0.0], SR), p)
        with wave.open(str(p)) as w:
            raw = np.frombuffer(w.readframes(3), "<i2")
        assert list(raw) == [32767, -32768, 0]

    def test_roundtrip_within_quantisation(self, tmp_path, rng):
        x = rng.uniform(-0.99, 0.99, 4000)
        p = tmp_path / "x.wav"
        save_wav(AudioClip(x, 22050), p)
        back = load_wav(p)
        assert back.sample_rate == 22050
        assert np.max(np.abs(back.samples - x)) <= 0.5 / 32768 + 1e-12

    def test_stereo_is_averaged(self, tmp_path):
        p = tmp_path / "s.wav"
        frames = np.array([[16384, 0], [-16384, -16384]], "<i2")
        _write_raw_wav(p, 1, 2, SR, 16, frames.tobytes())
        assert list(load_wav(p).samples) == [0.25, -0.5]

    @pytest.mark.parametrize("extensible", [False, True])
    def test_float32(self, tmp_path, extensible):
        p = tmp_path / "f.wav"
        _write_raw_wav(p, 3, 1, 8000, 32, np.array([0.25, -0.75], "<f4").tobytes(), extensible)
        clip = load_wav(p)
        assert clip.sample_rate == 8000
        assert list(clip.samples) == [0.25, -0.75]

    def test_unsupported_codec(self, tmp_path):
        p = tmp_path / "u.wav"
        _write_raw_wav(p, 1, 1, SR, 24, b"\x00" * 9)
        with pytest.raises(UnsupportedCodecError):
            load_wav(p)

    @pytest.mark.parametrize("blob", [b"", b"RIFF\x00\x00\x00\x00WAVX", b"RIFF\x04\x00\x00\x00WAVE"])
    def test_malformed(self, tmp_path, blob):
        p = tmp_path / "m.wav"
        p.write_bytes(blob)
        with pytest.raises(AudioFormatError):
            load_wav(p)

    def test_truncated_chunk(self, tmp_path):
        p = tmp_path / "t.wav"
        save_wav(AudioClip(np.zeros(100), SR), p)
        p.write_bytes(p.read_bytes()[:-20])
        with pytest.raises(AudioFormatError, match="truncated"):
            load_wav(p)


class TestClip:
    def test_rejects_empty_and_nan(self):
        with pytest.raises(InvalidInputError):
            AudioClip([], SR)
        with pytest.raises(InvalidInputError):
            AudioClip([0.0, np.nan], SR)

    def test_samples_read_only(self):
        clip = AudioClip([0.0, 1.0], SR)
        with pytest.raises(ValueError):
            clip.samples[0] = 1.0

    def test_clip_guard(self):
        y, over = clip_guard(np.array([0.5, -1.25, 1.1]))
        assert over == pytest.approx(0.25)
        assert list(y) == [0.5, -1.0, 1.0]
        y, over = clip_guard(np.array([0.5]))
        assert over == 0.0


class TestStft:
    def test_tone_peak_bin(self):
        spec = stft(tone(1000.0))
        mid = spec.frames[len(spec.frames) // 2]
        assert int(np.argmax(np.abs(mid))) == 64

    def test_shape(self):
        spec = stft(AudioClip(np.zeros(16000), SR))
        assert spec.frames.shape == (1 + 16000 // 256, 513)
        assert not np.any(spec.frames)

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            stft(AudioClip(np.zeros(100), SR))

    def test_linearity(self, rng):
        a, b = rng.standard_normal(4096), rng.standard_normal(4096)
        lhs = stft(AudioClip(2 * a - 3 * b, SR)).frames
        rhs = 2 * stft(AudioClip(a, SR)).frames - 3 * stft(AudioClip(b, SR)).frames
        assert np.allclose(lhs, rhs, atol=1e-9)

    def test_parseval_per_frame(self, rng):
        x = rng.standard_normal(4096) * 0.1
        spec = stft(AudioClip(x, SR))
        n = 1024
        padded = np.pad(x, n // 2, mode="reflect")
        w = np.hanning(n + 1)[:-1]
        seg = padded[5 * 256:5 * 256 + n] * w
        full = np.fft.fft(seg)
        assert np.sum(np.abs(full) ** 2) / n == pytest.approx(np.sum(seg ** 2), rel=1e-10)
        assert np.allclose(spec.frames[5], full[:n // 2 + 1])

    def test_single_frame_windowed_sinusoid(self):
        n = 1024
        k = 32
        x = np.cos(2 * np.pi * k * np.arange(n) / n)
        spec = stft(AudioClip(x, SR), frame_size=n, hop=n)
        # cos is even, so reflect padding keeps the first frame an exact period
        frame = np.abs(spec.frames[0])
        assert set(np.flatnonzero(frame > 1e-6 * frame.max())) <= {k - 1, k, k + 1}

    def test_zero_spectrogram_inverts_to_silence(self):
        spec = Spectrogram(np.zeros((20, 513)), 1024, 256, "hann", SR, 4864)
        y = istft(spec)
        assert len(y) == 4864
        assert not np.any(y.samples)

    def test_roundtrip(self, rng):
        x = AudioClip(rng.uniform(-0.5, 0.5, 16000), SR)
        assert snr_db(x, istft(stft(x))) > 100

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1024, 6000), st.sampled_from([(512, 128), (1024, 256), (256, 64)]),
           st.integers(0, 2**31))
    def test_roundtrip_property(self, n, fh, seed):
        frame, hop = fh
        x = AudioClip(np.random.default_rng(seed).uniform(-0.9, 0.9, n), SR)
        y = istft(stft(x, frame, hop))
        assert len(y) == n
        assert snr_db(x, y) > 40

    def test_cola_violation(self):
        with pytest.raises(ConfigurationError):
            check_cola("hann", 1024, 512)
        check_cola("hann", 1024, 256)

    def test_cola_violation_on_inverse(self):
        spec = Spectrogram(np.zeros((4, 513)), 1024, 512, "hann", SR)
        with pytest.raises(ConfigurationError):
            istft(spec)

    def test_params_validation(self):
        with pytest.raises(InvalidInputError):
            StftParams(1000, 250)
        with pytest.raises(InvalidInputError):
            StftParams(1024, 0)
        with pytest.raises(InvalidInputError):
            StftParams(1024, 256, "nonesuch")
