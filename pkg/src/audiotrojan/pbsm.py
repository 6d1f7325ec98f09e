"""Pitch boosting and sound masking.

The trigger raises the pitch of an utterance by a fixed number of semitones,
finds its loudest fixed-length stretch, and mixes a short high-pitched tone
in at that point so the tone is masked by the surrounding speech.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample

from . import kernels
from .audio import AudioClip, StftParams, clip_guard, inverse_samples, rms, stft
from .errors import InvalidInputError

RMS_FLOOR = 1e-4
ANCHORS = ("end", "start")


@dataclass(frozen=True)
class HighPitchSpec:
    frequency_hz: float = 6000.0
    duration_ms: float = 100.0
    amplitude_ratio: float = 0.5
    fade_ms: float = 5.0

    def __post_init__(self):
        if not self.frequency_hz > 0:
            raise InvalidInputError(f"tone frequency must be positive, got {self.frequency_hz}")
        if not self.duration_ms > 0:
            raise InvalidInputError(f"tone duration must be positive, got {self.duration_ms}")
        if not self.amplitude_ratio >= 0:
            raise InvalidInputError(f"amplitude ratio must be non-negative, got {self.amplitude_ratio}")
        if not 0 <= 2 * self.fade_ms <= self.duration_ms:
            raise InvalidInputError("fades must fit inside the tone (0 <= 2 * fade_ms <= duration_ms)")


@dataclass(frozen=True)
class PbsmConfig:
    """``anchor`` picks where the tone starts relative to the loudest
    segment: at its end (the located index) or at its start."""

    semitones: int = 5
    segment_ms: float = 100.0
    signal: HighPitchSpec = field(default_factory=HighPitchSpec)
    stft: StftParams = field(default_factory=StftParams)
    anchor: str = "end"

    def __post_init__(self):
        _check_semitones(self.semitones)
        if not self.segment_ms > 0:
            raise InvalidInputError(f"segment_ms must be positive, got {self.segment_ms}")
        if self.anchor not in ANCHORS:
            raise InvalidInputError(f"anchor must be one of {ANCHORS}, got {self.anchor!r}")

    def segment_samples(self, sample_rate):
        return max(1, int(round(self.segment_ms * sample_rate / 1000.0)))


@dataclass(frozen=True, eq=False)
class PbsmResult:
    audio: AudioClip
    boosted: AudioClip
    segment_end: int
    insert_at: int
    host_rms: float
    tone_rms: float
    peak_overage: float

    def meta(self):
        return {
            "segment_end": self.segment_end,
            "insert_at": self.insert_at,
            "host_rms": self.host_rms,
            "tone_rms": self.tone_rms,
            "peak_overage": self.peak_overage,
        }


def _check_semitones(n):
    try:
        n = operator.index(n)
    except TypeError:
        raise InvalidInputError(f"semitones must be an integer, got {n!r}") from None
    if n < 0:
        raise InvalidInputError(f"semitones must be >= 0, got {n}")
    return n


def semitone_factor(n_p):
    return 2.0 ** (n_p / 12.0)


def shift_by_factor(clip, factor, params=StftParams()):
    """Scale every frequency in ``clip`` by ``factor`` keeping its duration.

    Phase-vocoder time stretch by ``factor`` followed by band-limited
    resampling back to the input length. Returns unclipped samples.
    """
    if not factor > 0:
        raise InvalidInputError(f"pitch factor must be positive, got {factor}")
    spec = stft(clip, params.frame_size, params.hop, params.window)
    n_frames = spec.frames.shape[0]
    n_out = int(np.floor((n_frames - 1) * factor + 1e-9)) + 1
    steps = np.minimum(np.arange(n_out) / factor, n_frames - 1)
    advance = 2.0 * np.pi * params.hop * np.arange(spec.frames.shape[1]) / params.frame_size
    stretched = kernels.pv_stretch(np.abs(spec.frames), np.angle(spec.frames), steps, advance)
    target = int(round(len(clip) * factor))
    y = inverse_samples(spec.with_frames(stretched, length=target))
    if target != len(clip):
        y = resample(y, len(clip))
    return y


def pitch_shift(clip, n_p, stft_params=StftParams()):
    """Raise the pitch by ``n_p`` semitones; duration is unchanged."""
    n_p = _check_semitones(n_p)
    y, _ = clip_guard(shift_by_factor(clip, semitone_factor(n_p), stft_params))
    return clip.with_samples(y)


def locate_max_energy(clip, window_len):
    """End index of the first window of ``window_len`` samples whose absolute
    sum is largest. Linear time via prefix sums."""
    x = getattr(clip, "samples", clip)
    window_len = operator.index(window_len)
    if not 0 < window_len <= len(x):
        raise InvalidInputError(f"window length must be in [1, {len(x)}], got {window_len}")
    return kernels.max_window_start(np.abs(x), window_len) + window_len


def synthesize_high_pitch(spec, sample_rate, target_rms):
    """Sine tone with raised-cosine fades, scaled to
    ``spec.amplitude_ratio * target_rms`` RMS."""
    nyquist = sample_rate / 2.0
    if spec.frequency_hz >= nyquist:
        raise InvalidInputError(f"tone at {spec.frequency_hz} Hz is not below Nyquist ({nyquist} Hz)")
    n = max(1, int(round(spec.duration_ms * sample_rate / 1000.0)))
    t = np.arange(n) / sample_rate
    tone = np.sin(2.0 * np.pi * spec.frequency_hz * t)
    n_fade = min(n // 2, int(round(spec.fade_ms * sample_rate / 1000.0)))
    if n_fade > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * (np.arange(n_fade) + 0.5) / n_fade))
        tone[:n_fade] *= ramp
        tone[n - n_fade:] *= ramp[::-1]
    level = rms(tone)
    gain = spec.amplitude_ratio * target_rms / level if level > 0 else 0.0
    return AudioClip(tone * gain, sample_rate)


def _placement(n, n_h, index):
    if n_h == 0:
        raise InvalidInputError("injected signal is empty")
    if n_h > n:
        raise InvalidInputError(f"injected signal ({n_h} samples) is longer than the host ({n})")
    return min(max(0, index), n - n_h)


def inject_signal(clip, h, index):
    """Add ``h`` into ``clip`` starting at ``index``, clamped so that all of
    ``h`` fits. Samples outside the insertion window are left untouched."""
    h_samples = np.asarray(getattr(h, "samples", h), dtype=np.float64)
    if isinstance(h, AudioClip) and h.sample_rate != clip.sample_rate:
        raise InvalidInputError("injected signal and host have different sample rates")
    start = _placement(len(clip), len(h_samples), index)
    y = np.array(clip.samples)
    y[start:start + len(h_samples)] += h_samples
    y, _ = clip_guard(y)
    return clip.with_samples(y)


def run_pbsm(clip, cfg=PbsmConfig()):
    """Full trigger with the intermediate values kept for reporting."""
    boosted_raw = shift_by_factor(clip, semitone_factor(cfg.semitones), cfg.stft)
    boosted_raw, overage_boost = clip_guard(boosted_raw)
    boosted = clip.with_samples(boosted_raw)

    seg = cfg.segment_samples(clip.sample_rate)
    if seg > len(clip):
        raise InvalidInputError(f"segment of {seg} samples exceeds clip length {len(clip)}")
    end = locate_max_energy(boosted, seg)
    host = max(rms(boosted_raw[end - seg:end]), RMS_FLOOR)
    tone = synthesize_high_pitch(cfg.signal, clip.sample_rate, host)
    start = _placement(len(clip), len(tone), end if cfg.anchor == "end" else end - seg)

    y = boosted_raw.copy()
    y[start:start + len(tone)] += tone.samples
    y, overage_mix = clip_guard(y)
    return PbsmResult(
        audio=clip.with_samples(y),
        boosted=boosted,
        segment_end=int(end),
        insert_at=int(start),
        host_rms=host,
        tone_rms=rms(tone),
        peak_overage=max(overage_boost, overage_mix),
    )


def apply_pbsm(clip, cfg=PbsmConfig()):
    return run_pbsm(clip, cfg).audio


def apply_pitch_only(clip, cfg=PbsmConfig()):
    """Pitch boosting alone, without the masked tone."""
    return pitch_shift(clip, cfg.semitones, cfg.stft)


def estimate_pitch_ratio(reference, shifted, max_semitones=24, bins_per_octave=240):
    """Global frequency ratio between two clips.

    Magnitude spectra are mapped onto a log-frequency grid and
    cross-correlated; the best lag, refined parabolically, gives the ratio.
    """
    sr = reference.sample_rate
    n = max(len(reference), len(shifted))

    def log_spectrum(c):
        x = np.zeros(n)
        x[:len(c)] = c.samples * np.hanning(len(c))
        mag = np.abs(np.fft.rfft(x))
        freqs = np.fft.rfftfreq(n, 1.0 / sr)
        grid = 50.0 * 2.0 ** (np.arange(int(np.log2((sr / 2) / 50.0) * bins_per_octave)) / bins_per_octave)
        return np.interp(grid, freqs, mag)

    a = log_spectrum(reference)
    b = log_spectrum(shifted)
    a = a - a.mean()
    b = b - b.mean()
    max_lag = int(max_semitones / 12 * bins_per_octave)
    lags = np.arange(-max_lag, max_lag + 1)
    scores = np.array([
        np.dot(a[max(0, -lag):len(a) - max(0, lag)], b[max(0, lag):len(b) - max(0, -lag)])
        for lag in lags
    ])
    k = int(np.argmax(scores))
    offset = 0.0
    if 0 < k < len(scores) - 1:
        y0, y1, y2 = scores[k - 1:k + 2]
        denom = y0 - 2 * y1 + y2
        offset = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
    return float(2.0 ** ((lags[k] + offset) / bins_per_octave))
