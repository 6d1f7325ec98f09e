"""Audio clips, WAV I/O and the STFT pair used by both trigger families."""

from __future__ import annotations

import logging
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import get_window

from . import kernels
from .errors import AudioFormatError, ConfigurationError, InvalidInputError, UnsupportedCodecError

log = logging.getLogger(__name__)

DEFAULT_FRAME_SIZE = 1024
DEFAULT_HOP = 256
DEFAULT_WINDOW = "hann"

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono time-domain signal. ``samples`` is stored read-only as float64."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64).reshape(-1)
        if x.size == 0:
            raise InvalidInputError("audio clip must contain at least one sample")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("audio clip contains non-finite samples")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise InvalidInputError(f"sample rate must be a positive integer, got {self.sample_rate!r}")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate

    def with_samples(self, samples):
        return AudioClip(samples, self.sample_rate)


@dataclass(frozen=True)
class StftParams:
    frame_size: int = DEFAULT_FRAME_SIZE
    hop: int = DEFAULT_HOP
    window: str = DEFAULT_WINDOW

    def __post_init__(self):
        n = self.frame_size
        if n < 2 or n & (n - 1):
            raise InvalidInputError(f"frame_size must be a power of two >= 2, got {n}")
        if not 0 < self.hop <= n:
            raise InvalidInputError(f"hop must satisfy 0 < hop <= frame_size, got {self.hop}")
        analysis_window(self.window, n)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Complex STFT frames, shape ``(n_frames, frame_size // 2 + 1)``.

    ``centered`` frames were computed on a signal reflect-padded by half a
    frame at both ends; ``length`` is the original clip length, if known.
    """

    frames: np.ndarray
    frame_size: int
    hop: int
    window: str
    sample_rate: int
    length: int | None = None
    centered: bool = True

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.complex128)
        StftParams(self.frame_size, self.hop, self.window)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] != self.frame_size // 2 + 1:
            raise InvalidInputError(
                f"frames must have shape (n, {self.frame_size // 2 + 1}), got {frames.shape}"
            )
        object.__setattr__(self, "frames", frames)

    @property
    def params(self):
        return StftParams(self.frame_size, self.hop, self.window)

    def with_frames(self, frames, length=None):
        return Spectrogram(frames, self.frame_size, self.hop, self.window, self.sample_rate,
                           self.length if length is None else length, self.centered)


def analysis_window(name, size):
    try:
        return np.asarray(get_window(name, size, fftbins=True), dtype=np.float64)
    except (ValueError, TypeError) as exc:
        raise InvalidInputError(f"unknown window {name!r}") from exc


def clip_guard(samples):
    """Hard-clip to [-1, 1]. Returns ``(clipped, overage)`` where overage is
    how far the peak exceeded full scale (0.0 when nothing was clipped)."""
    samples = np.asarray(samples, dtype=np.float64)
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    overage = max(0.0, peak - 1.0)
    if overage > 0.0:
        log.debug("clipping guard engaged, peak overage %.6f", overage)
        samples = np.clip(samples, -1.0, 1.0)
    return samples, overage


# --------------------------------------------------------------------------
# WAV I/O
# --------------------------------------------------------------------------

def _iter_chunks(data, path):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise AudioFormatError(f"{path}: chunk {cid!r} truncated")
        yield cid, body
        pos += 8 + size + (size & 1)


def load_wav(path):
    """Read a RIFF/WAVE file as a mono clip.

    16-bit PCM and 32-bit float are accepted, in any channel count; channels
    are averaged. Integer PCM is scaled so that -32768 maps to -1.0.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise AudioFormatError(f"{path}: not a RIFF/WAVE file")
    fmt = payload = None
    for cid, body in _iter_chunks(data, path):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            payload = body
    if fmt is None or len(fmt) < 16:
        raise AudioFormatError(f"{path}: missing or short fmt chunk")
    if payload is None:
        raise AudioFormatError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise AudioFormatError(f"{path}: short WAVE_FORMAT_EXTENSIBLE header")
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if channels < 1 or rate < 1:
        raise AudioFormatError(f"{path}: invalid channel count or sample rate")

    if tag == _FORMAT_PCM and bits == 16:
        x = np.frombuffer(payload, dtype="<i2", count=len(payload) // 2).astype(np.float64) / 32768.0
    elif tag == _FORMAT_FLOAT and bits == 32:
        x = np.frombuffer(payload, dtype="<f4", count=len(payload) // 4).astype(np.float64)
    else:
        raise UnsupportedCodecError(f"{path}: unsupported encoding (format tag {tag:#06x}, {bits} bits)")
    if block_align != channels * bits // 8:
        raise AudioFormatError(f"{path}: block alignment {block_align} inconsistent with header")

    n_frames = x.size // channels
    if n_frames == 0:
        raise AudioFormatError(f"{path}: no audio frames")
    x = x[:n_frames * channels].reshape(n_frames, channels).mean(axis=1)
    return AudioClip(x, rate)


def save_wav(clip, path):
    """Write a 16-bit PCM mono file. Full scale 1.0 is stored as 32767."""
    q = np.clip(np.rint(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    path = Path(path)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(q.tobytes())


# --------------------------------------------------------------------------
# STFT
# --------------------------------------------------------------------------

def stft(clip, frame_size=DEFAULT_FRAME_SIZE, hop=DEFAULT_HOP, window=DEFAULT_WINDOW):
    """Centered short-time Fourier transform.

    The clip is reflect-padded by ``frame_size // 2`` on both sides, giving
    ``1 + len(clip) // hop`` frames.
    """
    params = StftParams(frame_size, hop, window)
    x = clip.samples
    if len(x) < frame_size:
        raise InvalidInputError(f"clip has {len(x)} samples, fewer than one frame ({frame_size})")
    half = frame_size // 2
    padded = np.pad(x, half, mode="reflect")
    n_frames = 1 + (len(padded) - frame_size) // hop
    idx = np.arange(frame_size)[None, :] + hop * np.arange(n_frames)[:, None]
    w = analysis_window(params.window, frame_size)
    frames = np.fft.rfft(padded[idx] * w, axis=1)
    return Spectrogram(frames, frame_size, hop, window, clip.sample_rate, len(x), True)


def check_cola(window, frame_size, hop, rtol=1e-6):
    """Raise unless the squared window overlap-adds to a constant at ``hop``."""
    w2 = analysis_window(window, frame_size) ** 2
    folded = np.zeros(hop)
    for start in range(0, frame_size, hop):
        seg = w2[start:start + hop]
        folded[:len(seg)] += seg
    mean = folded.mean()
    if mean <= 0 or np.ptp(folded) > rtol * mean:
        raise ConfigurationError(
            f"window {window!r} with frame {frame_size} and hop {hop} is not constant-overlap-add"
        )


def istft(spec, length=None):
    """Inverse of :func:`stft` by weighted overlap-add.

    Output is normalised by the summed squared window, so unmodified
    spectrograms reconstruct their source exactly up to rounding. The result
    passes through :func:`clip_guard`.
    """
    y, _ = clip_guard(inverse_samples(spec, length))
    return AudioClip(y, spec.sample_rate)


def inverse_samples(spec, length=None):
    """Unclipped samples of :func:`istft` as a bare array."""
    n, hop = spec.frame_size, spec.hop
    check_cola(spec.window, n, hop)
    w = analysis_window(spec.window, n)
    time_frames = np.fft.irfft(spec.frames, n=n, axis=1)
    y, wsum = kernels.overlap_add(time_frames, w, hop)
    nz = wsum > 1e-10 * wsum.max()
    y[nz] /= wsum[nz]
    y[~nz] = 0.0
    if spec.centered:
        y = y[n // 2:]
        if length is None:
            length = spec.length if spec.length is not None else (spec.frames.shape[0] - 1) * hop
    if length is not None:
        y = y[:length] if len(y) >= length else np.pad(y, (0, length - len(y)))
    return y


# --------------------------------------------------------------------------
# Measurements
# --------------------------------------------------------------------------

def snr_db(reference, estimate):
    ref = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    est = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    n = min(len(ref), len(est))
    noise = np.sum((ref[:n] - est[:n]) ** 2)
    if noise == 0.0:
        return float("inf")
    return float(10.0 * np.log10(np.sum(ref[:n] ** 2) / noise))


def rms(x):
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


def dominant_frequency(clip, fmin=0.0, fmax=None):
    """Frequency of the largest FFT magnitude peak, refined by parabolic
    interpolation on log-magnitude."""
    x = clip.samples * np.hanning(len(clip))
    spectrum = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(len(x), 1.0 / clip.sample_rate)
    band = (freqs >= fmin) & (freqs <= (fmax if fmax is not None else freqs[-1]))
    k = int(np.flatnonzero(band)[np.argmax(spectrum[band])])
    if 0 < k < len(spectrum) - 1:
        a, b, c = np.log(spectrum[k - 1:k + 2] + 1e-300)
        denom = a - 2 * b + c
        offset = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        offset = 0.0
    return float((k + offset) * clip.sample_rate / len(x))


def spectral_centroid(clip):
    spectrum = np.abs(np.fft.rfft(clip.samples)) ** 2
    freqs = np.fft.rfftfreq(len(clip), 1.0 / clip.sample_rate)
    total = spectrum.sum()
    return float((freqs * spectrum).sum() / total) if total > 0 else 0.0
