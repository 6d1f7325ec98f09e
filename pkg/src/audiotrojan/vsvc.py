"""Voiceprint selection and voice conversion.

Speaker embeddings (x-vectors computed elsewhere) are compared by Euclidean
distance; a farthest-first greedy search picks ``M`` mutually distant
timbres, and each picked timbre gets a conversion transform used as its
backdoor trigger.
"""

from __future__ import annotations

import csv
import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import StftParams, clip_guard, inverse_samples, load_wav, save_wav, stft
from .errors import BackendError, ConfigurationError, DataError, InvalidInputError
from .pbsm import shift_by_factor

log = logging.getLogger(__name__)

WARP_RANGE = (0.7, 1.4)
DEFAULT_WARP_SPREAD = (0.8, 1.25)
DEFAULT_PITCH_OFFSETS = (-2, 2)
OBJECTIVES = ("maxmin", "maxsum")
BUILTIN = "builtin"


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    speaker_ids: tuple
    vectors: np.ndarray

    def __post_init__(self):
        ids = tuple(str(s) for s in self.speaker_ids)
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != len(ids):
            raise DataError(f"expected {len(ids)} vectors, got array of shape {v.shape}")
        if len(ids) < 2:
            raise DataError("need at least two speakers")
        if v.shape[1] < 1:
            raise DataError("embedding dimension must be >= 1")
        if len(set(ids)) != len(ids):
            dupes = sorted({s for s in ids if ids.count(s) > 1})
            raise DataError(f"duplicate speaker ids: {', '.join(dupes)}")
        if not np.all(np.isfinite(v)):
            raise DataError("embeddings contain non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "speaker_ids", ids)
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.speaker_ids)


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Pairwise voiceprint distances (larger means less similar)."""

    entries: np.ndarray
    speaker_ids: tuple

    def __post_init__(self):
        d = np.array(self.entries, dtype=np.float64)
        ids = tuple(str(s) for s in self.speaker_ids)
        k = len(ids)
        if d.shape != (k, k):
            raise InvalidInputError(f"matrix shape {d.shape} does not match {k} ids")
        if not np.array_equal(d, d.T):
            raise InvalidInputError("similarity matrix is not symmetric")
        if np.any(np.diag(d) != 0):
            raise InvalidInputError("similarity matrix diagonal must be zero")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise InvalidInputError("similarity matrix entries must be finite and non-negative")
        d.flags.writeable = False
        object.__setattr__(self, "entries", d)
        object.__setattr__(self, "speaker_ids", ids)

    def triangle_violation(self):
        """Largest amount by which d(i, k) exceeds d(i, j) + d(j, k)."""
        d = self.entries
        worst = 0.0
        for j in range(d.shape[0]):
            worst = max(worst, float(np.max(d - (d[:, j][:, None] + d[j][None, :]))))
        return worst

    def to_csv(self):
        lines = ["id," + ",".join(self.speaker_ids)]
        for sid, row in zip(self.speaker_ids, self.entries):
            lines.append(sid + "," + ",".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TimbreTransform:
    """Parameters of one timbre trigger.

    ``backend`` is ``"builtin"`` for the spectral-envelope warp, or a shell
    command line for an external converter.
    """

    timbre_id: str
    warp_alpha: float = 1.0
    pitch_offset_semitones: int = 0
    backend: str = BUILTIN

    def __post_init__(self):
        lo, hi = WARP_RANGE
        if not lo <= self.warp_alpha <= hi:
            raise InvalidInputError(f"warp_alpha must lie in [{lo}, {hi}], got {self.warp_alpha}")
        if int(self.pitch_offset_semitones) != self.pitch_offset_semitones:
            raise InvalidInputError("pitch_offset_semitones must be an integer")
        if not self.backend:
            raise InvalidInputError("backend must be 'builtin' or a command")

    def meta(self):
        return {
            "timbre_id": self.timbre_id,
            "warp_alpha": float(self.warp_alpha),
            "pitch_offset_semitones": int(self.pitch_offset_semitones),
            "backend": self.backend,
        }


def load_embeddings(path):
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty embeddings file")
    header = [h.strip() for h in rows[0]]
    d = len(header) - 1
    if d < 1 or header[0] != "id" or header[1:] != [f"v{i}" for i in range(d)]:
        raise DataError(f"{path}: header must be id,v0,...,v{{d-1}}")
    ids, vectors = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != d + 1:
            raise DataError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
        try:
            vectors.append([float(c) for c in row[1:]])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric embedding value") from None
        ids.append(row[0].strip())
    return EmbeddingSet(tuple(ids), np.array(vectors).reshape(len(ids), d))


def similarity_matrix(embeddings):
    v = embeddings.vectors
    k = len(embeddings)
    d = np.zeros((k, k))
    for i in range(k - 1):
        row = np.sqrt(np.sum((v[i + 1:] - v[i]) ** 2, axis=1))
        d[i, i + 1:] = row
        d[i + 1:, i] = row
    return SimilarityMatrix(d, embeddings.speaker_ids)


def greedy_select(sim, m, objective="maxmin"):
    """Pick ``m`` mutually distant timbres.

    Starts from the farthest pair, then repeatedly adds the remaining
    candidate whose minimum (``"maxmin"``) or summed (``"maxsum"``) distance
    to the picked set is largest. Ties go to the smaller index. Returns ids
    in selection order.
    """
    if objective not in OBJECTIVES:
        raise InvalidInputError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    d = sim.entries
    k = d.shape[0]
    if not 2 <= m <= k:
        raise InvalidInputError(f"number of timbres must be in [2, {k}], got {m}")

    iu, ju = np.triu_indices(k, 1)
    best = int(np.argmax(d[iu, ju]))
    picked = [int(iu[best]), int(ju[best])]
    remaining = np.ones(k, dtype=bool)
    remaining[picked] = False
    if objective == "maxmin":
        score = np.minimum(d[picked[0]], d[picked[1]])
    else:
        score = d[picked[0]] + d[picked[1]]
    while len(picked) < m:
        cand = np.flatnonzero(remaining)
        nxt = int(cand[np.argmax(score[cand])])
        picked.append(nxt)
        remaining[nxt] = False
        score = np.minimum(score, d[nxt]) if objective == "maxmin" else score + d[nxt]
    return [sim.speaker_ids[i] for i in picked]


def _read_param_table(table, default_backend):
    if isinstance(table, (str, Path)):
        with Path(table).open(newline="") as fh:
            rows = [r for r in csv.DictReader(fh)]
    else:
        rows = [dict(r) for r in table]
    slots = []
    for n, row in enumerate(rows):
        try:
            slot = {
                "warp_alpha": float(row["warp_alpha"]),
                "pitch_offset_semitones": int(row.get("pitch_offset_semitones") or 0),
            }
            backend = row.get("backend")
            slot["backend"] = str(backend).strip() if backend not in (None, "") else default_backend
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigurationError(f"transform table row {n + 1}: {exc}") from None
        tid = row.get("timbre_id")
        slot["timbre_id"] = str(tid).strip() if tid not in (None, "") else None
        slots.append(slot)
    return slots


def assign_transforms(selected, param_table=None, backend=BUILTIN):
    """One distinct transform per selected timbre.

    Without a table, warp factors are spread evenly over [0.8, 1.25] and
    pitch offsets alternate -2, +2. A table (CSV path or list of mappings
    with ``warp_alpha``, ``pitch_offset_semitones`` and optionally
    ``timbre_id``/``backend``) is matched by ``timbre_id`` when given, else
    by position.
    """
    selected = [str(s) for s in selected]
    m = len(selected)
    if m == 0:
        raise InvalidInputError("no timbres selected")
    if param_table is None:
        lo, hi = DEFAULT_WARP_SPREAD
        alphas = [lo] if m == 1 else [lo + (hi - lo) * i / (m - 1) for i in range(m)]
        return [
            TimbreTransform(tid, alphas[i], DEFAULT_PITCH_OFFSETS[i % 2], backend)
            for i, tid in enumerate(selected)
        ]

    slots = _read_param_table(param_table, backend)
    keys = [(s["warp_alpha"], s["pitch_offset_semitones"], s["backend"]) for s in slots]
    if len(set(keys)) != len(keys):
        raise ConfigurationError("transform table contains duplicate parameter slots")
    by_id = {s["timbre_id"]: s for s in slots if s["timbre_id"] is not None}
    if by_id:
        missing = [t for t in selected if t not in by_id]
        if missing:
            raise ConfigurationError(f"transform table has no row for timbre(s): {', '.join(missing)}")
        chosen = [by_id[t] for t in selected]
    else:
        if len(slots) < m:
            raise ConfigurationError(f"transform table has {len(slots)} slot(s), {m} timbres selected")
        chosen = slots[:m]
    return [
        TimbreTransform(tid, s["warp_alpha"], s["pitch_offset_semitones"], s["backend"])
        for tid, s in zip(selected, chosen)
    ]


def warp_envelope(clip, alpha, params=StftParams(), lifter=30):
    """Move the spectral envelope along frequency by ``alpha``.

    The envelope is the low-quefrency part of each frame's log magnitude;
    the harmonic fine structure and phases stay in place. Returns unclipped
    samples.
    """
    spec = stft(clip, params.frame_size, params.hop, params.window)
    if alpha == 1.0:
        return inverse_samples(spec)
    n = params.frame_size
    mag = np.abs(spec.frames)
    floor = 1e-6 * max(float(mag.max()), 1e-12)
    cep = np.fft.irfft(np.log(mag + floor), n=n, axis=1)
    cep[:, lifter:n - lifter + 1] = 0.0
    env = np.fft.rfft(cep, axis=1).real
    bins = np.arange(env.shape[1], dtype=np.float64)
    warped = np.stack([np.interp(bins / alpha, bins, row) for row in env])
    return inverse_samples(spec.with_frames(spec.frames * np.exp(warped - env)))


def _convert_builtin(clip, t, params):
    # Resampling moves the envelope by the pitch factor too; the warp undoes
    # that so the net envelope scale is exactly warp_alpha.
    ratio = 2.0 ** (t.pitch_offset_semitones / 12.0)
    x = clip
    if t.pitch_offset_semitones:
        x = clip.with_samples(shift_by_factor(clip, ratio, params))
    y = warp_envelope(x, t.warp_alpha / ratio, params)
    y, overage = clip_guard(y)
    if overage:
        log.debug("timbre %s clipped by %.4f", t.timbre_id, overage)
    return clip.with_samples(y)


def _convert_external(clip, t):
    argv = shlex.split(t.backend)
    with tempfile.TemporaryDirectory(prefix="audiotrojan-vc-") as tmp:
        src = Path(tmp) / "in.wav"
        dst = Path(tmp) / "out.wav"
        save_wav(clip, src)
        cmd = argv + ["--in", str(src), "--out", str(dst), "--timbre", t.timbre_id]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True)
        except OSError as exc:
            raise BackendError(f"cannot run converter {argv[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            raise BackendError(
                f"converter exited with status {proc.returncode}: {proc.stderr.strip()[-500:]}"
            )
        if not dst.exists():
            raise BackendError("converter exited 0 but wrote no output file")
        out = load_wav(dst)
    if out.sample_rate != clip.sample_rate:
        raise BackendError(f"converter changed sample rate {clip.sample_rate} -> {out.sample_rate}")
    if abs(len(out) - len(clip)) > 0.1 * len(clip):
        raise BackendError(f"converter changed duration by more than 10% ({len(clip)} -> {len(out)} samples)")
    y, _ = clip_guard(out.samples)
    return out.with_samples(y)


def convert_voice(clip, t, stft_params=StftParams()):
    """Apply timbre transform ``t`` to ``clip``."""
    if t.backend == BUILTIN:
        return _convert_builtin(clip, t, stft_params)
    return _convert_external(clip, t)
