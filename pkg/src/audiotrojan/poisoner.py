"""Poisoned-dataset construction.

Given a labelled corpus and a :class:`~audiotrojan.plan.PoisonPlan`, pick
disjoint poisoned subsets, run the trigger over them, relabel, and write a
manifest describing the whole poisoned training set. The same machinery
builds triggered test sets for measuring attack success.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import floor
from pathlib import Path, PurePath, PurePosixPath

from .audio import load_wav, save_wav
from .errors import (AudioTrojanError, BackendError, CapacityError, ConfigurationError, DataError,
                     InvalidVariantError)
from .pbsm import apply_pitch_only, run_pbsm
from .plan import pbsm_to_dict
from .vsvc import assign_transforms, convert_voice, greedy_select, load_embeddings, similarity_matrix

log = logging.getLogger(__name__)

SAMPLER_ID = "sha256-rank/v1"
BENIGN = "benign"
MANIFEST_NAME = "manifest.csv"
INPUT_COLUMNS = ("sample_id", "path", "label")
OUTPUT_COLUMNS = ("sample_id", "path", "label", "ground_truth", "subset", "excluded_from_asr",
                  "trigger_meta_json")
VARIANTS = ("full", "pitch_only")


# --------------------------------------------------------------------------
# Manifests
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    path: str
    label: int


@dataclass(frozen=True)
class DatasetManifest:
    """Labelled corpus listing. Relative paths are resolved against ``root``."""

    entries: tuple
    num_classes: int
    root: Path = Path(".")

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise DataError("manifest has no entries")
        seen = set()
        for e in self.entries:
            if e.sample_id in seen:
                raise DataError(f"duplicate sample id {e.sample_id!r}")
            seen.add(e.sample_id)
            if not 0 <= e.label < self.num_classes:
                raise DataError(f"label {e.label} of {e.sample_id!r} outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.entries)

    def resolve(self, entry):
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p


@dataclass(frozen=True)
class PoisonedEntry:
    sample_id: str
    path: str
    label: int
    ground_truth: int
    subset: str
    excluded_from_asr: bool = False
    trigger_meta: dict = field(default_factory=dict)

    @property
    def backdoor(self):
        """1-based backdoor index, or None for benign rows."""
        if self.subset == BENIGN:
            return None
        return int(self.subset.rsplit("_", 1)[1])


@dataclass(frozen=True)
class PoisonedManifest:
    entries: tuple
    root: Path = Path(".")

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self):
        return len(self.entries)

    def resolve(self, entry):
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def subsets(self):
        out = {}
        for e in self.entries:
            out.setdefault(e.subset, []).append(e.sample_id)
        return out

    def to_csv(self):
        lines = [",".join(OUTPUT_COLUMNS)]
        for e in self.entries:
            meta = json.dumps(e.trigger_meta, sort_keys=True, separators=(",", ":"))
            lines.append(_csv_row([e.sample_id, e.path, e.label, e.ground_truth, e.subset,
                                   "true" if e.excluded_from_asr else "false", meta]))
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_csv(), newline="")


def _csv_row(values):
    out = []
    for v in values:
        s = str(v)
        if any(c in s for c in ',"\n\r'):
            s = '"' + s.replace('"', '""') + '"'
        out.append(s)
    return ",".join(out)


def _parse_label(raw, classes, where):
    raw = raw.strip()
    if classes is not None and raw in classes:
        return classes.index(raw)
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"{where}: label {raw!r} is neither an integer nor a known class") from None


def load_manifest(path, classes=None, num_classes=None):
    """Read a ``sample_id,path,label`` CSV. Labels may be class indices or,
    when ``classes`` is given, class names."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(INPUT_COLUMNS) <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain {','.join(INPUT_COLUMNS)}")
        entries = [
            ManifestEntry(row["sample_id"].strip(), row["path"].strip(),
                          _parse_label(row["label"], classes, f"{path}:{n}"))
            for n, row in enumerate(reader, start=2)
        ]
    if not entries:
        raise DataError(f"{path}: manifest has no entries")
    if classes is not None:
        num_classes = len(classes)
    elif num_classes is None:
        num_classes = max(e.label for e in entries) + 1
    return DatasetManifest(tuple(entries), num_classes, path.parent)


def write_manifest(manifest, path):
    lines = [",".join(INPUT_COLUMNS)]
    lines += [_csv_row([e.sample_id, e.path, e.label]) for e in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n", newline="")


def load_poisoned_manifest(path):
    path = Path(path)
    entries = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != OUTPUT_COLUMNS:
            raise DataError(f"{path}: header must be {','.join(OUTPUT_COLUMNS)}")
        for n, row in enumerate(reader, start=2):
            try:
                entries.append(PoisonedEntry(
                    row["sample_id"], row["path"], int(row["label"]), int(row["ground_truth"]),
                    row["subset"], row["excluded_from_asr"].strip().lower() == "true",
                    json.loads(row["trigger_meta_json"] or "{}"),
                ))
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path}:{n}: {exc}") from None
    return PoisonedManifest(tuple(entries), path.parent)


# --------------------------------------------------------------------------
# Sampling and labels
# --------------------------------------------------------------------------

def subset_size(rate, n):
    """``floor(rate * n)``, taking ``rate`` at its decimal value so that
    0.29 * 100 gives 29."""
    return floor(Fraction(repr(float(rate))) * n)


def _rank_key(seed, backdoor, sample_id):
    return hashlib.sha256(f"{seed}\x1f{backdoor}\x1f{sample_id}".encode("utf-8")).digest()


@dataclass(frozen=True)
class Partition:
    benign: tuple
    poisoned: tuple  # one tuple of ids per backdoor, in manifest order


def sample_poison_subsets(manifest, plan):
    """Draw the disjoint poisoned subsets, one per backdoor, in order.

    Each subset takes the ``floor(rate * N)`` candidates with the smallest
    SHA-256 of (seed, backdoor, sample id) among entries not already taken.
    Under ``clean_label`` candidates are restricted to the backdoor's target
    class.
    """
    n = len(manifest)
    targets = plan.target_indices() if plan.mode != "all_to_all" else [None]
    order = {e.sample_id: i for i, e in enumerate(manifest.entries)}
    taken = set()
    subsets = []
    for b, (rate, target) in enumerate(zip(plan.rates, targets), start=1):
        k = subset_size(rate, n)
        pool = [e for e in manifest.entries if e.sample_id not in taken
                and (plan.mode != "clean_label" or e.label == target)]
        if len(pool) < k:
            raise CapacityError(
                f"backdoor {b} needs {k} samples but only {len(pool)} are available"
                + (f" in class {target}" if plan.mode == "clean_label" else "")
            )
        chosen = sorted(pool, key=lambda e: _rank_key(plan.seed, b, e.sample_id))[:k]
        ids = sorted((e.sample_id for e in chosen), key=order.__getitem__)
        taken.update(ids)
        subsets.append(tuple(ids))
    benign = tuple(e.sample_id for e in manifest.entries if e.sample_id not in taken)
    return Partition(benign, tuple(subsets))


def poison_label(y, mode, target, num_classes):
    if mode == "all_to_all":
        return (y + 1) % num_classes
    return target


# --------------------------------------------------------------------------
# Triggers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PbsmTrigger:
    cfg: object
    pitch_only: bool = False

    def __call__(self, clip):
        params = pbsm_to_dict(self.cfg)
        if self.pitch_only:
            return apply_pitch_only(clip, self.cfg), {"trigger": "pbsm", "variant": "pitch_only", **params}
        result = run_pbsm(clip, self.cfg)
        return result.audio, {"trigger": "pbsm", "variant": "full", **params, **result.meta()}


@dataclass(frozen=True)
class VsvcTrigger:
    transform: object
    stft: object

    def __call__(self, clip):
        return convert_voice(clip, self.transform, self.stft), {"trigger": "vsvc", **self.transform.meta()}


def select_timbres(plan):
    """Timbre ids for the plan's backdoors, in backdoor order."""
    m = plan.n_backdoors
    vs = plan.vsvc
    if vs.timbres:
        return list(vs.timbres)
    if vs.embeddings:
        emb = load_embeddings(vs.embeddings)
        if max(m, 2) > len(emb):
            raise ConfigurationError(f"{m} timbres requested but only {len(emb)} candidates")
        return greedy_select(similarity_matrix(emb), max(m, 2), vs.objective)[:m]
    return [f"timbre_{i}" for i in range(1, m + 1)]


def make_triggers(plan, variant="full"):
    variant = variant.replace("-", "_")
    if variant not in VARIANTS:
        raise InvalidVariantError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if plan.trigger == "pbsm":
        return [PbsmTrigger(plan.pbsm, pitch_only=variant == "pitch_only")]
    if variant == "pitch_only":
        raise InvalidVariantError("the pitch-only variant exists only for the pbsm trigger")
    transforms = assign_transforms(select_timbres(plan), plan.vsvc.transform_table, plan.vsvc.backend)
    return [VsvcTrigger(t, plan.pbsm.stft) for t in transforms]


# --------------------------------------------------------------------------
# Building
# --------------------------------------------------------------------------

_UNSAFE = re.compile(r"[^A-Za-z0-9._/-]+")


def _relative_name(entry):
    p = PurePosixPath(entry.path.replace("\\", "/"))
    if not p.is_absolute() and ".." not in p.parts and p.name:
        return p
    name = _UNSAFE.sub("_", entry.sample_id).strip("/")
    parts = [s for s in name.split("/") if s not in ("", ".", "..")]
    return PurePosixPath(*parts) if parts else PurePosixPath("sample")


def output_name(entry, subset):
    rel = _relative_name(entry)
    return rel.parent / f"{rel.with_suffix('').name}__{subset}.wav"


@dataclass
class FileError:
    sample_id: str
    path: str
    message: str
    backend: bool = False


class BuildFailed(DataError):
    def __init__(self, errors):
        self.errors = errors
        self.exit_code = 3 if any(e.backend for e in errors) else 2
        lines = "; ".join(f"{e.path}: {e.message}" for e in errors[:5])
        more = "" if len(errors) <= 5 else f" (+{len(errors) - 5} more)"
        super().__init__(f"{len(errors)} file(s) failed: {lines}{more}")


@dataclass
class BuildResult:
    manifest: PoisonedManifest
    errors: list


def _run_job(job):
    sample_id, src, dst, trigger = job
    try:
        clip = load_wav(src)
        out, meta = trigger(clip)
        Path(dst).parent.mkdir(parents=True, exist_ok=True)
        save_wav(out, dst)
        return meta, None
    except (AudioTrojanError, OSError) as exc:
        return None, FileError(sample_id, str(src), str(exc), isinstance(exc, BackendError))


def _run_jobs(jobs, workers):
    if workers is None or workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _finish(rows, errors, out_dir, keep_going):
    if errors and not keep_going:
        raise BuildFailed(errors)
    for e in errors:
        log.warning("skipped %s: %s", e.path, e.message)
    manifest = PoisonedManifest(tuple(rows), out_dir)
    manifest.write(out_dir / MANIFEST_NAME)
    return BuildResult(manifest, errors)


def build_poisoned_dataset(manifest, plan, out_dir, keep_going=False, jobs=1):
    """Write poisoned WAVs and the poisoned-training-set manifest.

    Benign rows point at the untouched source files, poisoned rows at new
    files under ``out_dir``; both are stored relative to ``out_dir``.
    The manifest is written to ``out_dir / "manifest.csv"``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    k = plan.class_count(max(e.label for e in manifest.entries))
    partition = sample_poison_subsets(manifest, plan)
    triggers = make_triggers(plan)
    targets = plan.target_indices() if plan.mode != "all_to_all" else [None]

    assignment = {}
    for b, ids in enumerate(partition.poisoned, start=1):
        for sid in ids:
            assignment[sid] = b

    job_list, job_rows = [], []
    for e in manifest.entries:
        b = assignment.get(e.sample_id)
        if b is None:
            continue
        subset = f"poisoned_{b}"
        rel = output_name(e, subset)
        job_list.append((e.sample_id, manifest.resolve(e), out_dir / rel, triggers[b - 1]))
        job_rows.append((e, b, subset, rel))
    results = dict(zip((r[0].sample_id for r in job_rows), zip(job_rows, _run_jobs(job_list, jobs))))

    rows, errors = [], []
    for e in manifest.entries:
        if e.sample_id not in results:
            src = os.path.relpath(manifest.resolve(e).resolve(), out_dir.resolve())
            rows.append(PoisonedEntry(e.sample_id, PurePath(src).as_posix(), e.label, e.label, BENIGN))
            continue
        (_, b, subset, rel), (meta, err) = results[e.sample_id]
        if err is not None:
            errors.append(err)
            continue
        target = targets[b - 1]
        meta = {**meta, "backdoor": b, "sampler": SAMPLER_ID, "seed": plan.seed,
                "target": target, "mode": plan.mode}
        rows.append(PoisonedEntry(e.sample_id, rel.as_posix(), poison_label(e.label, plan.mode, target, k),
                                  e.label, subset, False, meta))
    return _finish(rows, errors, out_dir, keep_going)


def build_attack_testset(test_manifest, plan, variant="full", out_dir=".", keep_going=False, jobs=1):
    """Trigger every test clip once per backdoor.

    Each row's ``label`` is the label the attack wants predicted. Under
    all-to-one and clean-label plans, clips already in the target class are
    flagged ``excluded_from_asr`` (kept, not dropped) when
    ``plan.exclude_target_from_asr`` is set. With several backdoors, ids get
    an ``@<backdoor>`` suffix.
    """
    triggers = make_triggers(plan, variant)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    k = plan.class_count(max(e.label for e in test_manifest.entries))
    targets = plan.target_indices() if plan.mode != "all_to_all" else [None]
    multi = len(triggers) > 1

    job_list, job_rows = [], []
    for b, trigger in enumerate(triggers, start=1):
        subset = f"poisoned_{b}"
        for e in test_manifest.entries:
            rel = output_name(e, subset)
            sid = f"{e.sample_id}@{b}" if multi else e.sample_id
            job_list.append((sid, test_manifest.resolve(e), out_dir / rel, trigger))
            job_rows.append((e, b, subset, rel, sid))

    rows, errors = [], []
    for (e, b, subset, rel, sid), (meta, err) in zip(job_rows, _run_jobs(job_list, jobs)):
        if err is not None:
            errors.append(err)
            continue
        target = targets[b - 1]
        excluded = (plan.exclude_target_from_asr and plan.mode != "all_to_all" and e.label == target)
        meta = {**meta, "backdoor": b, "target": target, "mode": plan.mode}
        rows.append(PoisonedEntry(sid, rel.as_posix(), poison_label(e.label, plan.mode, target, k),
                                  e.label, subset, excluded, meta))
    return _finish(rows, errors, out_dir, keep_going)
