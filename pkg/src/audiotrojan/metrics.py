"""Benign accuracy and attack success rate from prediction files."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, IncompletePredictionsError
from .poisoner import BENIGN, poison_label

FORMATS = ("text", "csv", "jsonl")


@dataclass(frozen=True)
class Rate:
    """A fraction kept as its raw counts."""

    hits: int
    total: int

    def __post_init__(self):
        if not 0 <= self.hits <= self.total:
            raise ValueError(f"invalid counts {self.hits}/{self.total}")

    @property
    def value(self):
        return self.hits / self.total if self.total else float("nan")

    def __add__(self, other):
        return Rate(self.hits + other.hits, self.total + other.total)


@dataclass
class MetricsReport:
    benign_accuracy: Rate | None = None
    asr_overall: Rate | None = None
    asr_per_target: dict = field(default_factory=dict)
    asr_per_class: dict = field(default_factory=dict)

    def merge(self, other):
        return MetricsReport(
            other.benign_accuracy if other.benign_accuracy is not None else self.benign_accuracy,
            other.asr_overall if other.asr_overall is not None else self.asr_overall,
            {**self.asr_per_target, **other.asr_per_target},
            {**self.asr_per_class, **other.asr_per_class},
        )

    def rows(self):
        """(metric name, Rate) pairs in report order."""
        out = []
        if self.benign_accuracy is not None:
            out.append(("benign_accuracy", self.benign_accuracy))
        if self.asr_overall is not None:
            out.append(("asr_overall", self.asr_overall))
        out += [(f"asr_target_{t}", r) for t, r in sorted(self.asr_per_target.items())]
        out += [(f"asr_class_{c}", r) for c, r in sorted(self.asr_per_class.items())]
        return out


def load_predictions(path, num_classes=None):
    path = Path(path)
    preds = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"sample_id", "predicted_label"} <= set(reader.fieldnames):
            raise DataError(f"{path}: header must be sample_id,predicted_label")
        for n, row in enumerate(reader, start=2):
            sid = row["sample_id"].strip()
            try:
                label = int(row["predicted_label"])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{n}: predicted_label is not an integer") from None
            if sid in preds:
                raise DataError(f"{path}:{n}: duplicate sample id {sid!r}")
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise DataError(f"{path}:{n}: predicted label {label} out of range")
            preds[sid] = label
    return preds


def benign_accuracy(preds, manifest):
    missing = [e.sample_id for e in manifest.entries if e.sample_id not in preds]
    if missing:
        raise IncompletePredictionsError(missing)
    hits = sum(preds[e.sample_id] == e.label for e in manifest.entries)
    return Rate(hits, len(manifest.entries))


def attack_success_rate(preds, attack_manifest, plan):
    """ASR over the non-excluded rows of a triggered test set.

    A row counts as a hit when the prediction equals the label its backdoor
    maps the ground truth to. Results are broken down per target (one per
    backdoor, all-to-one and clean-label plans) and per ground-truth class.
    """
    rows = [e for e in attack_manifest.entries if e.subset != BENIGN and not e.excluded_from_asr]
    missing = [e.sample_id for e in rows if e.sample_id not in preds]
    if missing:
        raise IncompletePredictionsError(missing)
    k = plan.class_count(max([e.ground_truth for e in attack_manifest.entries], default=0))
    targets = plan.target_indices() if plan.mode != "all_to_all" else None

    overall = Rate(0, 0)
    per_target, per_class = {}, {}
    for e in rows:
        b = e.backdoor
        target = targets[b - 1] if targets is not None else None
        expected = poison_label(e.ground_truth, plan.mode, target, k)
        r = Rate(int(preds[e.sample_id] == expected), 1)
        overall = overall + r
        per_class[e.ground_truth] = per_class.get(e.ground_truth, Rate(0, 0)) + r
        if target is not None:
            per_target[target] = per_target.get(target, Rate(0, 0)) + r
    return MetricsReport(None, overall, per_target, per_class)


def _fmt(value):
    return "nan" if value != value else f"{value:.4f}"


def report(metrics, fmt="text"):
    if fmt == "csv":
        lines = ["metric,value,numerator,denominator"]
        lines += [f"{name},{_fmt(r.value)},{r.hits},{r.total}" for name, r in metrics.rows()]
        return "\n".join(lines) + "\n"
    if fmt == "jsonl":
        return "".join(
            json.dumps({"metric": name, "value": float(_fmt(r.value)), "numerator": r.hits,
                        "denominator": r.total}) + "\n"
            for name, r in metrics.rows()
        )
    if fmt == "text":
        rows = metrics.rows()
        width = max((len(n) for n, _ in rows), default=6)
        out = io.StringIO()
        for name, r in rows:
            out.write(f"{name:<{width}}  {_fmt(r.value):>6}  ({r.hits}/{r.total})\n")
        return out.getvalue()
    raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")


def parse_jsonl(text):
    """Rebuild a report from :func:`report` output in ``jsonl`` format."""
    m = MetricsReport()
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        name, r = obj["metric"], Rate(obj["numerator"], obj["denominator"])
        if name == "benign_accuracy":
            m.benign_accuracy = r
        elif name == "asr_overall":
            m.asr_overall = r
        elif name.startswith("asr_target_"):
            m.asr_per_target[int(name[len("asr_target_"):])] = r
        elif name.startswith("asr_class_"):
            m.asr_per_class[int(name[len("asr_class_"):])] = r
        else:
            raise DataError(f"unknown metric {name!r}")
    return m
