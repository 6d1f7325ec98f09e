"""Poison plans: the attack configuration and its file format.

A plan file is a JSON or YAML tree::

    trigger: pbsm            # or vsvc
    mode: all_to_one         # all_to_all | clean_label
    targets: [left]          # class names (resolved via ``classes``) or indices
    rates: [0.01]
    seed: 0
    classes: [yes, no, up, down, left, right, on, off, stop, go]
    exclude_target_from_asr: true
    pbsm:
      semitones: 5
      segment_ms: 100
      anchor: end
      signal: {frequency_hz: 6000, duration_ms: 100, amplitude_ratio: 0.5, fade_ms: 5}
      stft: {frame_size: 1024, hop: 256, window: hann}
    vsvc:
      embeddings: xvectors.csv
      timbres: []            # explicit ids; skips selection when given
      transform_table: null
      objective: maxmin
      backend: builtin
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

import yaml

from .audio import StftParams
from .errors import ConfigurationError, InvalidInputError
from .pbsm import HighPitchSpec, PbsmConfig
from .vsvc import BUILTIN, OBJECTIVES

TRIGGERS = ("pbsm", "vsvc")
MODES = ("all_to_one", "all_to_all", "clean_label")
PLAN_ENV_VAR = "AUDIOTROJAN_PLAN"


@dataclass(frozen=True)
class VsvcConfig:
    embeddings: str | None = None
    timbres: tuple = ()
    transform_table: str | None = None
    objective: str = "maxmin"
    backend: str = BUILTIN

    def __post_init__(self):
        object.__setattr__(self, "timbres", tuple(str(t) for t in self.timbres))
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"vsvc.objective must be one of {OBJECTIVES}")


@dataclass(frozen=True)
class PoisonPlan:
    trigger: str = "pbsm"
    mode: str = "all_to_one"
    targets: tuple = ()
    rates: tuple = (0.01,)
    seed: int = 0
    classes: tuple | None = None
    num_classes: int | None = None
    exclude_target_from_asr: bool = True
    pbsm: PbsmConfig = field(default_factory=PbsmConfig)
    vsvc: VsvcConfig = field(default_factory=VsvcConfig)

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        if self.classes is not None:
            object.__setattr__(self, "classes", tuple(str(c) for c in self.classes))
        if self.trigger not in TRIGGERS:
            raise ConfigurationError(f"trigger must be one of {TRIGGERS}, got {self.trigger!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.rates:
            raise ConfigurationError("at least one poisoning rate is required")
        for r in self.rates:
            if not 0 < r <= 1:
                raise ConfigurationError(f"poisoning rates must lie in (0, 1], got {r}")
        if sum(Fraction(repr(r)) for r in self.rates) > 1:
            raise ConfigurationError("poisoning rates sum to more than 1")
        if self.mode == "all_to_all":
            if self.n_backdoors != 1:
                raise ConfigurationError("all_to_all requires exactly one backdoor")
        else:
            if len(self.targets) != self.n_backdoors:
                raise ConfigurationError(
                    f"{self.n_backdoors} rate(s) but {len(self.targets)} target(s)"
                )
            if len(set(self.targets)) != len(self.targets):
                raise ConfigurationError("target labels must be distinct")
        if self.trigger == "pbsm" and self.n_backdoors != 1:
            raise ConfigurationError("pbsm supports a single backdoor")
        if self.classes is not None and self.num_classes is not None and len(self.classes) != self.num_classes:
            raise ConfigurationError("num_classes disagrees with the classes list")
        if self.classes is not None and len(set(self.classes)) != len(self.classes):
            raise ConfigurationError("class names must be unique")
        if self.vsvc.timbres and len(self.vsvc.timbres) != self.n_backdoors:
            raise ConfigurationError("vsvc.timbres must list one timbre per backdoor")

    @property
    def n_backdoors(self):
        return len(self.rates)

    def class_count(self, observed_max=None):
        if self.classes is not None:
            return len(self.classes)
        if self.num_classes is not None:
            return self.num_classes
        if observed_max is None:
            raise ConfigurationError("number of classes unknown: set classes or num_classes")
        return observed_max + 1

    def label_index(self, label):
        """Resolve a class name or index to an index."""
        if isinstance(label, bool):
            raise ConfigurationError(f"invalid label {label!r}")
        if isinstance(label, int):
            return label
        text = str(label).strip()
        if self.classes is not None and text in self.classes:
            return self.classes.index(text)
        try:
            return int(text)
        except ValueError:
            raise ConfigurationError(f"unknown class {text!r}") from None

    def target_indices(self):
        return [self.label_index(t) for t in self.targets]

    def to_dict(self):
        return {
            "trigger": self.trigger,
            "mode": self.mode,
            "targets": list(self.targets),
            "rates": list(self.rates),
            "seed": self.seed,
            "classes": None if self.classes is None else list(self.classes),
            "num_classes": self.num_classes,
            "exclude_target_from_asr": self.exclude_target_from_asr,
            "pbsm": pbsm_to_dict(self.pbsm),
            "vsvc": {
                "embeddings": self.vsvc.embeddings,
                "timbres": list(self.vsvc.timbres),
                "transform_table": self.vsvc.transform_table,
                "objective": self.vsvc.objective,
                "backend": self.vsvc.backend,
            },
        }

    def digest(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def pbsm_to_dict(cfg):
    return {
        "semitones": cfg.semitones,
        "segment_ms": cfg.segment_ms,
        "anchor": cfg.anchor,
        "signal": {f.name: getattr(cfg.signal, f.name) for f in fields(HighPitchSpec)},
        "stft": {f.name: getattr(cfg.stft, f.name) for f in fields(StftParams)},
    }


def _take(tree, cls, where):
    if tree is None:
        return {}
    if not isinstance(tree, dict):
        raise ConfigurationError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(tree) - known
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    return dict(tree)


def plan_from_dict(tree):
    try:
        top = _take(tree, PoisonPlan, "plan")
        pb = _take(top.pop("pbsm", None), PbsmConfig, "pbsm")
        if "signal" in pb:
            pb["signal"] = HighPitchSpec(**_take(pb["signal"], HighPitchSpec, "pbsm.signal"))
        if "stft" in pb:
            pb["stft"] = StftParams(**_take(pb["stft"], StftParams, "pbsm.stft"))
        top["pbsm"] = PbsmConfig(**pb)
        top["vsvc"] = VsvcConfig(**_take(top.pop("vsvc", None), VsvcConfig, "vsvc"))
        if isinstance(top.get("targets"), (str, int)):
            top["targets"] = [top["targets"]]
        if isinstance(top.get("rates"), (int, float)):
            top["rates"] = [top["rates"]]
        return PoisonPlan(**top)
    except InvalidInputError as exc:
        raise ConfigurationError(str(exc)) from exc
    except TypeError as exc:
        raise ConfigurationError(f"malformed plan: {exc}") from exc


class _Loader(yaml.SafeLoader):
    """Safe loader that reads only true/false as booleans, so class names
    such as ``yes``, ``no``, ``on`` and ``off`` stay strings."""


_Loader.yaml_implicit_resolvers = {
    ch: [(tag, rx) for tag, rx in resolvers if tag != "tag:yaml.org,2002:bool"]
    for ch, resolvers in yaml.SafeLoader.yaml_implicit_resolvers.items()
}
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:bool", re.compile(r"^(?:true|True|TRUE|false|False|FALSE)$"), list("tTfF")
)


def parse_yaml(text):
    return yaml.load(text, Loader=_Loader)


def read_plan_tree(path):
    path = Path(path)
    text = path.read_text()
    try:
        tree = json.loads(text) if path.suffix.lower() == ".json" else parse_yaml(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"{path}: cannot parse plan ({exc})") from exc
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigurationError(f"{path}: plan must be a mapping")
    return tree


def set_dotted(tree, key, value):
    node = tree
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot set {key}: {part} is not a mapping")
    node[parts[-1]] = value


def load_plan(path=None, overrides=None):
    """Read a plan file (or ``$AUDIOTROJAN_PLAN``) and apply dotted-key overrides."""
    if path is None:
        path = os.environ.get(PLAN_ENV_VAR) or None
    tree = read_plan_tree(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        set_dotted(tree, key, value)
    plan = plan_from_dict(tree)
    if path is not None:
        plan = _resolve_relative(plan, Path(path).parent)
    return plan


def _resolve_relative(plan, base):
    vs = plan.vsvc
    emb = vs.embeddings
    table = vs.transform_table
    if emb and not Path(emb).is_absolute() and (base / emb).exists():
        emb = str(base / emb)
    if table and not Path(table).is_absolute() and (base / table).exists():
        table = str(base / table)
    return replace(plan, vsvc=replace(vs, embeddings=emb, transform_table=table))


def dump_plan(plan, path):
    Path(path).write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
