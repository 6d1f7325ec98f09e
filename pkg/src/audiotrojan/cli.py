"""Command-line front end.

Subcommands: ``trigger``, ``select-timbres``, ``poison``, ``attack-testset``,
``evaluate`` and ``toy-corpus``. Data goes to stdout, diagnostics to stderr.
Exit status: 0 ok, 1 usage, 2 data error, 3 converter backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .audio import load_wav, save_wav
from .errors import AudioTrojanError
from .metrics import FORMATS, attack_success_rate, benign_accuracy, load_predictions, report, MetricsReport
from .pbsm import estimate_pitch_ratio, run_pbsm
from .plan import PLAN_ENV_VAR, load_plan, parse_yaml
from .poisoner import (build_attack_testset, build_poisoned_dataset, load_manifest,
                       load_poisoned_manifest)
from .toy import make_toy_corpus
from .vsvc import (TimbreTransform, assign_transforms, convert_voice, greedy_select, load_embeddings,
                   similarity_matrix)

log = logging.getLogger("audiotrojan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunRecord:
    command_line: list
    plan_digest: str | None
    seed: int | None
    tool_version: str = __version__
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished: str | None = None
    errors: list = field(default_factory=list)

    def close(self, errors=()):
        self.finished = datetime.now(timezone.utc).isoformat()
        self.errors = [asdict(e) if hasattr(e, "__dataclass_fields__") else e for e in errors]
        return self

    def emit(self, path=None):
        text = json.dumps(asdict(self), indent=2 if path else None, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        else:
            print(f"run_record {text}", file=sys.stderr)


# Plan-key flags: (flag, dotted key, argparse kwargs). Flags override file values.
_PLAN_FLAGS = [
    ("--trigger", "trigger", dict(choices=["pbsm", "vsvc"])),
    ("--mode", "mode", dict(choices=["all_to_one", "all_to_all", "clean_label"])),
    ("--target", "targets", dict(action="append", help="target label; repeat for several backdoors")),
    ("--rate", "rates", dict(action="append", type=float, help="poisoning rate; repeat per backdoor")),
    ("--seed", "seed", dict(type=int)),
    ("--classes", "classes", dict(type=lambda s: [c.strip() for c in s.split(",")],
                                  help="comma-separated class names in index order")),
    ("--num-classes", "num_classes", dict(type=int)),
    ("--semitones", "pbsm.semitones", dict(type=int)),
    ("--segment-ms", "pbsm.segment_ms", dict(type=float)),
    ("--anchor", "pbsm.anchor", dict(choices=["end", "start"])),
    ("--tone-hz", "pbsm.signal.frequency_hz", dict(type=float)),
    ("--tone-ms", "pbsm.signal.duration_ms", dict(type=float)),
    ("--amplitude-ratio", "pbsm.signal.amplitude_ratio", dict(type=float)),
    ("--fade-ms", "pbsm.signal.fade_ms", dict(type=float)),
    ("--frame-size", "pbsm.stft.frame_size", dict(type=int)),
    ("--hop", "pbsm.stft.hop", dict(type=int)),
    ("--window", "pbsm.stft.window", dict()),
    ("--embeddings", "vsvc.embeddings", dict()),
    ("--timbre", "vsvc.timbres", dict(action="append")),
    ("--transform-table", "vsvc.transform_table", dict()),
    ("--objective", "vsvc.objective", dict(choices=["maxmin", "maxsum"])),
    ("--backend", "vsvc.backend", dict(help="'builtin' or a converter command line")),
]


def _dest(flag):
    return "plan_" + flag.lstrip("-").replace("-", "_")


def _add_plan_flags(p):
    g = p.add_argument_group("plan")
    g.add_argument("--plan", help=f"plan file (JSON or YAML); default ${PLAN_ENV_VAR}")
    for flag, _, kwargs in _PLAN_FLAGS:
        g.add_argument(flag, dest=_dest(flag), default=None, **kwargs)
    g.add_argument("--include-target-in-asr", action="store_true",
                   help="count target-class test clips toward ASR")
    g.add_argument("--set", dest="plan_set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any plan key, e.g. pbsm.signal.fade_ms=10")


def _plan_from_args(args, extra=None):
    overrides = dict(extra or {})
    for flag, key, _ in _PLAN_FLAGS:
        value = getattr(args, _dest(flag), None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "include_target_in_asr", False):
        overrides["exclude_target_from_asr"] = False
    for item in args.plan_set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = parse_yaml(raw)
    return load_plan(args.plan, overrides)


def _jobs_default():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_trigger(args):
    trigger = "vsvc" if args.vsvc else "pbsm"
    plan = _plan_from_args(args, {"trigger": trigger, "targets": [0], "rates": [1.0]})
    record = RunRecord(args.command_line, plan.digest(), plan.seed)
    clip = load_wav(args.input)
    if trigger == "pbsm":
        result = run_pbsm(clip, plan.pbsm)
        save_wav(result.audio, args.output)
        print(f"pitch_ratio={estimate_pitch_ratio(clip, result.boosted):.4f}")
        print(f"segment_end={result.segment_end}")
        print(f"insert_index={result.insert_at}")
        print(f"tone_rms={result.tone_rms:.6f}")
        print(f"peak_overage={result.peak_overage:.6f}")
    else:
        t = _single_transform(args, plan)
        save_wav(convert_voice(clip, t, plan.pbsm.stft), args.output)
        for k, v in t.meta().items():
            print(f"{k}={v}")
    record.close().emit(args.run_record)
    return EXIT_OK


def _single_transform(args, plan):
    vs = plan.vsvc
    if vs.embeddings and not vs.timbres:
        emb = load_embeddings(vs.embeddings)
        m = args.num_timbres or 2
        if not 2 <= m <= len(emb):
            raise UsageError(f"--num-timbres must be in [2, {len(emb)}]")
        transforms = assign_transforms(greedy_select(similarity_matrix(emb), m, vs.objective),
                                       vs.transform_table, vs.backend)
    else:
        ids = list(vs.timbres) or ["timbre_1"]
        transforms = assign_transforms(ids, vs.transform_table, vs.backend)
    if vs.timbres:
        transforms = [t for t in transforms if t.timbre_id == vs.timbres[0]] or transforms
    t = transforms[0]
    if args.warp_alpha is not None or args.pitch_offset is not None:
        t = TimbreTransform(
            t.timbre_id,
            args.warp_alpha if args.warp_alpha is not None else t.warp_alpha,
            args.pitch_offset if args.pitch_offset is not None else t.pitch_offset_semitones,
            t.backend,
        )
    return t


def cmd_select_timbres(args):
    emb = load_embeddings(args.embeddings)
    if not 2 <= args.num_timbres <= len(emb):
        raise UsageError(f"-M must be in [2, {len(emb)}] for {len(emb)} candidates, got {args.num_timbres}")
    sim = similarity_matrix(emb)
    picked = greedy_select(sim, args.num_timbres, args.objective)
    print("selected," + ",".join(picked))
    if args.matrix_out:
        Path(args.matrix_out).write_text(sim.to_csv())
    else:
        sys.stdout.write(sim.to_csv())
    RunRecord(args.command_line, None, None).close().emit(args.run_record)
    return EXIT_OK


def _load_input_manifest(path, plan):
    return load_manifest(path, plan.classes, plan.num_classes)


def cmd_poison(args):
    plan = _plan_from_args(args)
    record = RunRecord(args.command_line, plan.digest(), plan.seed)
    manifest = _load_input_manifest(args.manifest, plan)
    out_dir = Path(args.out_dir)
    try:
        result = build_poisoned_dataset(manifest, plan, out_dir, args.keep_going, args.jobs)
    except AudioTrojanError as exc:
        out_dir.mkdir(parents=True, exist_ok=True)
        record.close(getattr(exc, "errors", [str(exc)])).emit(out_dir / "run_record.json")
        raise
    record.close(result.errors).emit(out_dir / "run_record.json")
    counts = result.manifest.subsets()
    for subset in sorted(counts):
        print(f"{subset}={len(counts[subset])}")
    print(f"manifest={out_dir / 'manifest.csv'}")
    return EXIT_OK


def cmd_attack_testset(args):
    plan = _plan_from_args(args)
    record = RunRecord(args.command_line, plan.digest(), plan.seed)
    manifest = _load_input_manifest(args.manifest, plan)
    out_dir = Path(args.out_dir)
    result = build_attack_testset(manifest, plan, args.variant, out_dir, args.keep_going, args.jobs)
    record.close(result.errors).emit(out_dir / "run_record.json")
    excluded = sum(e.excluded_from_asr for e in result.manifest.entries)
    print(f"triggered={len(result.manifest)}")
    print(f"excluded_from_asr={excluded}")
    print(f"manifest={out_dir / 'manifest.csv'}")
    return EXIT_OK


def cmd_evaluate(args):
    plan = _plan_from_args(args)
    if not (args.benign_manifest or args.attack_manifest):
        raise UsageError("give --benign-manifest and/or --attack-manifest")
    metrics = MetricsReport()
    k = plan.num_classes or (len(plan.classes) if plan.classes else None)
    if args.benign_manifest:
        if not args.benign_preds:
            raise UsageError("--benign-manifest needs --benign-preds")
        manifest = _load_input_manifest(args.benign_manifest, plan)
        metrics.benign_accuracy = benign_accuracy(load_predictions(args.benign_preds, k), manifest)
    if args.attack_manifest:
        if not args.attack_preds:
            raise UsageError("--attack-manifest needs --attack-preds")
        attack = load_poisoned_manifest(args.attack_manifest)
        metrics = metrics.merge(attack_success_rate(load_predictions(args.attack_preds, k), attack, plan))
    sys.stdout.write(report(metrics, args.format))
    RunRecord(args.command_line, plan.digest(), plan.seed).close().emit(args.run_record)
    return EXIT_OK


def cmd_toy_corpus(args):
    manifest = make_toy_corpus(args.out_dir, args.per_class, seed=args.seed, prefix=args.prefix)
    print(f"clips={len(manifest)}")
    print(f"manifest={Path(args.out_dir) / 'manifest.csv'}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="audiotrojan", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("trigger", help="apply one trigger to a single WAV file")
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--pbsm", action="store_true", help="pitch boosting + masked tone")
    kind.add_argument("--vsvc", action="store_true", help="timbre conversion")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--warp-alpha", type=float, help="builtin converter envelope warp factor")
    p.add_argument("--pitch-offset", type=int, help="builtin converter pitch offset in semitones")
    p.add_argument("--num-timbres", type=int, help="timbres to select from --embeddings")
    p.add_argument("--run-record", help="write the run record here instead of stderr")
    _add_plan_flags(p)
    p.set_defaults(func=cmd_trigger)

    p = sub.add_parser("select-timbres", help="farthest-first timbre selection from embeddings")
    p.add_argument("embeddings", help="CSV with header id,v0,...,v{d-1}")
    p.add_argument("-M", "--num-timbres", type=int, required=True)
    p.add_argument("--objective", choices=["maxmin", "maxsum"], default="maxmin")
    p.add_argument("--matrix-out", help="write the distance matrix CSV here instead of stdout")
    p.add_argument("--run-record")
    p.set_defaults(func=cmd_select_timbres)

    for name, func, helptext in (("poison", cmd_poison, "build a poisoned training set"),
                                 ("attack-testset", cmd_attack_testset, "build a triggered test set")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("manifest", help="CSV with header sample_id,path,label")
        p.add_argument("out_dir")
        if name == "attack-testset":
            p.add_argument("--variant", choices=["full", "pitch-only"], default="full")
        p.add_argument("--keep-going", action="store_true", help="skip unreadable files instead of failing")
        p.add_argument("--jobs", type=int, default=_jobs_default())
        _add_plan_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="benign accuracy and attack success rate")
    p.add_argument("--benign-manifest")
    p.add_argument("--benign-preds")
    p.add_argument("--attack-manifest")
    p.add_argument("--attack-preds")
    p.add_argument("--format", choices=FORMATS, default="text")
    p.add_argument("--run-record")
    _add_plan_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("toy-corpus", help="write the synthetic 10-class demo corpus")
    p.add_argument("out_dir")
    p.add_argument("--per-class", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix", default="")
    p.set_defaults(func=cmd_toy_corpus)
    return parser


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.command_line = ["audiotrojan", *argv]
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"audiotrojan {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AudioTrojanError as exc:
        print(f"audiotrojan {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"audiotrojan {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
