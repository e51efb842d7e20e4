"""``scoremeta`` command line.

Config lookup: ``--config`` flag, then ``$SCOREMETA_CONFIG``, then
``./datasets.json``. Exit status: 0 success, 1 operational failure, 2 usage.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from . import misalign as misalign_mod
from .annotations import ANNOTATION_KINDS
from .convert import ConversionError, load_plugins, run_conversion
from .corpus import FilterSpec, open_corpus
from .definitions import (CONFIG_FILENAME, ConfigError, DefinitionError, detect_installed,
                          load_config)
from .installer import InstallError, install, verify
from .scores import ScoreError, matrix_to_csv, pianoroll_from_matrix

CONFIG_ENV = "SCOREMETA_CONFIG"

log = logging.getLogger("scoremeta")


class CommandError(Exception):
    pass


def _bool_or_unknown(s: str):
    v = s.lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    if v == "unknown":
        return "unknown"
    raise argparse.ArgumentTypeError("expected true, false or unknown")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help=f"path to {CONFIG_FILENAME} (env: {CONFIG_ENV})")
    p.add_argument("--definitions", action="append", metavar="DIR",
                   help="definition directory (repeatable; default: bundled official set)")
    p.add_argument("--plugin", action="append", default=[], metavar="MODULE",
                   help="import a converter plugin module")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _filters() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("filters")
    g.add_argument("--dataset", action="append", help="dataset name (repeatable)")
    g.add_argument("--instrument", action="append",
                   help="song must contain this instrument (repeatable; all must match)")
    g.add_argument("--any-instrument", action="append",
                   help="song must contain at least one of these instruments")
    g.add_argument("--ensemble", type=_bool_or_unknown, help="true | false | unknown")
    g.add_argument("--composer", help="case-insensitive substring of the composer name")
    g.add_argument("--ground-truth", action="append", metavar="KIND[:LEVEL]",
                   help=f"required annotation kind, one of {', '.join(ANNOTATION_KINDS)}")
    return p


def build_parser() -> argparse.ArgumentParser:
    common, filters = _common(), _filters()
    parser = argparse.ArgumentParser(prog="scoremeta",
                                     description="Federated audio/score dataset collection tool")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("install", parents=[common], help="download and install datasets")
    p.add_argument("names", nargs="*", metavar="NAME")
    p.add_argument("--all", action="store_true")
    p.add_argument("--allow-shell", action="store_true",
                   help="permit shell steps from install recipes")

    p = sub.add_parser("convert", parents=[common], help="convert source annotations")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--dataset")
    g.add_argument("--all", action="store_true")

    sub.add_parser("list", parents=[common, filters], help="list songs matching filters")

    p = sub.add_parser("export", parents=[common, filters], help="export the filtered view")
    p.add_argument("--format", choices=["json"], default="json")
    p.add_argument("--out", help="write to file instead of stdout")

    p = sub.add_parser("score", parents=[common], help="render a note matrix or pianoroll")
    p.add_argument("--song", required=True, metavar="DATASET:INDEX")
    p.add_argument("--type", default="precise_alignment", metavar="KIND[,KIND]")
    p.add_argument("--format", choices=["matrix-csv", "pianoroll-npy-like"], default="matrix-csv")
    p.add_argument("--frame-rate", type=float, default=100.0)
    p.add_argument("--out", help="output file (required for pianoroll)")

    p = sub.add_parser("misalign", help="train or apply the misalignment model")
    msub = p.add_subparsers(dest="action", metavar="ACTION")
    t = msub.add_parser("train", parents=[common, filters])
    t.add_argument("--out", required=True)
    t.add_argument("--bins", type=int, default=misalign_mod.N_BINS)
    a = msub.add_parser("apply", parents=[common, filters])
    a.add_argument("--model", required=True)
    a.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("verify", parents=[common], help="check installed files exist")
    p.add_argument("names", nargs="*", metavar="NAME")
    p.add_argument("--all", action="store_true")
    return parser


def resolve_config_path(flag: str | None) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get(CONFIG_ENV)
    if env:
        return Path(env)
    return Path.cwd() / CONFIG_FILENAME


def _corpus(args):
    config = load_config(resolve_config_path(args.config), args.definitions or ())
    return open_corpus(config)


def _spec(args) -> FilterSpec:
    return FilterSpec.build(datasets=args.dataset, instruments=args.instrument,
                            any_instruments=args.any_instrument, ensemble=args.ensemble,
                            composer=args.composer, ground_truth=args.ground_truth)


def _emit(args, payload, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2))
    elif text:
        print(text)


def _names(args, corpus) -> list[str]:
    if args.all:
        return [d.name for d in corpus.definitions]
    if not args.names:
        raise CommandError("name at least one dataset or pass --all")
    return args.names


def cmd_install(args) -> int:
    corpus = _corpus(args)
    report = install(_names(args, corpus), corpus.config, corpus.definitions,
                     allow_shell=args.allow_shell)
    _emit(args, report.to_dict(),
          "\n".join(f"{r.name}: {r.status}" + (f" ({r.message})" if r.message else "")
                    for r in report.results))
    return 0 if report.ok else 1


def cmd_convert(args) -> int:
    corpus = _corpus(args)
    defs = corpus.definitions if args.all else [corpus.definition(args.dataset)]
    if args.all:
        present = detect_installed(corpus.config, defs)
        defs = [d for d in defs if d.install.converter and present[d.name]]
    reports = [run_conversion(d, corpus.config) for d in defs]
    _emit(args, [r.to_dict() for r in reports],
          "\n".join(f"{r.dataset}: {r.n_written} written, {r.n_failed} failed" for r in reports))
    return 0 if all(r.n_failed == 0 for r in reports) else 1


def cmd_list(args) -> int:
    view = _corpus(args).filter(_spec(args))
    records = view.records()
    lines = [f"{r['dataset']}:{r['index']}\t{r['composer']}\t{','.join(r['instruments'])}"
             f"\t{r['title'] or ''}" for r in records]
    _emit(args, records, "\n".join(lines))
    return 0


def cmd_export(args) -> int:
    records = _corpus(args).filter(_spec(args)).records()
    text = json.dumps(records, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_score(args) -> int:
    corpus = _corpus(args)
    dataset, _, index = args.song.rpartition(":")
    if not dataset or not index.isdigit():
        raise CommandError("--song must look like DATASET:INDEX")
    pos = corpus.locate(dataset, int(index))
    mat = corpus.get_score(pos, [k.strip() for k in args.type.split(",") if k.strip()])
    if args.format == "matrix-csv":
        text = matrix_to_csv(mat)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return 0
    if not args.out:
        raise CommandError("pianoroll export needs --out")
    roll = pianoroll_from_matrix(mat, args.frame_rate)
    Path(args.out).write_bytes(roll.to_bytes())
    _emit(args, {"out": args.out, "shape": list(roll.matrix.shape), "frame_rate": roll.frame_rate},
          f"wrote {args.out} ({roll.matrix.shape[0]}x{roll.matrix.shape[1]})")
    return 0


def cmd_misalign(args) -> int:
    view = _corpus(args).filter(_spec(args))
    if args.action == "train":
        model = misalign_mod.train(view, bins=args.bins)
        model.save(args.out)
        _emit(args, {"out": args.out, **model.metadata},
              f"trained on {model.metadata['n_pieces']} pieces, wrote {args.out}")
        return 0
    model = misalign_mod.MisalignmentModel.load(args.model)
    report = misalign_mod.apply_misalignment(view, model, args.seed)
    _emit(args, report.to_dict(),
          f"{len(report.touched)} songs touched, {len(report.failures)} failures")
    return 0 if not report.failures else 1


def cmd_verify(args) -> int:
    corpus = _corpus(args)
    reports = [verify(corpus.definition(n), corpus.config) for n in _names(args, corpus)]
    _emit(args, [r.to_dict() for r in reports],
          "\n".join(f"{r.dataset}: {r.n_checked} checked, {len(r.missing)} missing"
                    + "".join(f"\n  missing {m}" for m in r.missing) for r in reports))
    return 0 if all(r.ok for r in reports) else 1


COMMANDS = {
    "install": cmd_install, "convert": cmd_convert, "list": cmd_list, "export": cmd_export,
    "score": cmd_score, "misalign": cmd_misalign, "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.command == "misalign" and args.action is None:
        print("usage: scoremeta misalign {train,apply} ...", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "verbose", False):
        warnings.simplefilter("ignore")
    try:
        load_plugins(args.plugin)
        return COMMANDS[args.command](args)
    except CommandError as exc:
        print(f"scoremeta: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DefinitionError, ConversionError, InstallError, ScoreError,
            misalign_mod.MisalignmentError, KeyError, OSError, ValueError) as exc:
        print(f"scoremeta: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
