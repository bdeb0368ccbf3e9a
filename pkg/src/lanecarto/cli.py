"""Command line interface: ``lanecarto gen|build|eval|export``.

Exit codes: 0 success (warnings included), 1 validation or usage error,
2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .evaluation import AssociationError, Gate
from .export import FORMATS, ExportFormatError, export
from .pipeline import ConfigError, HDMapDocument, ProvenanceError, load_config, run_build, run_eval
from .skeleton import NetworkValidationError, OSMParseError
from .synthetic import SpecError, generate, load_spec
from .truth import GroundTruth

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
SEED_ENV = "LANECARTO_SEED"

log = logging.getLogger("lanecarto")

VALIDATION_ERRORS = (
    ConfigError,
    SpecError,
    ProvenanceError,
    AssociationError,
    ExportFormatError,
    OSMParseError,
    NetworkValidationError,
    json.JSONDecodeError,
    KeyError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so usage errors map to the validation exit code."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed_override() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def cmd_gen(args) -> int:
    spec = load_spec(args.spec)
    bundle = generate(spec)
    paths = bundle.write(args.output)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_build(args) -> int:
    cfg = load_config(args.config, seed_override=_seed_override())
    out = args.output or (str(cfg.output / "map.json") if cfg.output is not None else None)
    doc = run_build(cfg)
    for w in doc.warnings:
        log.warning("%s", w)
    _write(doc.dumps() + "\n", out)
    return EXIT_OK


def cmd_eval(args) -> int:
    doc = HDMapDocument.load(args.map)
    truth = GroundTruth.load(args.truth)
    report = run_eval(doc, truth, Gate(args.gate_iou, args.gate_rms), args.rectify, args.force)
    _write(json.dumps(report, sort_keys=True, indent=2) + "\n", args.output)
    return EXIT_OK


def cmd_export(args) -> int:
    doc = HDMapDocument.load(args.map)
    _write(export(doc, args.format), args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lanecarto", description="Lane-level HD map reconstruction.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic scenario bundle")
    g.add_argument("spec", help="scenario spec (JSON)")
    g.add_argument("-o", "--output", required=True, help="output directory")
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("build", help="build a map document from a config file")
    b.add_argument("-c", "--config", required=True, help="TOML config")
    b.add_argument("-o", "--output", help="map document path (default: <paths.output>/map.json or stdout)")
    b.set_defaults(func=cmd_build)

    e = sub.add_parser("eval", help="evaluate a map document against ground truth")
    e.add_argument("map")
    e.add_argument("truth")
    e.add_argument("--gate-iou", type=float, default=0.7)
    e.add_argument("--gate-rms", type=float, default=0.2)
    e.add_argument("--rectify", action="store_true", help="rigidly align the map to the truth first")
    e.add_argument("--force", action="store_true", help="evaluate documents without provenance")
    e.add_argument("-o", "--output", help="report path (default: stdout)")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="convert a map document")
    x.add_argument("map")
    x.add_argument("--format", required=True, choices=FORMATS)
    x.add_argument("-o", "--output", help="output path (default: stdout)")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
