"""Command-line interface.

    bulkscan scan -o OUTDIR [-j N] [-r] [-e NAME] [-x NAME] [-S scanner.var=value] INPUT...
    bulkscan print-path IMAGE PATH [--length N]
    bulkscan list-scanners
    bulkscan version
"""

from __future__ import annotations

import argparse
import difflib
import logging
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .engine import RunConfig, UsageError, run
from .feature_recorder import FORMAT_VERSION, StorageError
from .forensic_path import MAX_DEPTH, PathParseError, PathResolveError, hexdump, parse_path, path_print
from .media_reader import MARGIN, PAGE_SIZE
from .sbuf import InputError
from .scanner_api import ScannerConfigError
from .scanners import builtin_specs, default_scanner_set

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STORAGE = 2

_SIZE_RE = re.compile(r"(\d+)\s*([KMG]i?B?)?\Z", re.IGNORECASE)
_UNITS = {"": 1, "K": 1 << 10, "M": 1 << 20, "G": 1 << 30}


def parse_size(text: str) -> int:
    m = _SIZE_RE.match(text.strip())
    if not m:
        raise argparse.ArgumentTypeError(f"not a size: {text!r}")
    unit = (m.group(2) or "")[:1].upper()
    return int(m.group(1)) * _UNITS[unit]


def carving_recorders() -> list[str]:
    return sorted({name for spec in builtin_specs() for name, mode in spec.recorders.items() if mode})


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kw):
        # prefix matching would let a typo silently select another option
        kw.setdefault("allow_abbrev", False)
        super().__init__(*args, **kw)

    def error(self, message):
        m = re.search(r"unrecognized arguments: (.*)", message)
        if m:
            known = [opt for action in self._all_actions() for opt in action.option_strings]
            for tok in m.group(1).split():
                if tok.startswith("-"):
                    close = difflib.get_close_matches(tok.split("=")[0], known, n=1)
                    if close:
                        message += f" (did you mean {close[0]}?)"
        raise UsageError(f"{self.prog}: {message}")

    def _all_actions(self):
        yield from self._actions
        for action in self._actions:
            if isinstance(action, argparse._SubParsersAction):
                for sub in action.choices.values():
                    yield from sub._actions


@dataclass
class CliInvocation:
    command: str
    config: RunConfig | None = None
    image: Path | None = None
    path: str | None = None
    length: int = 256


def build_parser() -> _Parser:
    p = _Parser(prog="bulkscan", description="Extract features from bulk data with recursive decoding.")
    p.add_argument("--version", action="store_true", help="print version and feature-file format version")
    p.add_argument("--help-scanners", action="store_true", help="list scanners with flags and configuration")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("scan", help="scan evidence and write feature files")
    s.add_argument("inputs", nargs="+", type=Path, help="image files or directories")
    s.add_argument("-o", dest="output_dir", type=Path, required=True, help="output directory (absent or empty)")
    s.add_argument("-j", dest="threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    s.add_argument("-r", dest="recursive", action="store_true", help="recurse into input directories")
    s.add_argument("-e", dest="enable", action="append", default=[], metavar="NAME", help="enable a scanner")
    s.add_argument("-x", dest="disable", action="append", default=[], metavar="NAME", help="disable a scanner")
    s.add_argument("-S", dest="settings", action="append", default=[], metavar="SCANNER.VAR=VALUE",
                   help="set a scanner configuration variable")
    for name in carving_recorders():
        s.add_argument(f"--carve-{name}", dest=f"carve_{name}", type=int, choices=(0, 1, 2), default=None,
                       help=f"carve mode for {name}: 0 never, 1 always, 2 only decoded objects")
    s.add_argument("--page-size", type=parse_size, default=PAGE_SIZE, help="page size (default 16M)")
    s.add_argument("--margin", type=parse_size, default=MARGIN, help="bytes read past each page (default 4M)")
    s.add_argument("--max-depth", type=int, default=MAX_DEPTH, help="recursion depth limit")
    s.add_argument("--recurse-inline-max", type=parse_size, default=4096,
                   help="decoded buffers up to this size are scanned inline")

    pp = sub.add_parser("print-path", help="hexdump the bytes at a forensic path")
    pp.add_argument("image", type=Path)
    pp.add_argument("path")
    pp.add_argument("--length", type=parse_size, default=256)

    sub.add_parser("list-scanners", help="list scanners with flags and configuration")
    sub.add_parser("version", help="print version")
    return p


def parse_args(argv: list[str]) -> CliInvocation:
    ns = build_parser().parse_args(argv)
    if ns.version:
        return CliInvocation("version")
    if ns.help_scanners:
        return CliInvocation("list-scanners")
    if ns.command is None:
        raise UsageError("bulkscan: a subcommand is required (scan, print-path, list-scanners, version)")
    if ns.command == "print-path":
        return CliInvocation("print-path", image=ns.image, path=ns.path, length=ns.length)
    if ns.command != "scan":
        return CliInvocation(ns.command)

    both = set(ns.enable) & set(ns.disable)
    if both:
        raise UsageError(f"bulkscan: scanner(s) both enabled and disabled: {', '.join(sorted(both))}")
    settings = {}
    for item in ns.settings:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise UsageError(f"bulkscan: -S expects scanner.variable=value, got {item!r}")
        settings[key] = value
    carve = {name: getattr(ns, f"carve_{name}") for name in carving_recorders()
             if getattr(ns, f"carve_{name}") is not None}
    config = RunConfig(
        inputs=list(ns.inputs),
        output_dir=ns.output_dir,
        threads=ns.threads,
        page_size=ns.page_size,
        margin=ns.margin,
        max_depth=ns.max_depth,
        recurse_inline_max=ns.recurse_inline_max,
        recursive=ns.recursive,
        carve_modes=carve,
        enable=list(ns.enable),
        disable=list(ns.disable),
        scanner_config=settings,
    )
    try:
        config.validate()
    except UsageError as e:
        raise UsageError(f"bulkscan: {e}") from None
    return CliInvocation("scan", config=config)


def _scan(config: RunConfig, out) -> int:
    report = run(config)
    print(f"bulkscan {__version__}: {report.pages_total} pages in {report.wall_seconds:.2f}s "
          f"with {report.threads} thread(s)", file=out)
    for name, n in report.features.items():
        print(f"  {name}: {n} features", file=out)
    for name, n in report.carved.items():
        print(f"  {name}: {n} carved", file=out)
    print(f"  deduplicated pages: {report.pages_deduped}, repeating pages: {report.pages_ngram_skipped}", file=out)
    if report.scanner_errors:
        print(f"  scanner errors: {report.scanner_errors} (see log)", file=out)
    print(f"  report: {config.output_dir / 'report.json'}", file=out)
    return EXIT_OK


def execute(inv: CliInvocation, out=None) -> int:
    out = out or sys.stdout
    if inv.command == "version":
        print(f"bulkscan {__version__} (feature file format {FORMAT_VERSION})", file=out)
        return EXIT_OK
    if inv.command == "list-scanners":
        print("name\tdefault\tflags\tconfig\tdescription", file=out)
        for line in default_scanner_set().help_lines():
            print(line, file=out)
        return EXIT_OK
    if inv.command == "print-path":
        path = parse_path(inv.path)
        data = path_print(inv.image, path, inv.length)
        if data:
            print(hexdump(data), file=out)
        return EXIT_OK
    return _scan(inv.config, out)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    argv = sys.argv[1:] if argv is None else argv
    try:
        inv = parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    try:
        return execute(inv)
    except StorageError as e:
        print(f"bulkscan: storage failure: {e}", file=sys.stderr)
        return EXIT_STORAGE
    except (UsageError, ScannerConfigError, PathParseError, PathResolveError, InputError, FileExistsError) as e:
        print(f"bulkscan: {e}", file=sys.stderr)
        return EXIT_USAGE
