"""Feature files, carved objects and histograms.

Feature files are UTF-8 text.  Lines starting with ``#`` are headers; every
other line is ``PATH<TAB>FEATURE<TAB>CONTEXT``.  Bytes that are not valid
UTF-8, and the delimiters TAB, LF, CR and backslash, are written as ``\\xHH``.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .forensic_path import ForensicPath, format_path
from .sbuf import SBuf

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_CONTEXT_WINDOW = 16

_FORCED = {0x09: "\\x09", 0x0A: "\\x0A", 0x0D: "\\x0D", 0x5C: "\\x5C"}
_ESCAPE_RE = re.compile(r"\\x([0-9A-F]{2})")


class StorageError(OSError):
    """Findings could not be written.  Always fatal to a run."""


def escape_bytes(raw: bytes) -> str:
    out = []
    i = 0
    n = len(raw)
    while i < n:
        try:
            text = raw[i:].decode("utf-8")
        except UnicodeDecodeError as e:
            text = raw[i : i + e.start].decode("utf-8")
            bad_end = i + e.end
        else:
            bad_end = None
        for ch in text:
            o = ord(ch)
            if o < 0x80 and o in _FORCED:
                out.append(_FORCED[o])
            elif o < 0x20 or o == 0x7F:
                out.append(f"\\x{o:02X}")
            else:
                out.append(ch)
        if bad_end is None:
            break
        i += len(text.encode("utf-8"))
        for b in raw[i:bad_end]:
            out.append(f"\\x{b:02X}")
        i = bad_end
    return "".join(out)


def unescape_bytes(text: str) -> bytes:
    out = bytearray()
    pos = 0
    for m in _ESCAPE_RE.finditer(text):
        out += text[pos : m.start()].encode("utf-8")
        out.append(int(m.group(1), 16))
        pos = m.end()
    out += text[pos:].encode("utf-8")
    return bytes(out)


def utf16_variant(raw: bytes) -> str | None:
    """'utf-16-le' or 'utf-16-be' when ``raw`` looks like UTF-16 text."""
    n = len(raw)
    if n < 4 or n % 2:
        return None
    units = n // 2
    if sum(1 for i in range(1, n, 2) if raw[i] == 0) > 0.9 * units:
        return "utf-16-le"
    if sum(1 for i in range(0, n, 2) if raw[i] == 0) > 0.9 * units:
        return "utf-16-be"
    return None


def feature_text(raw: bytes) -> bytes:
    """Feature column bytes: UTF-16 features become UTF-8, others pass through."""
    enc = utf16_variant(raw)
    if enc is None:
        return raw
    try:
        return raw.decode(enc).encode("utf-8")
    except UnicodeDecodeError:
        return raw


def _as_bytes(v) -> bytes:
    if isinstance(v, str):
        return v.encode("utf-8")
    return bytes(v)


@dataclass(frozen=True)
class HistogramDef:
    recorder: str
    case_fold: bool = True
    suffix: str = "histogram"

    @property
    def filename(self) -> str:
        return f"{self.recorder}_{self.suffix}.txt"


class FeatureRecorder:
    """Append-only sink for one feature file."""

    def __init__(self, name: str, outdir, carve_mode: int = 0, context_window: int = DEFAULT_CONTEXT_WINDOW):
        if carve_mode not in (0, 1, 2):
            raise ValueError(f"carve mode must be 0, 1 or 2, got {carve_mode}")
        self.name = name
        self.outdir = Path(outdir)
        self.carve_mode = carve_mode
        self.context_window = context_window
        self.histograms: list[HistogramDef] = []
        self.count = 0
        self.carved = 0
        self._lock = threading.Lock()
        self.file_path = self.outdir / f"{name}.txt"
        try:
            self._fh = open(self.file_path, "w", encoding="utf-8", newline="\n")
            self._fh.write(f"# bulkscan {__version__}\n")
            self._fh.write(f"# feature_recorder: {name}\n")
            self._fh.write(f"# feature_file_version: {FORMAT_VERSION}\n")
        except OSError as e:
            raise StorageError(f"cannot create feature file {self.file_path}: {e}") from e

    @property
    def carve_dir(self) -> Path:
        return self.outdir / self.name

    def record(self, path: ForensicPath | str, feature, context=b"") -> None:
        feature = _as_bytes(feature)
        if not feature:
            raise ValueError("feature must be nonempty")
        if not isinstance(path, str):
            path = format_path(path)
        row = f"{path}\t{escape_bytes(feature_text(feature))}\t{escape_bytes(_as_bytes(context))}\n"
        with self._lock:
            try:
                self._fh.write(row)
            except (OSError, ValueError) as e:
                raise StorageError(f"write to {self.file_path} failed: {e}") from e
            self.count += 1

    def record_at(self, sbuf: SBuf, start: int, length: int) -> bool:
        """Record ``sbuf[start:start+length]`` with its surrounding context.

        Features starting in the page margin are dropped; the next page
        reports them.
        """
        if start >= sbuf.page_len:
            return False
        if length <= 0 or start + length > len(sbuf):
            raise ValueError(f"feature [{start}, {start + length}) outside {sbuf!r}")
        w = self.context_window
        c0 = max(0, start - w)
        c1 = min(len(sbuf), start + length + w)
        self.record(sbuf.path.advance(start), sbuf.tobytes(start, length), sbuf.tobytes(c0, c1 - c0))
        return True

    def carve(self, sbuf: SBuf, start: int, length: int, extension: str, mode: int | None = None) -> Path | None:
        """Copy ``sbuf[start:start+length]`` to a file named after its path.

        Mode 0 never writes, mode 1 always writes, mode 2 writes only objects
        found inside decoded data.  Each written object gets one row.
        """
        mode = self.carve_mode if mode is None else mode
        if mode not in (0, 1, 2):
            raise ValueError(f"carve mode must be 0, 1 or 2, got {mode}")
        if start < 0 or length <= 0 or start + length > len(sbuf):
            raise ValueError(f"carve range [{start}, {start + length}) outside {sbuf!r}")
        if start >= sbuf.page_len:
            return None
        path = sbuf.path.advance(start)
        text = format_path(path)
        blob = sbuf.tobytes(start, length)
        if not (mode == 1 or (mode == 2 and path.depth > 0)):
            return None
        target = self.carve_dir / f"{text}.{extension}"
        try:
            self.carve_dir.mkdir(parents=True, exist_ok=True)
            with open(target, "wb") as f:
                f.write(blob)
        except OSError as e:
            raise StorageError(f"cannot write carved object {target}: {e}") from e
        with self._lock:
            self.carved += 1
        self.record(path, f"{self.name}/{target.name}", f"length={length} sha1={hashlib.sha1(blob).hexdigest()}")
        return target

    def close(self) -> None:
        with self._lock:
            if self._fh.closed:
                return
            try:
                self._fh.close()
            except OSError as e:
                raise StorageError(f"cannot close {self.file_path}: {e}") from e


def read_feature_file(path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8", newline="\n") as f:
        for line in f:
            if line.startswith("#"):
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 3:
                raise ValueError(f"{path}: row without exactly 3 columns: {line!r}")
            rows.append((cols[0], cols[1], cols[2]))
    return rows


def fold(value: str) -> str:
    """Case-fold the text of an escaped feature without touching its escapes."""
    raw = unescape_bytes(value)
    return escape_bytes(raw.decode("utf-8", "surrogateescape").casefold().encode("utf-8", "surrogateescape"))


def histogram_counts(values, case_fold: bool) -> list[tuple[int, str]]:
    counts = Counter(fold(v) if case_fold else v for v in values)
    return sorted(((n, v) for v, n in counts.items()), key=lambda t: (-t[0], t[1]))


def write_histogram(rec: FeatureRecorder, hdef: HistogramDef) -> Path:
    try:
        rows = read_feature_file(rec.file_path)
    except OSError as e:
        raise StorageError(f"cannot reread {rec.file_path}: {e}") from e
    out = rec.outdir / hdef.filename
    try:
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"# bulkscan {__version__}\n")
            f.write(f"# histogram of {rec.name} case_fold={int(hdef.case_fold)}\n")
            for n, value in histogram_counts((r[1] for r in rows), hdef.case_fold):
                f.write(f"n={n}\t{value}\n")
    except OSError as e:
        raise StorageError(f"cannot write histogram {out}: {e}") from e
    return out


def read_histogram(path) -> list[tuple[int, str]]:
    out = []
    with open(path, encoding="utf-8", newline="\n") as f:
        for line in f:
            if line.startswith("#"):
                continue
            count, value = line.rstrip("\n").split("\t", 1)
            out.append((int(count.removeprefix("n=")), value))
    return out


@dataclass
class RecorderSet:
    """The recorders of one run, keyed by name."""

    outdir: Path
    recorders: dict[str, FeatureRecorder] = field(default_factory=dict)

    def create(self, name: str, carve_mode: int = 0, context_window: int = DEFAULT_CONTEXT_WINDOW) -> FeatureRecorder:
        if name in self.recorders:
            return self.recorders[name]
        rec = FeatureRecorder(name, self.outdir, carve_mode, context_window)
        self.recorders[name] = rec
        return rec

    def __getitem__(self, name: str) -> FeatureRecorder:
        return self.recorders[name]

    def __contains__(self, name: str) -> bool:
        return name in self.recorders

    def counts(self) -> dict[str, int]:
        return {name: r.count for name, r in sorted(self.recorders.items())}

    def close(self) -> None:
        for r in self.recorders.values():
            r.close()

    def finalize_histograms(self) -> list[Path]:
        """Close every recorder and write its histograms.  Single-threaded;
        call only once scanning has stopped."""
        self.close()
        written = []
        for rec in self.recorders.values():
            for hdef in rec.histograms:
                written.append(write_histogram(rec, hdef))
        return written


def ensure_empty_outdir(outdir) -> Path:
    p = Path(outdir)
    if p.exists():
        if not p.is_dir() or any(os.scandir(p)):
            raise FileExistsError(f"output directory {p} exists and is not empty")
    else:
        p.mkdir(parents=True)
    return p
