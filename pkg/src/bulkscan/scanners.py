"""Built-in scanners: email and url recognizers, gzip/zip/base64 decoders that
recurse into what they decode, and the jpeg carver.

Decoders search for their magic with ``SBuf.find``, validate in place at the
hit offset and only build a child buffer for a confirmed stream.
"""

from __future__ import annotations

import base64
import binascii
import re
import struct
import zlib

from .feature_recorder import HistogramDef
from .sbuf import SBuf, SBufRangeError
from .scanner_api import Flag, ScannerSet, ScannerSpec, ScanParams

MAX_DECODED = 256 * 1024 * 1024
MAX_JPEG = 64 * 1024 * 1024
BASE64_MIN_RUN = 128

_SKIP_SEEN = frozenset({Flag.NO_DUPLICATES, Flag.NO_NGRAM_PAGES})


# lexical recognizers

EMAIL_RE = re.compile(
    rb"(?<![A-Za-z0-9._%+-])[A-Za-z0-9._%+-]+@(?:[A-Za-z0-9-]+\.)+[A-Za-z]{2,16}(?![A-Za-z0-9])"
)
URL_RE = re.compile(rb"(?<![A-Za-z0-9])(?:https?|ftp)://[A-Za-z0-9\-._~:/?#\[\]@!$&()*+,;=%]+")

# Byte classes for UTF-16 run finding: printable ASCII, zero, anything else.
# A run of n LE units is "pz" * n in class space, which str.find locates
# far faster than a regex tried at every offset.
_CLASS = bytes(
    ord("p") if 0x20 <= b <= 0x7E else ord("z") if b == 0 else ord("x") for b in range(256)
)
_MIN_UNITS = 6


def _class_runs(classes: str, unit: str, phase: int) -> list[tuple[int, int, int]]:
    first = unit * _MIN_UNITS
    out = []
    pos = classes.find(first)
    while pos >= 0:
        end = pos + len(first)
        while classes.startswith(unit, end):
            end += 2
        out.append((pos, end, phase))
        pos = classes.find(first, end)
    return out


def utf16_runs(data) -> list[tuple[int, int, int]]:
    """(start, end, phase) of runs of 6 or more zero-interleaved printable
    ASCII units; phase 0 is LE.

    A LE run seen one byte off is also a BE run; of two overlapping runs the
    longer one wins, LE on a tie.
    """
    classes = bytes(data).translate(_CLASS).decode("ascii")
    runs = sorted(_class_runs(classes, "pz", 0) + _class_runs(classes, "zp", 1))
    out: list[tuple[int, int, int]] = []
    for r in runs:
        if out and r[0] < out[-1][1]:
            prev = out[-1]
            if (r[1] - r[0]) > (prev[1] - prev[0]):
                out[-1] = r
            continue
        out.append(r)
    return out


_EMAIL_LOCAL = frozenset(b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789._%+-")


def _email_finditer(data):
    """Same matches as ``EMAIL_RE.finditer`` but only tried where an '@' is.

    Every match starts at the beginning of the local-part run before its
    '@' (the lookbehind forbids starting mid-run), so that is the only
    offset worth trying.
    """
    last_end = 0
    at = data.find(b"@")
    while at >= 0:
        start = at
        while start > 0 and data[start - 1] in _EMAIL_LOCAL:
            start -= 1
        m = EMAIL_RE.match(data, start) if last_end <= start < at else None
        if m:
            yield m
            last_end = m.end()
            at = data.find(b"@", last_end)
        else:
            at = data.find(b"@", at + 1)


def _url_finditer(data):
    """Same matches as ``URL_RE.finditer``, anchored on each '://'."""
    last_end = 0
    sep = data.find(b"://")
    while sep >= 0:
        m = None
        for start in (sep - 5, sep - 4, sep - 3):
            if start >= last_end:
                m = URL_RE.match(data, start)
                if m:
                    break
        if m:
            yield m
            last_end = m.end()
            sep = data.find(b"://", last_end)
        else:
            sep = data.find(b"://", sep + 1)


_FAST_FINDITER = {EMAIL_RE: _email_finditer, URL_RE: _url_finditer}


def lexical_matches(data, pattern: re.Pattern) -> list[tuple[int, int]]:
    """(start, length) of every match, in 8-bit text and in UTF-16 text."""
    finditer = _FAST_FINDITER.get(pattern, pattern.finditer)
    data = bytes(data)
    hits = [(m.start(), m.end() - m.start()) for m in finditer(data)]
    for start, end, phase in utf16_runs(data):
        lo = start + phase
        shadow = data[lo:end:2]
        for m in finditer(shadow):
            s = start + 2 * m.start()
            hits.append((s, 2 * (m.end() - m.start())))
    return hits


def _lexical_scanner(pattern: re.Pattern, recorder: str):
    def scan(params: ScanParams) -> None:
        sbuf = params.sbuf
        rec = params.recorders[recorder]
        for start, length in lexical_matches(sbuf.data, pattern):
            rec.record_at(sbuf, start, length)

    scan.__name__ = f"scan_{recorder}"
    return scan


scan_email = _lexical_scanner(EMAIL_RE, "email")
scan_url = _lexical_scanner(URL_RE, "url")


# gzip

GZIP_MAGIC = b"\x1f\x8b\x08"


def decode_gzip_at(data, offset: int, limit: int = MAX_DECODED) -> bytes:
    """Inflate the gzip member starting at ``offset``.  Truncated streams yield
    what could be inflated; a bad header raises."""
    if bytes(data[offset : offset + 3]) != GZIP_MAGIC:
        raise ValueError(f"no gzip magic at {offset}")
    if len(data) - offset < 10 or data[offset + 3] & 0xE0:
        raise ValueError(f"bad gzip header at {offset}")
    d = zlib.decompressobj(31)
    out = d.decompress(memoryview(data)[offset:], limit)
    if not out:
        raise ValueError(f"gzip stream at {offset} decoded to nothing")
    return out


def scan_gzip(params: ScanParams) -> None:
    sbuf = params.sbuf
    limit = params.config.get("max_output", MAX_DECODED)
    pos = sbuf.find(GZIP_MAGIC, 0, sbuf.page_len + 2)
    data = sbuf.data
    while 0 <= pos < sbuf.page_len:
        try:
            out = decode_gzip_at(data, pos, limit)
        except (ValueError, zlib.error):
            out = None
        if out:
            params.recurse(sbuf.new_decoded(pos, "GZIP", out))
        pos = sbuf.find(GZIP_MAGIC, pos + 1, sbuf.page_len + 2)


# zip

ZIP_MAGIC = b"PK\x03\x04"
_LFH = struct.Struct("<4sHHHHHIIIHH")
LFH_SIZE = _LFH.size  # 30


class LocalHeader:
    __slots__ = ("offset", "flags", "method", "crc", "csize", "usize", "name", "extra_len", "data_start")

    def __init__(self, offset, flags, method, crc, csize, usize, name, extra_len):
        self.offset = offset
        self.flags = flags
        self.method = method
        self.crc = crc
        self.csize = csize
        self.usize = usize
        self.name = name
        self.extra_len = extra_len
        self.data_start = offset + LFH_SIZE + len(name) + extra_len


def parse_local_header(data, offset: int) -> LocalHeader:
    if len(data) - offset < LFH_SIZE:
        raise ValueError(f"truncated local header at {offset}")
    magic, _ver, flags, method, _t, _d, crc, csize, usize, nlen, elen = _LFH.unpack_from(data, offset)
    if magic != ZIP_MAGIC:
        raise ValueError(f"no local header at {offset}")
    if method not in (0, 8):
        raise ValueError(f"unsupported compression method {method}")
    name_end = offset + LFH_SIZE + nlen
    if name_end + elen > len(data):
        raise ValueError(f"local header at {offset} runs past the buffer")
    name = bytes(data[offset + LFH_SIZE : name_end])
    return LocalHeader(offset, flags, method, crc, csize, usize, name, elen)


def decode_zip_member(data, hdr: LocalHeader, limit: int = MAX_DECODED) -> bytes:
    start = hdr.data_start
    if hdr.method == 0:
        if hdr.csize == 0 or start + hdr.csize > len(data):
            raise ValueError(f"stored member at {hdr.offset} is empty or truncated")
        return bytes(data[start : start + min(hdr.csize, limit)])
    d = zlib.decompressobj(-15)
    out = d.decompress(memoryview(data)[start:], limit)
    if not out:
        raise ValueError(f"deflate stream at {start} decoded to nothing")
    return out


def decode_zip_at(data, data_start: int, limit: int = MAX_DECODED) -> bytes:
    """Decode the member whose data begins at ``data_start``.

    The member's local header lies before the data; look backwards for a
    header whose name and extra fields end exactly at ``data_start``.
    """
    lo = max(0, data_start - LFH_SIZE - 0xFFFF - 0xFFFF)
    mv = memoryview(data)
    pos = bytes(data[lo:data_start]).rfind(ZIP_MAGIC)
    while pos >= 0:
        off = lo + pos
        try:
            hdr = parse_local_header(mv, off)
        except (ValueError, struct.error):
            hdr = None
        if hdr is not None and hdr.data_start == data_start:
            return decode_zip_member(mv, hdr, limit)
        pos = bytes(data[lo:off]).rfind(ZIP_MAGIC)
    raise ValueError(f"no zip local header ends at {data_start}")


def scan_zip(params: ScanParams) -> None:
    sbuf = params.sbuf
    limit = params.config.get("max_output", MAX_DECODED)
    rec = params.recorders["zip"]
    data = sbuf.data
    pos = sbuf.find(ZIP_MAGIC, 0, sbuf.page_len + 3)
    while 0 <= pos < sbuf.page_len:
        try:
            hdr = parse_local_header(data, pos)
        except ValueError:
            hdr = None
        if hdr is not None:
            if hdr.name:
                rec.record(
                    sbuf.path.advance(pos),
                    hdr.name,
                    f"method={hdr.method} compressed_size={hdr.csize} uncompressed_size={hdr.usize} "
                    f"crc32={hdr.crc:08x} data_start={hdr.data_start - pos}",
                )
            try:
                out = decode_zip_member(data, hdr, limit)
            except (ValueError, zlib.error):
                out = None
            if out and hdr.data_start < len(sbuf):
                params.recurse(sbuf.new_decoded(hdr.data_start, "ZIP", out))
        pos = sbuf.find(ZIP_MAGIC, pos + 1, sbuf.page_len + 3)


# base64

_B64_CHARS = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/=\r\n"
_B64_CLASS = bytes(ord("b") if b in _B64_CHARS else ord(".") for b in range(256))
_B64_LINE = re.compile(rb"[A-Za-z0-9+/]*={0,2}\Z")
_BLANK_LINE = re.compile(rb"\r?\n\r?\n")
_B64_EXTENT = re.compile(rb"[A-Za-z0-9+/=\r\n]*")


def _b64_block(block: bytes, min_run: int) -> bytes | None:
    """Decode one paragraph of base64 text, or None if it is not one."""
    lines = block.replace(b"\r\n", b"\n").rstrip(b"\n").split(b"\n")
    if any(not _B64_LINE.match(ln) for ln in lines):
        return None
    if any(b"=" in ln for ln in lines[:-1]):
        return None
    width = len(lines[0])
    if width == 0 or any(len(ln) != width for ln in lines[:-1]) or len(lines[-1]) > width:
        return None
    body = b"".join(lines)
    if len(body) < min_run:
        return None
    # single-case runs (hex dumps, "aaaa...") are text, not base64
    if body.upper() == body or body.lower() == body:
        return None
    body = body[: len(body) - len(body) % 4]
    try:
        out = base64.b64decode(body, validate=True)
    except (binascii.Error, ValueError):
        return None
    return out or None


def base64_blocks(data, min_run: int = BASE64_MIN_RUN) -> list[tuple[int, bytes]]:
    """(start, decoded) for every base64 paragraph of at least ``min_run``
    characters with consistent line lengths."""
    data = bytes(data)
    classes = data.translate(_B64_CLASS).decode("ascii")
    needle = "b" * max(min_run, 4)
    out = []
    run_start = classes.find(needle)
    while run_start >= 0:
        run_end = classes.find(".", run_start + len(needle))
        if run_end < 0:
            run_end = len(classes)
        run = data[run_start:run_end]
        pos = 0
        for sep in [*_BLANK_LINE.finditer(run), None]:
            end = sep.start() if sep else len(run)
            block = run[pos:end]
            lead = len(block) - len(block.lstrip(b"\r\n"))
            block = block[lead:]
            if block:
                decoded = _b64_block(block, min_run)
                if decoded:
                    out.append((run_start + pos + lead, decoded))
            if sep:
                pos = sep.end()
        run_start = classes.find(needle, run_end)
    return out


def decode_base64_at(data, offset: int, min_run: int = BASE64_MIN_RUN) -> bytes:
    run = _B64_EXTENT.match(bytes(data[offset : offset + MAX_DECODED * 2])).group()
    sep = _BLANK_LINE.search(run)
    if sep:
        run = run[: sep.start()]
    decoded = _b64_block(run, min_run) if run[:1] not in (b"\r", b"\n") else None
    if not decoded:
        raise ValueError(f"no base64 block at {offset}")
    return decoded


def scan_base64(params: ScanParams) -> None:
    sbuf = params.sbuf
    min_run = params.config.get("min_run", BASE64_MIN_RUN)
    for start, decoded in base64_blocks(sbuf.data, min_run):
        if start < sbuf.page_len:
            params.recurse(sbuf.new_decoded(start, "BASE64", decoded))


# jpeg

JPEG_SOI = b"\xff\xd8\xff"
_STANDALONE = {0x01, *range(0xD0, 0xD8)}


def _jpeg_start_ok(marker: int) -> bool:
    return 0xE0 <= marker <= 0xEF or marker == 0xDB or 0xC0 <= marker <= 0xCF


def jpeg_extent(sbuf: SBuf, start: int, limit: int = MAX_JPEG) -> int | None:
    """Length of the JPEG starting at ``start`` through its EOI, or None."""
    end_cap = min(len(sbuf), start + limit)
    if not _jpeg_start_ok(sbuf.read_u8(start + 3)):
        return None
    pos = start + 2
    try:
        while pos < end_cap:
            if sbuf.read_u8(pos) != 0xFF:
                return None
            marker = sbuf.read_u8(pos + 1)
            while marker == 0xFF:
                pos += 1
                marker = sbuf.read_u8(pos + 1)
            if marker == 0xD9:
                return pos + 2 - start
            if marker in _STANDALONE:
                pos += 2
                continue
            if marker == 0x00 or marker == 0xD8:
                return None
            seglen = sbuf.read_u16be(pos + 2)
            if seglen < 2:
                return None
            pos += 2 + seglen
            if marker != 0xDA:
                continue
            # entropy-coded data runs to the next marker that is not a stuffed
            # zero or a restart
            while True:
                ff = sbuf.find(b"\xff", pos, end_cap)
                if ff < 0:
                    return None
                nxt = sbuf.read_u8(ff + 1)
                if nxt == 0x00 or 0xD0 <= nxt <= 0xD7 or nxt == 0xFF:
                    pos = ff + 1 if nxt == 0xFF else ff + 2
                    continue
                pos = ff
                break
    except SBufRangeError:
        return None
    return None


def scan_jpeg(params: ScanParams) -> None:
    sbuf = params.sbuf
    rec = params.recorders["jpeg"]
    limit = params.config.get("max_size", MAX_JPEG)
    pos = sbuf.find(JPEG_SOI, 0, sbuf.page_len + 2)
    while 0 <= pos < sbuf.page_len:
        try:
            n = jpeg_extent(sbuf, pos, limit)
        except SBufRangeError:
            n = None
        if n:
            rec.carve(sbuf, pos, n, "jpg")
            nxt = pos + n
        else:
            nxt = pos + 1
        pos = sbuf.find(JPEG_SOI, nxt, sbuf.page_len + 2)


DECODERS = {
    "GZIP": decode_gzip_at,
    "ZIP": decode_zip_at,
    "BASE64": decode_base64_at,
}


def builtin_specs() -> list[ScannerSpec]:
    return [
        ScannerSpec(
            "email",
            scan_email,
            "email addresses in 8-bit and UTF-16 text",
            flags=_SKIP_SEEN,
            config={"context_window": 16},
            recorders={"email": 0},
            histograms=(HistogramDef("email", case_fold=True),),
        ),
        ScannerSpec(
            "url",
            scan_url,
            "http, https and ftp URLs in 8-bit and UTF-16 text",
            flags=_SKIP_SEEN,
            config={"context_window": 16},
            recorders={"url": 0},
            histograms=(HistogramDef("url", case_fold=False),),
        ),
        ScannerSpec(
            "gzip",
            scan_gzip,
            "inflates gzip members and rescans their contents",
            flags=_SKIP_SEEN,
            config={"max_output": MAX_DECODED},
        ),
        ScannerSpec(
            "zip",
            scan_zip,
            "records zip local headers, inflates members and rescans them",
            flags=_SKIP_SEEN,
            config={"max_output": MAX_DECODED},
            recorders={"zip": 0},
        ),
        ScannerSpec(
            "base64",
            scan_base64,
            "decodes base64 blocks and rescans them",
            flags=_SKIP_SEEN,
            config={"min_run": BASE64_MIN_RUN},
        ),
        ScannerSpec(
            "jpeg",
            scan_jpeg,
            "carves JPEG images from SOI to EOI",
            flags=_SKIP_SEEN,
            config={"max_size": MAX_JPEG},
            recorders={"jpeg": 1},
        ),
    ]


def default_scanner_set() -> ScannerSet:
    s = ScannerSet()
    for spec in builtin_specs():
        s.register(spec)
    return s
