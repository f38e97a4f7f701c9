"""Fixture builders shared by the test modules."""

from __future__ import annotations

import base64
import gzip
import io
import json
import random
import struct
import zipfile
from pathlib import Path

from bulkscan.engine import RunConfig, run
from bulkscan.feature_recorder import read_feature_file


def make_jpeg(size=(1, 1), color=(200, 30, 30), quality=90) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.new("RGB", size, color).save(buf, "JPEG", quality=quality)
    return buf.getvalue()


def make_zip(members, name_pad=None, extra: bytes = b"", method=zipfile.ZIP_DEFLATED) -> bytes:
    """``members`` is a list of (name, data).  ``extra`` goes in every local header."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name, data in members:
            zi = zipfile.ZipInfo(name, date_time=(2020, 1, 1, 0, 0, 0))
            zi.compress_type = method
            zi.extra = extra
            zf.writestr(zi, data)
    return buf.getvalue()


def zip_member_data_offset(archive: bytes, name: str) -> int:
    """Where a member's data begins, computed from the archive tool's own
    directory entry and the local-header layout."""
    with zipfile.ZipFile(io.BytesIO(archive)) as zf:
        zi = zf.getinfo(name)
        off = zi.header_offset
    nlen, elen = struct.unpack_from("<HH", archive, off + 26)
    return off + 30 + nlen + elen


def zip_member(archive: bytes, name: str) -> bytes:
    with zipfile.ZipFile(io.BytesIO(archive)) as zf:
        return zf.read(name)


def gz(data: bytes, level: int = 9) -> bytes:
    return gzip.compress(data, level, mtime=0)


def b64_mime(data: bytes) -> bytes:
    return b"Content-Type: image/jpeg\r\nContent-Transfer-Encoding: base64\r\n\r\n" + base64.encodebytes(data).replace(
        b"\n", b"\r\n"
    ) + b"\r\n"


def filler(n: int, seed: int = 0) -> bytes:
    """Random bytes that cannot contain a text feature or a decoder magic."""
    rng = random.Random(seed)
    return bytes(rng.choice(b"\x00\x01\x02\x03\xa0\xb0\xc0\xe7") for _ in range(n))


def scan(tmp_path: Path, data_or_path, name="image.raw", **kw):
    """Write ``data`` to a file, scan it and return (outdir, report dict)."""
    if isinstance(data_or_path, (bytes, bytearray)):
        src = tmp_path / name
        src.write_bytes(data_or_path)
    else:
        src = Path(data_or_path)
    out = tmp_path / kw.pop("outname", "out")
    kw.setdefault("threads", 2)
    cfg = RunConfig(inputs=[src], output_dir=out, **kw)
    run(cfg)
    report = json.loads((out / "report.json").read_text())
    return out, report


def rows(outdir: Path, recorder: str):
    p = Path(outdir) / f"{recorder}.txt"
    if not p.exists():
        return []
    return read_feature_file(p)


def sorted_feature_lines(outdir: Path) -> dict[str, list[str]]:
    out = {}
    for p in sorted(Path(outdir).glob("*.txt")):
        lines = [ln for ln in p.read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
        out[p.name] = sorted(lines)
    return out


def mixed_corpus(seed: int = 1) -> bytes:
    """A few hundred KiB with text, gzip, zip, base64 and jpeg content.

    Every embedded object is distinct, so content dedup cannot make the
    output depend on which copy a worker reaches first.
    """
    rng = random.Random(seed)
    parts = []
    for i in range(40):
        jpg = make_jpeg((8, 8), (10 + 5 * i, 200 - 3 * i, seed % 256))
        parts.append(filler(rng.randrange(500, 3000), seed + i))
        kind = i % 5
        addr = f"user{i}@host{i % 7}.example.com".encode()
        if kind == 0:
            parts.append(b" mail " + addr + b" and https://site" + str(i).encode() + b".org/p?q=" + str(i).encode() + b" ")
        elif kind == 1:
            parts.append(gz(b"gz text " + addr + b" " + bytes(rng.randrange(256) for _ in range(200))))
            parts.append(gz(jpg))
        elif kind == 2:
            parts.append(make_zip([(f"m{i}.txt", b"zip text " + addr * 3), (f"p{i}.jpg", jpg)]))
        elif kind == 3:
            parts.append(b64_mime(jpg + b" trailer " + addr))
        else:
            parts.append(b"\x00" + " ".join([addr.decode(), "ftp://files.example.net/x"]).encode("utf-16-le"))
    return b"".join(parts)


_WORDS = [b"the", b"report", b"data", b"disk", b"image", b"file", b"mail", b"server", b"from", b"to",
          b"note", b"scan", b"block", b"record", b"system", b"user", b"page", b"value"]


def _line_pool(seed: int = 0, n: int = 4096) -> list[bytes]:
    rng = random.Random(seed)
    lines = []
    for i in range(n):
        line = b" ".join(rng.choices(_WORDS, k=12)) + b"\n"
        if i % 16 == 0:
            line += b"contact u%d@h%d.example.org or http://h%d.example.org/p%d\n" % (i, i % 97, i % 89, i)
        lines.append(line)
    return lines


_LINES = _line_pool()


def text_blob(rng: random.Random, n: int) -> bytes:
    """Compressible prose with the occasional address and link."""
    return b"".join(rng.choices(_LINES, k=n // 60 + 1))[:n]


def scaling_corpus(path: Path, total: int, seed: int = 0, block: int = 1 << 20) -> None:
    """Mixed corpus in ``block``-sized units: 30% compressed members, 10%
    base64, 10% repeated or duplicate blocks, the rest random bytes and text."""
    rng = random.Random(seed)
    written = []
    with open(path, "wb") as f:
        for i in range(total // block):
            kind = i % 10
            if kind < 3:
                data = bytearray()
                while len(data) < block:
                    body = text_blob(rng, 256 * 1024)
                    data += gz(body, 6) if rng.random() < 0.5 else make_zip([(f"m{i}-{len(data)}.txt", body)])
            elif kind == 3:
                data = base64.encodebytes(rng.randbytes(block * 3 // 4))
            elif kind == 4:
                data = rng.choice(written) if written and rng.random() < 0.5 else bytes([rng.randrange(256)]) * block
            else:
                data = rng.randbytes(block // 2) + text_blob(rng, block // 2)
            data = bytes(data[:block]).ljust(block, b"\x00")
            if kind >= 5:
                written.append(data)
            f.write(data)
