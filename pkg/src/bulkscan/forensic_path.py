"""Forensic paths: addresses of bytes through a chain of decoders.

A path such as ``456596-ZIP-1255117`` reads right to left: byte 1255117 of the
stream produced by inflating the ZIP member whose data begins at byte 456596
of the evidence.  The textual form alternates offsets and uppercase decoder
labels and always ends with an offset.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

_LABEL_RE = re.compile(r"[A-Z0-9]+\Z")

MAX_DEPTH = 7


class PathParseError(ValueError):
    """Malformed forensic path text.  ``position`` is the failing character index."""

    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at position {position} in {text!r}")
        self.text = text
        self.position = position


class PathResolveError(Exception):
    """A path could not be dereferenced against the evidence."""


def valid_label(label: str) -> bool:
    return bool(label) and _LABEL_RE.match(label) is not None and not label.isdigit()


@dataclass(frozen=True)
class ForensicPath:
    """``stream`` holds the (anchor, label) decode steps; ``offset`` is the byte
    position inside the innermost stream."""

    stream: tuple[tuple[int, str], ...] = ()
    offset: int = 0

    @classmethod
    def from_segments(cls, segments: Sequence[tuple[int, str | None]]) -> ForensicPath:
        if not segments:
            raise ValueError("a path needs at least one segment")
        *head, (last_off, last_label) = segments
        if last_label is not None:
            raise ValueError("the final segment must not carry a label")
        for off, label in head:
            if label is None or not valid_label(label):
                raise ValueError(f"bad decoder label {label!r}")
            if off < 0:
                raise ValueError("offsets must be nonnegative")
        if last_off < 0:
            raise ValueError("offsets must be nonnegative")
        return cls(tuple((off, label) for off, label in head), last_off)

    @property
    def segments(self) -> list[tuple[int, str | None]]:
        return [*self.stream, (self.offset, None)]

    @property
    def depth(self) -> int:
        return len(self.stream)

    @property
    def labels(self) -> list[str]:
        return [label for _, label in self.stream]

    def advance(self, n: int) -> ForensicPath:
        if n < 0:
            raise ValueError("cannot advance a path backwards")
        return ForensicPath(self.stream, self.offset + n)

    def extend(self, label: str) -> ForensicPath:
        """Descend into the stream decoded by ``label`` at the current offset."""
        if not valid_label(label):
            raise ValueError(f"decoder label must be uppercase [A-Z0-9]+, got {label!r}")
        return ForensicPath(self.stream + ((self.offset, label),), 0)

    def prefix_text(self) -> str:
        return "-".join(f"{off}-{label}" for off, label in self.stream)

    def __str__(self) -> str:
        return format_path(self)


ROOT = ForensicPath()


def format_path(p: ForensicPath) -> str:
    parts = [f"{off}-{label}" for off, label in p.stream]
    parts.append(str(p.offset))
    return "-".join(parts)


def _parse_offset(tok: str, text: str, pos: int) -> int:
    if not tok:
        raise PathParseError("empty offset", text, pos)
    if not tok.isascii() or not tok.isdigit():
        raise PathParseError(f"non-numeric offset {tok!r}", text, pos)
    if len(tok) > 1 and tok[0] == "0":
        raise PathParseError(f"leading zero in offset {tok!r}", text, pos)
    return int(tok)


def parse_path(text: str) -> ForensicPath:
    if not text:
        raise PathParseError("empty path", text, 0)
    if text.endswith("-"):
        raise PathParseError("trailing separator", text, len(text) - 1)
    tokens = text.split("-")
    positions = []
    pos = 0
    for tok in tokens:
        positions.append(pos)
        pos += len(tok) + 1
    if len(tokens) % 2 == 0:
        raise PathParseError("path must end with an offset", text, positions[-1])
    stream = []
    for i in range(0, len(tokens) - 1, 2):
        off = _parse_offset(tokens[i], text, positions[i])
        label = tokens[i + 1]
        if not valid_label(label):
            raise PathParseError(f"invalid decoder label {label!r}", text, positions[i + 1])
        stream.append((off, label))
    offset = _parse_offset(tokens[-1], text, positions[-1])
    return ForensicPath(tuple(stream), offset)


# A decoder takes the enclosing stream and an anchor offset and returns the
# decoded stream, raising on failure.
Decoder = Callable[[bytes, int], bytes]


def _default_decoders() -> Mapping[str, Decoder]:
    from .scanners import DECODERS

    return DECODERS


def path_print(
    evidence,
    path: ForensicPath | str,
    length: int,
    decoders: Mapping[str, Decoder] | None = None,
    recursive: bool = True,
) -> bytes:
    """Re-read the evidence and return up to ``length`` bytes at ``path``.

    Every labeled segment is re-decoded from scratch, so the result reflects
    the evidence rather than any artifacts of a previous run.
    """
    from .media_reader import EvidenceImage

    if isinstance(path, str):
        path = parse_path(path)
    if length < 0:
        raise ValueError("length must be nonnegative")
    if decoders is None:
        decoders = _default_decoders()
    for i, (_, label) in enumerate(path.stream):
        if label not in decoders:
            raise PathResolveError(f"segment {i}: unknown decoder {label!r}")

    image = evidence if isinstance(evidence, EvidenceImage) else EvidenceImage(evidence, recursive)
    if not path.stream:
        if path.offset >= image.size and not (path.offset == 0 and image.size == 0):
            raise PathResolveError(
                f"segment 0: offset {path.offset} beyond evidence of {image.size} bytes"
            )
        return image.read(path.offset, length)

    first_anchor, _ = path.stream[0]
    try:
        data, anchor = image.file_containing(first_anchor)
    except LookupError as e:
        raise PathResolveError(f"segment 0: {e}") from None
    for i, (off, label) in enumerate(path.stream):
        if i > 0:
            anchor = off
        if anchor >= len(data):
            raise PathResolveError(
                f"segment {i}: anchor {anchor} beyond stream of {len(data)} bytes"
            )
        try:
            data = decoders[label](data, anchor)
        except Exception as e:
            raise PathResolveError(f"segment {i}: {label} decode failed at {anchor}: {e}") from e
    if path.offset >= len(data) and not (path.offset == 0 and not data):
        raise PathResolveError(
            f"segment {path.depth}: offset {path.offset} beyond decoded stream of {len(data)} bytes"
        )
    return bytes(data[path.offset : path.offset + length])


def hexdump(data: bytes, start: int = 0) -> str:
    lines = []
    for i in range(0, len(data), 16):
        chunk = data[i : i + 16]
        hexpart = " ".join(f"{b:02x}" for b in chunk[:8])
        if len(chunk) > 8:
            hexpart += "  " + " ".join(f"{b:02x}" for b in chunk[8:])
        text = "".join(chr(b) if 0x20 <= b < 0x7F else "." for b in chunk)
        lines.append(f"{start + i:08x}  {hexpart:<48}  |{text}|")
    return "\n".join(lines)
