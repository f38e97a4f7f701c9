"""Input enumeration and paging.

A directory of inputs is treated as one logical image: files are taken in
sorted order and laid end to end, so every byte keeps a single depth-0
offset that the path printer can map back to a file.
"""

from __future__ import annotations

import bisect
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from .forensic_path import ForensicPath
from .sbuf import AllocationLedger, InputError, SBuf

log = logging.getLogger(__name__)

PAGE_SIZE = 16 * 1024 * 1024
MARGIN = 4 * 1024 * 1024


@dataclass(frozen=True)
class PagePlan:
    file: Path
    page_start: int
    page_len: int
    margin_len: int
    ordinal: int
    image_offset: int = 0  # where the file begins in the logical image

    def read(self, ledger: AllocationLedger | None = None) -> SBuf:
        try:
            with open(self.file, "rb") as f:
                f.seek(self.page_start)
                data = f.read(self.page_len + self.margin_len)
        except OSError as e:
            raise InputError(f"cannot read {self.file}: {e.strerror}") from e
        if len(data) < self.page_len:
            raise InputError(f"{self.file} shrank while reading page {self.ordinal}")
        path = ForensicPath((), self.image_offset + self.page_start)
        return SBuf(data, path, self.page_len, ledger=ledger)


def enumerate_inputs(root, recursive: bool = False, warnings: list[str] | None = None) -> list[Path]:
    """Regular files under ``root`` in lexicographic order of their full path."""
    root = Path(root)
    if not root.exists():
        raise InputError(f"input {root} does not exist")
    if root.is_file():
        return [root]
    if not root.is_dir():
        raise InputError(f"input {root} is neither a file nor a directory")

    def onerror(err: OSError) -> None:
        msg = f"skipping unreadable {err.filename}: {err.strerror}"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)

    found = []
    if recursive:
        for dirpath, _dirs, files in os.walk(root, onerror=onerror):
            for name in files:
                p = Path(dirpath, name)
                if p.is_file():
                    found.append(p)
    else:
        try:
            entries = list(os.scandir(root))
        except OSError as e:
            raise InputError(f"cannot list {root}: {e.strerror}") from e
        found = [Path(e.path) for e in entries if e.is_file()]
    return sorted(found, key=lambda p: os.fsencode(p))


def plan_pages(file, page_size: int = PAGE_SIZE, margin: int = MARGIN, size: int | None = None,
               image_offset: int = 0, first_ordinal: int = 0) -> list[PagePlan]:
    if page_size <= 0:
        raise ValueError("page size must be positive")
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    file = Path(file)
    if size is None:
        size = file.stat().st_size
    plans = []
    for i, start in enumerate(range(0, size, page_size)):
        plen = min(page_size, size - start)
        mlen = min(margin, size - start - plen)
        plans.append(PagePlan(file, start, plen, mlen, first_ordinal + i, image_offset))
    return plans


class EvidenceImage:
    """Random access to the logical image made of one or more input files."""

    def __init__(self, root, recursive: bool = True):
        self.files = enumerate_inputs(root, recursive)
        self.sizes = [f.stat().st_size for f in self.files]
        self.starts = []
        total = 0
        for s in self.sizes:
            self.starts.append(total)
            total += s
        self.size = total

    def locate(self, offset: int) -> tuple[int, int]:
        """(file index, offset within file) of an image offset."""
        if not 0 <= offset < self.size:
            raise LookupError(f"offset {offset} beyond evidence of {self.size} bytes")
        i = bisect.bisect_right(self.starts, offset) - 1
        while self.sizes[i] == 0:
            i += 1
        return i, offset - self.starts[i]

    def file_containing(self, offset: int) -> tuple[bytes, int]:
        i, local = self.locate(offset)
        with open(self.files[i], "rb") as f:
            return f.read(), local

    def read(self, offset: int, length: int) -> bytes:
        """Bytes of one input file starting at ``offset``; stops at that file's end."""
        if self.size == 0:
            return b""
        i, local = self.locate(offset)
        with open(self.files[i], "rb") as f:
            f.seek(local)
            return f.read(length)
