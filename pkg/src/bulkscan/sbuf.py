"""Immutable byte regions with provenance.

An :class:`SBuf` is the unit every scanner sees.  It wraps read-only bytes,
knows the forensic path of its first byte, and keeps track of the buffers
sliced or decoded from it so a parent is never torn down underneath a child.
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading

from .forensic_path import ROOT, ForensicPath, valid_label


class SBufError(Exception):
    """Misuse of the buffer API (bad arguments, double release)."""


class SBufRangeError(SBufError, IndexError):
    """Read or slice outside the buffer."""


class InputError(OSError):
    """Evidence could not be opened or read."""


class AllocationLedger:
    """Counts buffers created and released.  Safe to bump from any thread."""

    def __init__(self):
        self._lock = threading.Lock()
        self.total_allocated = 0
        self.total_freed = 0

    def allocated(self) -> None:
        with self._lock:
            self.total_allocated += 1

    def freed(self) -> None:
        with self._lock:
            self.total_freed += 1
            if self.total_freed > self.total_allocated:
                raise SBufError("ledger underflow: more buffers freed than allocated")

    @property
    def live(self) -> int:
        with self._lock:
            return self.total_allocated - self.total_freed

    def balanced(self) -> bool:
        return self.live == 0


default_ledger = AllocationLedger()

_U16LE = struct.Struct("<H")
_U16BE = struct.Struct(">H")
_U32LE = struct.Struct("<I")
_U32BE = struct.Struct(">I")


class SBuf:
    __slots__ = (
        "_store",
        "_start",
        "_len",
        "path",
        "page_len",
        "parent",
        "ledger",
        "_lock",
        "_children",
        "_hash",
        "_released",
        "_release_pending",
    )

    def __init__(
        self,
        data: bytes,
        path: ForensicPath = ROOT,
        page_len: int | None = None,
        *,
        ledger: AllocationLedger | None = None,
        _parent: SBuf | None = None,
        _start: int = 0,
        _length: int | None = None,
    ):
        if not isinstance(data, bytes):
            data = bytes(data)
        length = len(data) - _start if _length is None else _length
        if page_len is None:
            page_len = length
        if not 0 <= page_len <= length:
            raise SBufError(f"page_len {page_len} outside 0..{length}")
        self._store = data
        self._start = _start
        self._len = length
        self.path = path
        self.page_len = page_len
        self.parent = _parent
        self.ledger = ledger if ledger is not None else default_ledger
        self._lock = threading.Lock()
        self._children = 0
        self._hash: bytes | None = None
        self._released = False
        self._release_pending = False
        self.ledger.allocated()
        if _parent is not None:
            _parent._adopt()

    # construction

    @classmethod
    def from_file(cls, file_path, ledger: AllocationLedger | None = None) -> SBuf:
        """Read a whole file into a root buffer at path ``0``."""
        try:
            with open(file_path, "rb") as f:
                data = f.read()
        except OSError as e:
            raise InputError(f"cannot read evidence {os.fspath(file_path)!r}: {e.strerror}") from e
        return cls(data, ROOT, ledger=ledger)

    def slice(self, offset: int, length: int) -> SBuf:
        """A child view sharing this buffer's storage."""
        if offset < 0 or length < 0 or offset + length > self._len:
            raise SBufRangeError(
                f"slice [{offset}, {offset + length}) outside buffer of {self._len} bytes"
            )
        page_len = min(max(self.page_len - offset, 0), length)
        return SBuf(
            self._store,
            self.path.advance(offset),
            page_len,
            ledger=self.ledger,
            _parent=self,
            _start=self._start + offset,
            _length=length,
        )

    def new_decoded(self, anchor: int, label: str, decoded: bytes) -> SBuf:
        """A child owning ``decoded``, addressed as ``<path+anchor>-LABEL-0``."""
        if not label:
            raise SBufError("decoder label must be nonempty")
        if not valid_label(label):
            raise SBufError(f"decoder label must be uppercase alphanumeric, got {label!r}")
        if not 0 <= anchor < max(self._len, 1):
            raise SBufRangeError(f"anchor {anchor} outside buffer of {self._len} bytes")
        return SBuf(
            bytes(decoded),
            self.path.advance(anchor).extend(label),
            ledger=self.ledger,
            _parent=self,
        )

    # lifetime

    def _adopt(self) -> None:
        with self._lock:
            if self._released:
                raise SBufError(f"cannot create a child of released buffer {self.path}")
            self._children += 1

    def _orphan(self) -> None:
        with self._lock:
            self._children -= 1
            finish = self._children == 0 and self._release_pending
            if finish:
                self._release_pending = False
        if finish:
            self._finish_release()

    @property
    def child_count(self) -> int:
        with self._lock:
            return self._children

    @property
    def released(self) -> bool:
        return self._released

    def release(self) -> None:
        """Give the buffer back.  With live children the release is deferred
        until the last child goes away."""
        with self._lock:
            if self._released or self._release_pending:
                raise SBufError(f"buffer {self.path} released twice")
            if self._children > 0:
                self._release_pending = True
                return
        self._finish_release()

    def _finish_release(self) -> None:
        with self._lock:
            self._released = True
        self.ledger.freed()
        parent, self.parent = self.parent, None
        if parent is not None:
            parent._orphan()

    def __enter__(self) -> SBuf:
        return self

    def __exit__(self, *exc) -> None:
        if not (self._released or self._release_pending):
            self.release()

    # access

    def __len__(self) -> int:
        return self._len

    @property
    def depth(self) -> int:
        return self.path.depth

    @property
    def data(self) -> memoryview:
        return memoryview(self._store)[self._start : self._start + self._len]

    def tobytes(self, offset: int = 0, length: int | None = None) -> bytes:
        if length is None:
            length = self._len - offset
        if offset < 0 or length < 0 or offset + length > self._len:
            raise SBufRangeError(f"range [{offset}, {offset + length}) outside buffer of {self._len} bytes")
        s = self._start + offset
        return self._store[s : s + length]

    def _check(self, offset: int, width: int) -> int:
        if offset < 0 or offset + width > self._len:
            raise SBufRangeError(f"{width}-byte read at {offset} outside buffer of {self._len} bytes")
        return self._start + offset

    def read_u8(self, offset: int) -> int:
        return self._store[self._check(offset, 1)]

    def read_u16le(self, offset: int) -> int:
        return _U16LE.unpack_from(self._store, self._check(offset, 2))[0]

    def read_u16be(self, offset: int) -> int:
        return _U16BE.unpack_from(self._store, self._check(offset, 2))[0]

    def read_u32le(self, offset: int) -> int:
        return _U32LE.unpack_from(self._store, self._check(offset, 4))[0]

    def read_u32be(self, offset: int) -> int:
        return _U32BE.unpack_from(self._store, self._check(offset, 4))[0]

    def find(self, pattern: bytes, start: int = 0, end: int | None = None) -> int:
        """Offset of the first ``pattern`` at or after ``start`` lying wholly
        inside the buffer (and before ``end`` when given), else -1."""
        if not pattern:
            raise SBufError("search pattern must be nonempty")
        if start < 0:
            start = 0
        stop = self._len if end is None else min(end, self._len)
        if start >= stop:
            return -1
        # searching the backing store directly keeps this at memchr speed
        hit = self._store.find(pattern, self._start + start, self._start + stop)
        return -1 if hit < 0 else hit - self._start

    def hash(self) -> bytes:
        """SHA-1 of the contents, computed once and cached."""
        h = self._hash
        if h is None:
            with self._lock:
                if self._hash is None:
                    self._hash = self._compute_hash()
                h = self._hash
        return h

    def hexdigest(self) -> str:
        return self.hash().hex()

    def _compute_hash(self) -> bytes:
        return hashlib.sha1(self.data).digest()

    def __repr__(self) -> str:
        return f"<SBuf {self.path} len={self._len} page_len={self.page_len}>"


def map_file(file_path, ledger: AllocationLedger | None = None) -> SBuf:
    return SBuf.from_file(file_path, ledger)
