"""Run orchestration: worker pool, suppression of duplicate and repetitive
data, media hashing and the run report."""

from __future__ import annotations

import collections
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .feature_recorder import RecorderSet, StorageError, ensure_empty_outdir
from .media_reader import MARGIN, PAGE_SIZE, PagePlan, enumerate_inputs, plan_pages
from .forensic_path import MAX_DEPTH
from .sbuf import AllocationLedger, InputError, SBuf
from .scanner_api import Flag, Phase, ScannerSet, ScanParams
from .scanners import default_scanner_set

log = logging.getLogger(__name__)

RECURSE_INLINE_MAX = 4096
DEDUP_MIN_CHILD = 512
MAX_NGRAM = 20


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    inputs: list[Path]
    output_dir: Path
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    page_size: int = PAGE_SIZE
    margin: int = MARGIN
    max_depth: int = MAX_DEPTH
    recurse_inline_max: int = RECURSE_INLINE_MAX
    recursive: bool = False
    carve_modes: dict[str, int] = field(default_factory=dict)
    enable: list[str] = field(default_factory=list)
    disable: list[str] = field(default_factory=list)
    scanner_config: dict[str, str] = field(default_factory=dict)  # "scanner.var" -> value

    def validate(self) -> None:
        if self.threads < 1:
            raise UsageError("threads must be at least 1")
        if self.page_size <= 0:
            raise UsageError("page size must be positive")
        if self.margin < 0:
            raise UsageError("margin must be nonnegative")
        if self.max_depth < 0:
            raise UsageError("max depth must be nonnegative")
        for name, mode in self.carve_modes.items():
            if mode not in (0, 1, 2):
                raise UsageError(f"carve mode for {name} must be 0, 1 or 2")
        both = set(self.enable) & set(self.disable)
        if both:
            raise UsageError(f"scanner(s) both enabled and disabled: {', '.join(sorted(both))}")


@dataclass
class RunReport:
    version: str = __version__
    media_sha1: dict[str, str] = field(default_factory=dict)
    scanners: dict[str, dict[str, int]] = field(default_factory=dict)
    pages_total: int = 0
    pages_deduped: int = 0
    pages_ngram_skipped: int = 0
    sbufs_deduped: int = 0
    sbufs_allocated: int = 0
    sbufs_freed: int = 0
    features: dict[str, int] = field(default_factory=dict)
    carved: dict[str, int] = field(default_factory=dict)
    depth_limited: int = 0
    scanner_errors: int = 0
    input_warnings: list[str] = field(default_factory=list)
    threads: int = 1
    wall_seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json() + "\n")


def repeating_ngram_period(data, max_n: int = MAX_NGRAM) -> int | None:
    """Smallest p <= max_n with data[i] == data[i % p] for every i.

    The pattern must repeat at least twice, so short buffers are not
    mistaken for their own period.
    """
    mv = memoryview(data)
    n = len(mv)
    if n == 0:
        return None
    head = bytes(mv[: min(n, 256 + max_n)])
    for p in range(1, min(max_n, n // 2) + 1):
        # the short probe rejects almost all real data before the full compare
        probe = min(n - p, 256)
        if head[p : p + probe] != head[:probe]:
            continue
        if mv[p:] == mv[: n - p]:
            return p
    return None


class SeenSet:
    """Thread-safe set of content digests."""

    def __init__(self):
        self._lock = threading.Lock()
        self._seen: set[bytes] = set()

    def check_and_add(self, digest: bytes) -> bool:
        with self._lock:
            if digest in self._seen:
                return True
            self._seen.add(digest)
            return False

    def __len__(self) -> int:
        return len(self._seen)


def should_skip_duplicate(s: SBuf, seen: SeenSet) -> bool:
    """Content dedup keyed on the page bytes; a page's margin belongs to the
    next page and must not make two identical pages look different."""
    if s.page_len == len(s):
        return seen.check_and_add(s.hash())
    page = s.slice(0, s.page_len)
    try:
        return seen.check_and_add(page.hash())
    finally:
        page.release()


def hash_file(path, chunk: int = 1 << 20) -> str:
    h = hashlib.sha1()
    try:
        with open(path, "rb") as f:
            while block := f.read(chunk):
                h.update(block)
    except OSError as e:
        raise InputError(f"cannot hash {path}: {e.strerror}") from e
    return h.hexdigest()


def hash_media(inputs) -> dict[str, str]:
    return {os.fspath(p): hash_file(p) for p in inputs}


class WorkQueue:
    """Shared queue of page plans and decoded buffers.

    Decoded buffers are served before pages.  Page puts block once
    ``page_capacity`` pages are waiting; buffer puts never block, since the
    worker producing them may be the only one able to drain the queue.
    """

    def __init__(self, page_capacity: int):
        self._cond = threading.Condition()
        self._pages: collections.deque = collections.deque()
        self._bufs: collections.deque = collections.deque()
        self._capacity = page_capacity
        self._in_flight = 0
        self._closed = False
        self._aborted = False

    def put_page(self, plan: PagePlan) -> bool:
        with self._cond:
            while len(self._pages) >= self._capacity and not self._aborted:
                self._cond.wait()
            if self._aborted:
                return False
            self._pages.append(plan)
            self._cond.notify_all()
            return True

    def put_buf(self, sbuf: SBuf) -> bool:
        with self._cond:
            if self._aborted:
                return False
            self._bufs.append(sbuf)
            self._cond.notify_all()
            return True

    def close(self) -> None:
        """No more pages will be added."""
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def abort(self) -> list:
        with self._cond:
            self._aborted = True
            left = list(self._bufs)
            self._bufs.clear()
            self._pages.clear()
            self._cond.notify_all()
            return left

    def get(self):
        """Next item, or None once the queue is closed, empty and idle."""
        with self._cond:
            while True:
                if self._aborted:
                    return None
                if self._bufs:
                    item = self._bufs.popleft()
                elif self._pages:
                    item = self._pages.popleft()
                    self._cond.notify_all()
                elif self._closed and self._in_flight == 0:
                    return None
                else:
                    self._cond.wait()
                    continue
                self._in_flight += 1
                return item

    def done(self) -> None:
        with self._cond:
            self._in_flight -= 1
            self._cond.notify_all()

    def quiescent(self) -> bool:
        with self._cond:
            return not self._bufs and not self._pages and self._in_flight == 0


class _Counters:
    def __init__(self):
        self._lock = threading.Lock()
        self.pages = 0
        self.pages_deduped = 0
        self.pages_ngram = 0
        self.sbufs_deduped = 0
        self.depth_limited = 0
        self.inline = 0
        self.queued = 0

    def bump(self, name: str) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + 1)


class Engine:
    def __init__(self, config: RunConfig, scanners: ScannerSet | None = None):
        config.validate()
        self.config = config
        self.scanners = scanners if scanners is not None else default_scanner_set()
        self.ledger = AllocationLedger()
        self.seen = SeenSet()
        self.counters = _Counters()
        self.queue = WorkQueue(4 * config.threads)
        self.recorders: RecorderSet | None = None
        self._fatal: BaseException | None = None
        self._fatal_lock = threading.Lock()

    # configuration

    def _configure(self) -> None:
        s = self.scanners
        for name in self.config.enable:
            s.enable(name)
        for name in self.config.disable:
            s.disable(name)
        for key, value in self.config.scanner_config.items():
            scanner, sep, var = key.partition(".")
            if not sep:
                raise UsageError(f"scanner setting {key!r} must look like scanner.variable")
            s.set_config(scanner, var, value)

    def _open_recorders(self, outdir: Path) -> RecorderSet:
        rs = RecorderSet(outdir)
        for spec in self.scanners.enabled_specs():
            for name, default_mode in spec.recorders.items():
                mode = self.config.carve_modes.get(name, default_mode)
                window = self.scanners.config(spec.name).get("context_window", 16)
                rec = rs.create(name, mode, window)
                for h in spec.histograms:
                    if h.recorder == name and h not in rec.histograms:
                        rec.histograms.append(h)
        return rs

    def _check_carve_names(self) -> None:
        names = {n for spec in self.scanners.enabled_specs() for n in spec.recorders}
        unknown = set(self.config.carve_modes) - names
        if unknown:
            raise UsageError(f"no enabled recorder named {', '.join(sorted(unknown))}")

    # processing

    def process(self, sbuf: SBuf) -> None:
        """Dispatch every eligible scanner on ``sbuf``, then release it."""
        try:
            suppressed = set()
            big = sbuf.depth == 0 or len(sbuf) >= DEDUP_MIN_CHILD
            if sbuf.depth == 0:
                self.counters.bump("pages")
                if repeating_ngram_period(sbuf.data[: sbuf.page_len]) is not None:
                    self.counters.bump("pages_ngram")
                    suppressed.add(Flag.NO_NGRAM_PAGES)
            if big and should_skip_duplicate(sbuf, self.seen):
                self.counters.bump("pages_deduped" if sbuf.depth == 0 else "sbufs_deduped")
                suppressed.add(Flag.NO_DUPLICATES)
            params = ScanParams(sbuf, self.recorders, self.recurse)
            self.scanners.dispatch(params, frozenset(suppressed))
        finally:
            sbuf.release()

    def recurse(self, child: SBuf) -> None:
        """Process a decoded child: inline when small, on the pool otherwise."""
        if child.depth > self.config.max_depth:
            self.counters.bump("depth_limited")
            child.release()
            return
        if len(child) <= self.config.recurse_inline_max:
            self.counters.bump("inline")
            self.process(child)
        else:
            self.counters.bump("queued")
            if not self.queue.put_buf(child):
                child.release()

    def _fail(self, exc: BaseException) -> None:
        with self._fatal_lock:
            if self._fatal is None:
                self._fatal = exc
        for leftover in self.queue.abort():
            leftover.release()

    def _worker(self) -> None:
        while True:
            item = self.queue.get()
            if item is None:
                return
            try:
                if isinstance(item, PagePlan):
                    item = item.read(self.ledger)
                self.process(item)
            except BaseException as e:  # storage and input failures end the run
                log.error("fatal: %s", e)
                self._fail(e)
            finally:
                self.queue.done()

    def run(self) -> RunReport:
        cfg = self.config
        t0 = time.monotonic()
        report = RunReport(threads=cfg.threads)
        files: list[Path] = []
        for root in cfg.inputs:
            files.extend(enumerate_inputs(root, cfg.recursive, report.input_warnings))
        self._configure()
        self._check_carve_names()
        outdir = ensure_empty_outdir(cfg.output_dir)
        self.recorders = self._open_recorders(outdir)
        self.scanners.run_phase(Phase.INIT)

        workers = [threading.Thread(target=self._worker, name=f"scan-{i}", daemon=True) for i in range(cfg.threads)]
        for w in workers:
            w.start()
        try:
            base = 0
            ordinal = 0
            sizes = {}
            for f in files:
                size = f.stat().st_size
                sizes[f] = size
                for plan in plan_pages(f, cfg.page_size, cfg.margin, size, base, ordinal):
                    if not self.queue.put_page(plan):
                        break
                    ordinal += 1
                base += size
            self.queue.close()
            if self._fatal is None:
                report.media_sha1 = hash_media(files)
        except BaseException as e:
            self._fail(e)
        finally:
            self.queue.close()
            for w in workers:
                w.join()

        self.scanners.run_phase(Phase.SHUTDOWN)
        try:
            self.recorders.finalize_histograms()
        except StorageError as e:
            if self._fatal is None:
                self._fatal = e
            self.recorders.close()

        c = self.counters
        report.scanners = {name: st.as_dict() for name, st in sorted(self.scanners.stats.items())}
        report.scanner_errors = sum(st["errors"] for st in report.scanners.values())
        report.pages_total = c.pages
        report.pages_deduped = c.pages_deduped
        report.pages_ngram_skipped = c.pages_ngram
        report.sbufs_deduped = c.sbufs_deduped
        report.depth_limited = c.depth_limited
        report.sbufs_allocated = self.ledger.total_allocated
        report.sbufs_freed = self.ledger.total_freed
        report.features = self.recorders.counts()
        report.carved = {n: r.carved for n, r in sorted(self.recorders.recorders.items()) if r.carved}
        report.wall_seconds = time.monotonic() - t0
        try:
            report.write(outdir / "report.json")
        except OSError as e:
            if self._fatal is None:
                self._fatal = StorageError(f"cannot write report: {e}")
        if self._fatal is not None:
            raise self._fatal
        if report.sbufs_allocated != report.sbufs_freed:
            log.error("buffer leak: %d allocated, %d freed", report.sbufs_allocated, report.sbufs_freed)
        return report


def run(config: RunConfig, scanners: ScannerSet | None = None) -> RunReport:
    return Engine(config, scanners).run()
