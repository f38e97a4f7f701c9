"""Scanner registry, lifecycle and dispatch."""

from __future__ import annotations

import enum
import logging
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping

from .feature_recorder import StorageError
from .sbuf import SBuf

log = logging.getLogger(__name__)


class ScannerConfigError(ValueError):
    pass


class PhaseError(RuntimeError):
    pass


class Flag(enum.Enum):
    DEPTH0_ONLY = "DEPTH0_ONLY"
    NO_DUPLICATES = "NO_DUPLICATES"
    NO_NGRAM_PAGES = "NO_NGRAM_PAGES"

    def __str__(self) -> str:
        return self.value


class Phase(enum.Enum):
    INIT = "init"
    SHUTDOWN = "shutdown"


@dataclass
class ScanParams:
    sbuf: SBuf
    recorders: Any
    recurse: Callable[[SBuf], None]
    config: Mapping[str, Any] = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return self.sbuf.depth


@dataclass
class ScannerSpec:
    name: str
    scan: Callable[[ScanParams], None]
    description: str = ""
    default_enabled: bool = True
    flags: frozenset[Flag] = frozenset()
    config: dict[str, Any] = field(default_factory=dict)
    # recorder name -> default carve mode; recorders are created before INIT
    recorders: dict[str, int] = field(default_factory=dict)
    histograms: tuple = ()
    init: Callable[[dict[str, Any]], None] | None = None
    shutdown: Callable[[dict[str, Any]], None] | None = None


class ScannerStats:
    def __init__(self):
        self._lock = threading.Lock()
        self.calls = 0
        self.total_nanoseconds = 0
        self.errors = 0

    def add(self, ns: int, failed: bool = False) -> None:
        with self._lock:
            self.calls += 1
            self.total_nanoseconds += ns
            if failed:
                self.errors += 1

    def as_dict(self) -> dict[str, int]:
        with self._lock:
            return {"calls": self.calls, "nanoseconds": self.total_nanoseconds, "errors": self.errors}


class ScannerSet:
    def __init__(self):
        self._specs: dict[str, ScannerSpec] = {}
        self._enabled: set[str] = set()
        self._config: dict[str, dict[str, Any]] = {}
        self.stats: dict[str, ScannerStats] = {}
        self._phase: Phase | None = None
        self._active: tuple[ScannerSpec, ...] = ()
        self._tls = threading.local()

    def register(self, spec: ScannerSpec) -> None:
        if self._phase is not None:
            raise PhaseError(f"cannot register {spec.name!r} after the init phase")
        if spec.name in self._specs:
            raise ScannerConfigError(f"scanner {spec.name!r} registered twice")
        self._specs[spec.name] = spec
        self._config[spec.name] = dict(spec.config)
        self.stats[spec.name] = ScannerStats()
        if spec.default_enabled:
            self._enabled.add(spec.name)

    def _known(self, name: str) -> ScannerSpec:
        try:
            return self._specs[name]
        except KeyError:
            valid = ", ".join(sorted(self._specs))
            raise ScannerConfigError(f"unknown scanner {name!r}; valid scanners: {valid}") from None

    def _unfrozen(self) -> None:
        if self._phase is not None:
            raise PhaseError("scanner set is frozen once the init phase has run")

    def enable(self, name: str) -> None:
        self._unfrozen()
        self._known(name)
        self._enabled.add(name)

    def disable(self, name: str) -> None:
        self._unfrozen()
        self._known(name)
        self._enabled.discard(name)

    def enable_all(self) -> None:
        self._unfrozen()
        self._enabled.update(self._specs)

    def is_enabled(self, name: str) -> bool:
        return name in self._enabled

    def set_config(self, scanner: str, key: str, value: str) -> None:
        """Override one configuration variable, converting to the default's type."""
        self._unfrozen()
        spec = self._known(scanner)
        if key not in spec.config:
            valid = ", ".join(sorted(spec.config)) or "(none)"
            raise ScannerConfigError(f"scanner {scanner!r} has no variable {key!r}; valid: {valid}")
        default = spec.config[key]
        try:
            if isinstance(default, bool):
                conv = value.lower() in ("1", "true", "yes", "on")
            else:
                conv = type(default)(value)
        except ValueError:
            raise ScannerConfigError(f"{scanner}.{key}: cannot convert {value!r}") from None
        self._config[scanner][key] = conv

    def config(self, name: str) -> dict[str, Any]:
        return self._config[name]

    def list_scanners(self) -> list[ScannerSpec]:
        return [self._specs[n] for n in sorted(self._specs)]

    def enabled_specs(self) -> list[ScannerSpec]:
        return [s for s in self.list_scanners() if s.name in self._enabled]

    def help_lines(self) -> list[str]:
        lines = []
        for s in self.list_scanners():
            flags = ",".join(sorted(str(f) for f in s.flags)) or "-"
            conf = " ".join(f"{k}={v}" for k, v in sorted(self._config[s.name].items())) or "-"
            state = "enabled" if s.default_enabled else "disabled"
            lines.append(f"{s.name}\t{state}\t{flags}\t{conf}\t{s.description}")
        return lines

    def run_phase(self, phase: Phase) -> None:
        if phase is Phase.INIT:
            if self._phase is not None:
                raise PhaseError("init phase already ran")
            active = []
            for spec in self.enabled_specs():
                if spec.init is not None:
                    try:
                        spec.init(self._config[spec.name])
                    except Exception:
                        log.exception("init of scanner %s failed; scanner disabled", spec.name)
                        self._enabled.discard(spec.name)
                        continue
                active.append(spec)
            self._active = tuple(active)
            self._phase = Phase.INIT
        elif phase is Phase.SHUTDOWN:
            if self._phase is not Phase.INIT:
                raise PhaseError("shutdown requested before init")
            self._phase = Phase.SHUTDOWN
            for spec in self._active:
                if spec.shutdown is not None:
                    try:
                        spec.shutdown(self._config[spec.name])
                    except Exception:
                        log.exception("shutdown of scanner %s failed", spec.name)

    @property
    def active(self) -> tuple[ScannerSpec, ...]:
        return self._active

    def eligible(self, depth: int, suppressed: frozenset[Flag] = frozenset()) -> list[ScannerSpec]:
        out = []
        for spec in self._active:
            if depth > 0 and Flag.DEPTH0_ONLY in spec.flags:
                continue
            if suppressed and not suppressed.isdisjoint(spec.flags):
                continue
            out.append(spec)
        return out

    def dispatch(self, params: ScanParams, suppressed: frozenset[Flag] = frozenset()) -> int:
        """Run every eligible scanner once on ``params.sbuf``; returns how many ran.

        A scanner that raises is logged and counted; only storage failures
        propagate.
        """
        if self._phase is not Phase.INIT:
            raise PhaseError("dispatch outside the scanning phase")
        ran = 0
        tls = self._tls
        for spec in self.eligible(params.sbuf.depth, suppressed):
            p = replace(params, config=self._config[spec.name])
            failed = False
            outer = getattr(tls, "nested", 0)
            tls.nested = 0
            t0 = time.perf_counter_ns()
            try:
                spec.scan(p)
            except StorageError:
                failed = True
                raise
            except Exception:
                failed = True
                log.exception("scanner %s failed on %s", spec.name, params.sbuf.path)
            finally:
                elapsed = time.perf_counter_ns() - t0
                # time spent in inline recursion is charged to the inner scanners
                self.stats[spec.name].add(elapsed - tls.nested, failed)
                tls.nested = outer + elapsed
            ran += 1
        return ran
