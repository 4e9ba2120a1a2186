"""Access tracing and obliviousness auditing.

Every block I/O against untrusted storage and every record access inside the
simulated enclave reports to the active :class:`Trace`, if there is one.  A
trace either keeps the full ordered event log (needed to compare traces) or
only counters (cheap enough for benchmark-scale runs).
"""

from __future__ import annotations

import contextlib
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Iterator, NamedTuple, Optional, Sequence

UNTRUSTED = "untrusted"
ENCLAVE = "enclave"
BLOCK = "block"
RECORD = "record"
READ = "read"
WRITE = "write"

_NO_PHASE = "-"


class TraceEvent(NamedTuple):
    seq: int
    region: str
    granularity: str
    op: str
    file_id: int
    block_id: int
    record_index: Optional[int]
    phase: str

    @property
    def address(self) -> tuple:
        if self.record_index is None:
            return (self.file_id, self.block_id)
        return (self.file_id, self.block_id, self.record_index)

    def to_line(self) -> str:
        parts = [str(self.seq), self.region, self.granularity, self.op,
                 str(self.file_id), str(self.block_id)]
        if self.record_index is not None:
            parts.append(str(self.record_index))
        parts.append(self.phase)
        return " ".join(parts)

    @classmethod
    def from_line(cls, line: str) -> "TraceEvent":
        parts = line.split()
        if len(parts) == 7:
            seq, region, gran, op, fid, bid, phase = parts
            rid = None
        elif len(parts) == 8:
            seq, region, gran, op, fid, bid, rid, phase = parts
            rid = int(rid)
        else:
            raise ValueError(f"malformed trace line: {line!r}")
        return cls(int(seq), region, gran, op, int(fid), int(bid), rid, phase)


class NestedCaptureError(RuntimeError):
    pass


class ShapeMismatchError(ValueError):
    pass


class Trace:
    """Ordered log of accesses, split by region and granularity.

    With ``keep_events=False`` only per-(region, granularity, op, phase)
    counters are kept; comparison and export need the full log.
    """

    def __init__(self, keep_events: bool = True):
        self.keep_events = keep_events
        # (region, granularity, op, file_id, block_id, record_index, phase)
        self._events: list[tuple] = []
        self._counts: Counter = Counter()
        self.phases: list[str] = []
        self._phase_set: set[str] = set()
        self.result: Any = None

    def __len__(self) -> int:
        return sum(self._counts.values())

    def __iter__(self) -> Iterator[TraceEvent]:
        return self.events()

    def events(self) -> Iterator[TraceEvent]:
        self._require_events()
        for seq, ev in enumerate(self._events):
            yield TraceEvent(seq, *ev)

    def _require_events(self) -> None:
        if not self.keep_events:
            raise ValueError("trace was captured in counting mode; no event log kept")

    def _emit(self, region, granularity, op, file_id, block_id, record_index, phase):
        self._counts[(region, granularity, op, phase)] += 1
        if self.keep_events:
            self._events.append((region, granularity, op, file_id, block_id, record_index, phase))
        if phase not in self._phase_set:
            self._phase_set.add(phase)
            self.phases.append(phase)

    def add_counts(self, region: str, granularity: str, op: str, n: int, phase: str) -> None:
        """Bulk-record ``n`` events without addresses (counting mode only)."""
        if self.keep_events:
            raise ValueError("bulk counts are only valid for counting-mode traces")
        if n:
            self._counts[(region, granularity, op, phase)] += n
            if phase not in self._phase_set:
                self._phase_set.add(phase)
                self.phases.append(phase)

    def counts(self) -> Counter:
        return Counter(self._counts)

    def signature(self, normalize: Optional[Callable[[tuple], tuple]] = None) -> list[tuple]:
        """Comparable form of the trace: (region, granularity, op, address).

        File ids are fresh random values per run, so they are replaced by
        their order of first appearance.  ``normalize`` may rewrite each
        resulting tuple further.
        """
        self._require_events()
        ordinal: dict[int, int] = {}
        out = []
        for region, gran, op, fid, bid, rid, _phase in self._events:
            f = ordinal.setdefault(fid, len(ordinal))
            item = (region, gran, op, f, bid, rid)
            if normalize is not None:
                item = normalize(item)
            out.append(item)
        return out

    def export(self, stream: Optional[io.TextIOBase] = None) -> Optional[str]:
        """Write the line-delimited text form; returns it as a string if no stream."""
        lines = (ev.to_line() for ev in self.events())
        if stream is None:
            return "\n".join(lines) + ("\n" if self._events else "")
        for line in lines:
            stream.write(line + "\n")
        return None

    @classmethod
    def load(cls, lines: Iterable[str]) -> "Trace":
        tr = cls(keep_events=True)
        for line in lines:
            line = line.strip()
            if not line:
                continue
            ev = TraceEvent.from_line(line)
            tr._emit(ev.region, ev.granularity, ev.op, ev.file_id, ev.block_id,
                     ev.record_index, ev.phase)
        return tr


_active: Optional[Trace] = None
_phase_stack: list[str] = []
_phase_label: str = _NO_PHASE


def active() -> Optional[Trace]:
    return _active


def recording_events() -> bool:
    return _active is not None and _active.keep_events


def emit_block(region: str, op: str, file_id: int, block_id: int) -> None:
    if _active is not None:
        _active._emit(region, BLOCK, op, file_id, block_id, None, _phase_label)


def emit_record(op: str, file_id: int, block_id: int, record_index: int) -> None:
    if _active is not None:
        _active._emit(ENCLAVE, RECORD, op, file_id, block_id, record_index, _phase_label)


def add_counts(region: str, granularity: str, op: str, n: int) -> None:
    if _active is not None:
        _active.add_counts(region, granularity, op, n, _phase_label)


@contextlib.contextmanager
def phase(label: str):
    """Label events emitted inside the block; nested labels join with '/'."""
    global _phase_label
    _phase_stack.append(label)
    prev = _phase_label
    _phase_label = "/".join(_phase_stack)
    try:
        yield
    finally:
        _phase_stack.pop()
        _phase_label = prev


@contextlib.contextmanager
def recording(keep_events: bool = True):
    """Make a fresh trace active for the duration of the block."""
    global _active, _phase_label
    if _active is not None:
        raise NestedCaptureError("a capture is already active")
    tr = Trace(keep_events=keep_events)
    _active = tr
    saved_stack = list(_phase_stack)
    saved_label = _phase_label
    _phase_stack.clear()
    _phase_label = _NO_PHASE
    try:
        yield tr
    finally:
        _active = None
        _phase_stack[:] = saved_stack
        _phase_label = saved_label


@contextlib.contextmanager
def suspended():
    """Temporarily stop recording (e.g. for test setup inside a capture)."""
    global _active
    saved = _active
    _active = None
    try:
        yield
    finally:
        _active = saved


def capture(program: Callable[..., Any], *args, keep_events: bool = True, **kwargs) -> Trace:
    """Run ``program`` under instrumentation and return its trace.

    The program's return value is kept on ``trace.result``.
    """
    with recording(keep_events=keep_events) as tr:
        tr.result = program(*args, **kwargs)
    return tr


@dataclass
class TraceStats:
    by_kind: Counter = field(default_factory=Counter)
    by_phase: dict = field(default_factory=dict)
    total: int = 0

    def get(self, region: str, granularity: str, op: str) -> int:
        return self.by_kind.get((region, granularity, op), 0)

    @property
    def untrusted_reads(self) -> int:
        return self.get(UNTRUSTED, BLOCK, READ)

    @property
    def untrusted_writes(self) -> int:
        return self.get(UNTRUSTED, BLOCK, WRITE)

    @property
    def enclave_record_touches(self) -> int:
        return self.get(ENCLAVE, RECORD, READ) + self.get(ENCLAVE, RECORD, WRITE)


def trace_stats(trace: Trace) -> TraceStats:
    stats = TraceStats()
    for (region, gran, op, ph), n in trace.counts().items():
        stats.by_kind[(region, gran, op)] += n
        stats.by_phase.setdefault(ph, Counter())[(region, gran, op)] += n
        stats.total += n
    return stats


@dataclass
class Verdict:
    oblivious: bool
    witness: Optional[tuple[int, int]] = None
    divergence: Optional[int] = None
    runs: int = 0
    detail: str = ""

    def __bool__(self) -> bool:
        return self.oblivious

    def __str__(self) -> str:
        if self.oblivious:
            return f"oblivious ({self.runs} runs, identical traces)"
        i, j = self.witness
        return (f"distinguishable: inputs #{i} and #{j} diverge at event {self.divergence}"
                + (f" ({self.detail})" if self.detail else ""))


def _default_shape(x: Any) -> Hashable:
    meta = getattr(x, "meta", None)
    if meta is not None:
        return (x.block_count, meta.records_per_block, meta.record_size)
    if isinstance(x, (list, tuple)):
        return len(x)
    return None


def first_divergence(a: Sequence, b: Sequence) -> Optional[int]:
    for idx, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return idx
    if len(a) != len(b):
        return min(len(a), len(b))
    return None


def assert_oblivious(program: Callable[[Any], Any], inputs: Sequence[Any], *,
                     shape: Optional[Callable[[Any], Hashable]] = None,
                     normalize: Optional[Callable[[tuple], tuple]] = None) -> Verdict:
    """Run ``program`` on each input and compare the traces.

    All inputs must share a shape (block count, records per block, record
    size for block files).  The verdict is oblivious iff every trace equals
    the first; otherwise it names the first differing pair and event index.
    """
    if not inputs:
        return Verdict(True, runs=0)
    shape = shape or _default_shape
    shapes = {shape(x) for x in inputs}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"inputs differ in shape: {sorted(map(str, shapes))}")

    sigs = []
    traces = []
    for x in inputs:
        tr = capture(program, x)
        traces.append(tr)
        sigs.append(tr.signature(normalize))
    for j in range(1, len(sigs)):
        div = first_divergence(sigs[0], sigs[j])
        if div is not None:
            detail = ""
            evs = traces[0]._events
            if div < len(evs):
                detail = f"phase {evs[div][6]}"
            return Verdict(False, witness=(0, j), divergence=div, runs=len(inputs), detail=detail)
    return Verdict(True, runs=len(inputs))
