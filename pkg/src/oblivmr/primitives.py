"""Data-independent building blocks: oblivious select/swap and bitonic networks.

Records are big-endian integers (see :mod:`records`), so comparison is
plain integer comparison and conditional moves are bit masking.  Every
record access inside a network goes through a :class:`RecordSlots`, which
reports it to the trace.

Networks are precomputed schedules of ``(i, j, ascending)`` compare-exchange
steps.  The same schedule is run either by the traced reference executor or
by a compiled kernel (:mod:`_kernels`) that only reports event counts; the
compiled path is used when no event log is being kept.
"""

from __future__ import annotations

from collections import Counter
from functools import lru_cache
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import trace
from .records import ints_to_rows, rows_to_ints

Address = tuple[int, int, int]

# Compare-exchange steps executed, by kind; tests reset and read it.
counters: Counter = Counter()


class NotPowerOfTwoError(ValueError):
    pass


def is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def next_power_of_two(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def log2(n: int) -> int:
    if not is_power_of_two(n):
        raise NotPowerOfTwoError(f"{n} is not a power of two")
    return n.bit_length() - 1


def bitonic_cex_count(n: int) -> int:
    """Closed form n·log n·(log n + 1)/4 for a full bitonic sort."""
    lg = log2(n)
    return n * lg * (lg + 1) // 4


class RecordSlots:
    """Addressable record storage with traced reads and writes.

    ``addresses[i]`` is the (file_id, block_id, record_index) reported for
    slot ``i``.  Without addresses, slot ``i`` reports as (0, 0, i).
    """

    __slots__ = ("values", "addresses")

    def __init__(self, values: Sequence[int], addresses: Optional[Sequence[Address]] = None):
        self.values = list(values)
        if addresses is None:
            addresses = [(0, 0, i) for i in range(len(self.values))]
        elif len(addresses) != len(self.values):
            raise ValueError("one address per slot required")
        self.addresses = addresses

    def __len__(self) -> int:
        return len(self.values)

    def read(self, i: int) -> int:
        f, b, r = self.addresses[i]
        trace.emit_record(trace.READ, f, b, r)
        return self.values[i]

    def write(self, i: int, v: int) -> None:
        f, b, r = self.addresses[i]
        trace.emit_record(trace.WRITE, f, b, r)
        self.values[i] = v


def o_select(cond: int, a: int, b: int) -> int:
    """``a`` if cond else ``b``, by masking rather than branching."""
    m = -(cond & 1)
    return b ^ ((a ^ b) & m)


def o_select_slot(cond: int, slots: RecordSlots, i: int, j: int, out: int) -> int:
    """Read slots i and j, write the selected one to slot ``out``."""
    a = slots.read(i)
    b = slots.read(j)
    r = o_select(cond, a, b)
    slots.write(out, r)
    return r


def o_swap(cond: int, slots: RecordSlots, i: int, j: int) -> None:
    """Exchange slots i and j iff cond; both are read and written either way."""
    a = slots.read(i)
    b = slots.read(j)
    d = (a ^ b) & -(cond & 1)
    slots.write(i, a ^ d)
    slots.write(j, b ^ d)


def _out_of_order(ascending: int, a: int, b: int) -> int:
    gt = int(a > b)
    lt = int(a < b)
    asc = ascending & 1
    return (gt & asc) | (lt & (asc ^ 1))


def o_compare_exchange(ascending: int, slots: RecordSlots, i: int, j: int) -> None:
    """Order slots i, j per direction with an oblivious swap.

    Both records are read once and both are rewritten, so the trace is
    the same four events whatever the comparison outcome.
    """
    counters["compare_exchange"] += 1
    a = slots.read(i)
    b = slots.read(j)
    cond = _out_of_order(ascending, a, b)
    counters["swap"] += cond
    d = (a ^ b) & -cond
    slots.write(i, a ^ d)
    slots.write(j, b ^ d)


def plain_compare_exchange(ascending: int, slots: RecordSlots, i: int, j: int) -> None:
    """Branchy compare-exchange: writes only when it swaps.  Leaks the outcome."""
    counters["compare_exchange"] += 1
    a = slots.read(i)
    b = slots.read(j)
    if _out_of_order(ascending, a, b):
        counters["swap"] += 1
        slots.write(i, b)
        slots.write(j, a)


# ---------------------------------------------------------------- schedules

class Schedule:
    """A fixed list of compare-exchange steps over ``width`` slots."""

    __slots__ = ("width", "i", "j", "asc", "steps")

    def __init__(self, width: int, steps: list[tuple[int, int, int]]):
        self.width = width
        self.steps = steps
        arr = np.array(steps, dtype=np.int64).reshape(-1, 3)
        self.i = np.ascontiguousarray(arr[:, 0])
        self.j = np.ascontiguousarray(arr[:, 1])
        self.asc = np.ascontiguousarray(arr[:, 2].astype(np.uint8))

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)


def _sort_steps(n: int, ascending: bool) -> list[tuple[int, int, int]]:
    steps = []
    k = 2
    while k <= n:
        j = k // 2
        while j >= 1:
            for i in range(n):
                l = i ^ j
                if l > i:
                    up = (i & k) == 0
                    steps.append((i, l, int(up == ascending)))
            j //= 2
        k *= 2
    return steps


@lru_cache(maxsize=None)
def sort_schedule(n: int, ascending: bool = True) -> Schedule:
    """Full bitonic sorting network over n slots."""
    log2(n)
    return Schedule(n, _sort_steps(n, ascending))


@lru_cache(maxsize=None)
def merge_schedule(n: int, ascending: bool = True) -> Schedule:
    """Bitonic merge of one bitonic sequence of n slots."""
    log2(n)
    steps = []
    j = n // 2
    while j >= 1:
        for i in range(n):
            l = i ^ j
            if l > i:
                steps.append((i, l, int(ascending)))
        j //= 2
    return Schedule(n, steps)


@lru_cache(maxsize=None)
def block_pair_schedule(n_blocks: int) -> list[tuple[int, int, int, int]]:
    """Block-level bitonic network: (stage k, low block, high block, ascending)."""
    log2(n_blocks)
    out = []
    k = 2
    while k <= n_blocks:
        j = k // 2
        while j >= 1:
            for i in range(n_blocks):
                l = i ^ j
                if l > i:
                    out.append((k, i, l, int((i & k) == 0)))
            j //= 2
        k *= 2
    return out


# ---------------------------------------------------------------- executors

def run_network_slots(schedule: Schedule, slots: RecordSlots, oswap: bool = True) -> None:
    """Traced reference executor."""
    if len(slots) != schedule.width:
        raise ValueError(f"schedule width {schedule.width} != {len(slots)} slots")
    cex = o_compare_exchange if oswap else plain_compare_exchange
    for i, j, asc in schedule.steps:
        cex(asc, slots, i, j)


def run_network_rows(schedule: Schedule, rows: np.ndarray,
                     addresses: Union[Sequence[Address], Callable[[], Sequence[Address]], None] = None,
                     oswap: bool = True) -> int:
    """Run ``schedule`` in place over uint8 record rows; returns swaps made.

    When the active trace keeps events, the traced reference executor is
    used with the given slot addresses; otherwise the compiled kernel runs
    and only the access counts are reported.
    """
    if rows.shape[0] != schedule.width:
        raise ValueError(f"schedule width {schedule.width} != {rows.shape[0]} rows")
    if trace.recording_events():
        if callable(addresses):
            addresses = addresses()
        slots = RecordSlots(rows_to_ints(rows), addresses)
        before = counters["swap"]
        run_network_slots(schedule, slots, oswap)
        rows[:] = ints_to_rows(slots.values, rows.shape[1])
        return counters["swap"] - before
    from ._kernels import run_schedule

    n = len(schedule)
    swaps = int(run_schedule(rows, schedule.i, schedule.j, schedule.asc))
    counters["compare_exchange"] += n
    counters["swap"] += swaps
    trace.add_counts(trace.ENCLAVE, trace.RECORD, trace.READ, 2 * n)
    trace.add_counts(trace.ENCLAVE, trace.RECORD, trace.WRITE, 2 * n if oswap else 2 * swaps)
    return swaps


def bitonic_sort_records(records: Union[RecordSlots, list], ascending: bool = True,
                         oswap: bool = True) -> int:
    """Sort in place with a bitonic network; returns compare-exchanges run.

    ``records`` is a RecordSlots or a plain list of record integers.
    Equal records are identical bytes, so the network's lack of stability
    is unobservable.
    """
    slots = records if isinstance(records, RecordSlots) else RecordSlots(records)
    n = len(slots)
    if not is_power_of_two(n):
        raise NotPowerOfTwoError(f"bitonic sort needs a power-of-two length, got {n}")
    sched = sort_schedule(n, ascending)
    run_network_slots(sched, slots, oswap)
    if slots is not records:
        records[:] = slots.values
    return len(sched)
