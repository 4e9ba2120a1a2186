"""Sorting whole block files through the bounded enclave buffer.

``bitonic_sort_blocks`` runs a bitonic network whose comparators are
block-pair merge-splits: load two blocks, merge their records with a fixed
bitonic network, keep the low half in one block and the high half in the
other, write both back.  Which blocks are touched depends only on the block
count.

``merge_sort_blocks`` is a conventional external merge sort with
forecasting.  It reads blocks in the order the data demands, so its trace
leaks the relative order of runs; it exists as a cost baseline and as a
positive control for the auditor.
"""

from __future__ import annotations

import numpy as np

from . import trace
from .blockstore import BlockFile
from .enclave import Enclave, PlainBlock
from .primitives import (
    block_pair_schedule,
    is_power_of_two,
    merge_schedule,
    next_power_of_two,
    run_network_rows,
    sort_schedule,
)
from .records import dummy_rows


def _workspace_addresses(fa: int, ba: int, fb: int, bb: int, half: int):
    def build():
        return [(fa, ba, s) for s in range(half)] + [(fb, bb, s) for s in range(half)]
    return build


def sort_block_rows(rows: np.ndarray, file_id: int, block_id: int, oswap: bool = True,
                    ascending: bool = True) -> np.ndarray:
    """Sort one block's records in the enclave (padded to a power of two)."""
    r, rs = rows.shape
    p = next_power_of_two(r)
    ws = dummy_rows(p, rs)
    ws[:r] = rows
    run_network_rows(sort_schedule(p, ascending), ws,
                     lambda: [(file_id, block_id, s) for s in range(p)], oswap)
    return ws[:r].copy()


def merge_split(a: np.ndarray, b: np.ndarray, addresses, oswap: bool = True,
                full_sort: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Return (low half, high half) of the records of ``a`` and ``b``.

    With ``full_sort`` the inputs may be in any order; otherwise both must
    already be ascending and a bitonic merge suffices.  The workspace has
    2P slots (P = records per block rounded up to a power of two); the
    padding slots hold maximal dummies so they collect at the top.
    """
    r, rs = a.shape
    p = next_power_of_two(r)
    ws = dummy_rows(2 * p, rs)
    ws[:r] = a
    if full_sort:
        ws[p:p + r] = b
        sched = sort_schedule(2 * p)
    else:
        ws[2 * p - r:] = b[::-1]
        sched = merge_schedule(2 * p)
    run_network_rows(sched, ws, addresses, oswap)
    return ws[:r].copy(), ws[r:2 * r].copy()


def bitonic_sort_blocks(src: BlockFile, enclave: Enclave, oswap: bool = True) -> BlockFile:
    """Sort all records of ``src`` ascending into a new file of the same size.

    The block count must be a power of two.  The first network stage reads
    from ``src`` and writes the new file; later stages work in place on it.
    """
    n = src.block_count
    if n and not is_power_of_two(n):
        raise ValueError(f"block count {n} is not a power of two; pad with dummy blocks first")
    buf = enclave.buffer
    out = enclave.new_file(src.meta.with_count(0), "bitonic")
    if n == 0:
        return out
    if n == 1:
        blk = buf.load(src, 0)
        rows = sort_block_rows(blk.records, src.file_id, 0, oswap)
        buf.discard(src, 0)
        buf.put(out, 0, PlainBlock(out.file_id, 0, rows))
        buf.flush(out, 0)
        return out

    for k, lo, hi, asc in block_pair_schedule(n):
        first = k == 2
        f_in = src if first else out
        a = buf.load(f_in, lo)
        b = buf.load(f_in, hi)
        addrs = _workspace_addresses(f_in.file_id, lo, f_in.file_id, hi,
                                     next_power_of_two(a.records_per_block))
        low, high = merge_split(a.records, b.records, addrs, oswap, full_sort=first)
        if not asc:
            low, high = high, low
        if first:
            buf.discard(src, lo)
            buf.discard(src, hi)
        buf.put(out, lo, PlainBlock(out.file_id, lo, low))
        buf.put(out, hi, PlainBlock(out.file_id, hi, high))
        buf.flush(out, lo)
        buf.flush(out, hi)
    return out


def block_pair_ops(n_blocks: int) -> int:
    return len(block_pair_schedule(n_blocks)) if n_blocks > 1 else 0


def _max_record(rows: np.ndarray) -> bytes:
    return rows[-1].tobytes()  # blocks inside a run are sorted


class FileDevice:
    """Block reads and writes on a block file through the enclave."""

    def __init__(self, enclave: Enclave, handle: BlockFile):
        self.enclave = enclave
        self.handle = handle
        self.file_id = handle.file_id

    def read(self, idx: int) -> np.ndarray:
        buf = self.enclave.buffer
        rows = buf.load(self.handle, idx).records
        buf.discard(self.handle, idx)
        return rows

    def write(self, idx: int, rows: np.ndarray) -> None:
        self.enclave.write_plain(self.handle, idx, PlainBlock(self.handle.file_id, idx, rows))


def merge_runs(cur, out, lo: int, mid: int, hi: int, oswap: bool) -> None:
    """Merge sorted runs [lo, mid) and [mid, hi) of device ``cur`` into ``out``.

    Forecasting: keep one block of pending records; the next block loaded
    comes from the run whose most recently loaded block has the smaller
    maximum, since that run's remaining records are needed first.
    """
    if mid >= hi:
        for idx in range(lo, hi):
            out.write(idx, cur.read(idx))
        return
    fid = cur.file_id
    held = cur.read(lo)
    held_idx = lo
    nxt = [lo + 1, mid]
    last_max = [_max_record(held), None]
    out_idx = lo
    while nxt[0] < mid or nxt[1] < hi:
        if nxt[0] >= mid:
            side = 1
        elif nxt[1] >= hi:
            side = 0
        elif last_max[1] is None:
            side = 1
        else:
            side = 0 if last_max[0] <= last_max[1] else 1
        idx = nxt[side]
        nxt[side] += 1
        rows = cur.read(idx)
        last_max[side] = _max_record(rows)
        addrs = _workspace_addresses(fid, held_idx, fid, idx, next_power_of_two(rows.shape[0]))
        low, held = merge_split(held, rows, addrs, oswap)
        held_idx = idx
        out.write(out_idx, low)
        out_idx += 1
    out.write(out_idx, held)


def merge_passes(cur, n: int, new_device, oswap: bool):
    """Bottom-up merging of sorted single blocks; ``new_device(level)`` gives each pass its target."""
    width = 1
    level = 0
    while width < n:
        level += 1
        with trace.phase(f"merge{level}"):
            nxt = new_device(level)
            for lo in range(0, n, 2 * width):
                merge_runs(cur, nxt, lo, min(lo + width, n), min(lo + 2 * width, n), oswap)
        cur = nxt
        width *= 2
    return cur


def merge_sort_blocks(src: BlockFile, enclave: Enclave, oswap: bool = False) -> BlockFile:
    """Bottom-up external merge sort; each pass writes a fresh file."""
    n = src.block_count
    meta = src.meta.with_count(0)
    with trace.phase("runs"):
        first = FileDevice(enclave, enclave.new_file(meta, "merge-0"))
        src_dev = FileDevice(enclave, src)
        for idx in range(n):
            first.write(idx, sort_block_rows(src_dev.read(idx), src.file_id, idx, oswap))
    last = merge_passes(first, n, lambda lv: FileDevice(enclave, enclave.new_file(meta, f"merge-{lv}")),
                        oswap)
    return last.handle
