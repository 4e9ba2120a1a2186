"""Standalone ORAM-backed applications used as the cost baseline.

No MapReduce framework: the input is read block by block through Path
ORAM, mapped and sorted per block in the enclave, written back through
ORAM, merge-sorted (forecasting merge, o-swap inside the enclave) between
two ORAM regions, then reduced by a linear scan whose output blocks are
again written through ORAM.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import trace
from .blocksort import merge_passes, sort_block_rows
from .blockstore import BlockFile
from .encoding import decode_records
from .engine import JobConfig, MapFunction
from .oram import OramState, oram_access, oram_init
from .primitives import o_select
from .records import RecordLayout, dummy_int, ints_to_rows, rows_to_ints


class OramDevice:
    """A contiguous range of ORAM logical blocks holding record rows."""

    def __init__(self, st: OramState, base: int, records_per_block: int, record_size: int):
        self.st = st
        self.base = base
        self.shape = (records_per_block, record_size)
        self.file_id = st.file_id

    def read(self, idx: int) -> np.ndarray:
        raw = oram_access(self.st, trace.READ, self.base + idx)
        return np.frombuffer(raw, dtype=np.uint8).reshape(self.shape).copy()

    def write(self, idx: int, rows: np.ndarray) -> None:
        oram_access(self.st, trace.WRITE, self.base + idx, rows.tobytes())


@dataclass
class BaselineResult:
    records: list[int]
    distinct_keys: int
    oram: OramState


def reduce_rows(rows_iter, layout: RecordLayout, config: JobConfig):
    """Linear aggregate scan over sorted records; yields aggregates in key order."""
    agg = config.aggregator
    acc = 0
    prev = None
    for rec in rows_iter:
        if layout.is_dummy(rec):
            break
        k = layout.key(rec)
        start = int(k != prev)
        if start and prev is not None:
            yield layout.with_value(prev, acc)
        v = layout.value(rec)
        acc = o_select(start, v, agg.combine(layout, acc, v))
        prev = k
    if prev is not None:
        yield layout.with_value(prev, acc)


def run_oram_baseline(config: JobConfig, map_fn: MapFunction, input_file: BlockFile,
                      seed: Optional[int] = None, z: int = 4,
                      stash_capacity: int = 128) -> BaselineResult:
    """Run one MapReduce-shaped job on ORAM block storage, without combining.

    ORAM layout: [0, n) input, [n, 2n) and [2n, 3n) ping-pong sort regions;
    the output reuses the input region.  Loading the input into the ORAM
    is setup and is not traced.
    """
    if map_fn.fanout != 1:
        raise ValueError("the ORAM baseline keeps one output block per input block (fanout 1)")
    layout = config.layout
    meta = config.meta
    rpb, rs = meta.records_per_block, meta.record_size
    n = input_file.block_count
    if n == 0:
        return BaselineResult([], 0, oram_init(1, z, meta.payload_size, seed=seed, key=config.seal_key))
    with trace.suspended():
        raw = decode_records(input_file, config.seal_key, keep_dummies=True)
    st = oram_init(3 * n, z, meta.payload_size, seed=seed, key=config.seal_key,
                   stash_capacity=stash_capacity)
    inp = OramDevice(st, 0, rpb, rs)
    with trace.suspended():
        for b in range(n):
            inp.write(b, np.frombuffer(b"".join(raw[b * rpb:(b + 1) * rpb]), dtype=np.uint8).reshape(rpb, rs))

    dummy = dummy_int(rs)
    regions = [OramDevice(st, n, rpb, rs), OramDevice(st, 2 * n, rpb, rs)]
    with trace.phase("map"):
        for b in range(n):
            rows = inp.read(b)
            vals = []
            for s in range(rpb):
                rec = rows[s].tobytes()
                produced = []
                if rec[:8] != b"\xff" * 8:
                    produced = [layout.make(k, v) for k, v in map_fn(rec)]
                produced += [dummy] * (map_fn.fanout - len(produced))
                vals.extend(produced)
            out_rows = sort_block_rows(ints_to_rows(vals, rs), st.file_id, n + b, oswap=True)
            regions[0].write(b, out_rows)
    with trace.phase("sort"):
        final = merge_passes(regions[0], n, lambda lv: regions[lv % 2], oswap=True)
    with trace.phase("reduce"):
        out_vals: list[int] = []
        written = 0

        def records():
            for b in range(n):
                yield from rows_to_ints(final.read(b))

        for agg in reduce_rows(records(), layout, config):
            out_vals.append(agg)
            if len(out_vals) % rpb == 0:
                inp.write(written, ints_to_rows(out_vals[-rpb:], rs))
                written += 1
        if len(out_vals) % rpb:
            tail = out_vals[written * rpb:]
            inp.write(written, ints_to_rows(tail + [dummy] * (rpb - len(tail)), rs))
    return BaselineResult(out_vals, len(out_vals), st)
