"""Regulated MapReduce dataflow: map, per-block sort and combine, oblivious
sort, padded reduce, optional compaction.

Every phase reads its input and writes its output as whole blocks in an
order fixed by the input's shape.  Inside the enclave each record slot is
touched in a fixed order too; data-dependent choices are made with masking.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

import numpy as np

from . import trace
from .aggregators import Aggregator
from .blocksort import bitonic_sort_blocks, merge_sort_blocks, sort_block_rows
from .blockstore import BlockFile, BlockFileMeta
from .enclave import Enclave, PlainBlock, SealKey, touch_record
from .primitives import next_power_of_two, o_select
from .records import RecordLayout, RecordOverflowError, dummy_int, ints_to_rows, rows_to_ints

PADDING_MODES = ("none", "pad_only", "pad_then_postprocess")
SORT_KINDS = ("bitonic", "merge")


class UnsortedInputError(ValueError):
    pass


@dataclass
class JobConfig:
    block_size: int = 2048
    record_size: int = 32
    key_size: int = 24
    aggregator: Aggregator = field(default_factory=Aggregator)
    padding_mode: str = "pad_then_postprocess"
    buffer_capacity: int = 4
    seal_key: SealKey = field(default_factory=SealKey.generate)
    sort_kind: str = "bitonic"
    oswap: bool = True
    workdir: Optional[Path] = None
    keep_intermediates: bool = False

    def __post_init__(self):
        if self.buffer_capacity < 3:
            raise ValueError("buffer_capacity must be at least 3 blocks")
        if self.padding_mode not in PADDING_MODES:
            raise ValueError(f"padding_mode must be one of {PADDING_MODES}")
        if self.sort_kind not in SORT_KINDS:
            raise ValueError(f"sort_kind must be one of {SORT_KINDS}")
        self.layout  # validates key_size against record size

    @property
    def meta(self) -> BlockFileMeta:
        return BlockFileMeta.for_block_size(self.block_size, record_size=self.record_size)

    @property
    def records_per_block(self) -> int:
        return self.meta.records_per_block

    @property
    def layout(self) -> RecordLayout:
        return RecordLayout(self.meta.record_size, self.key_size)

    def with_(self, **changes) -> "JobConfig":
        return replace(self, **changes)

    @classmethod
    def parse(cls, text: str, base: Optional["JobConfig"] = None, **overrides) -> "JobConfig":
        """Read ``key = value`` lines; ``#`` starts a comment.

        Keys the text leaves out come from ``base`` (or the defaults).
        """
        kw: dict = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in ("block_size", "record_size", "key_size", "buffer_capacity"):
                kw[key] = int(value)
            elif key == "aggregator":
                kw["aggregator"] = Aggregator.parse(value)
            elif key == "padding":
                kw["padding_mode"] = value
            elif key == "sort":
                kw["sort_kind"] = value
            elif key == "key_hex":
                kw["seal_key"] = SealKey.from_hex(value)
            elif key == "oswap":
                kw["oswap"] = value.lower() in ("1", "true", "yes", "on")
            elif key == "workdir":
                kw["workdir"] = Path(value)
            elif key == "keep_intermediates":
                kw["keep_intermediates"] = value.lower() in ("1", "true", "yes", "on")
            else:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
        kw.update(overrides)
        return replace(base, **kw) if base is not None else cls(**kw)

    @classmethod
    def load(cls, path: Union[str, Path], base: Optional["JobConfig"] = None, **overrides) -> "JobConfig":
        return cls.parse(Path(path).read_text(), base, **overrides)


MapOutput = Iterable[tuple[bytes, bytes]]


@dataclass
class MapFunction:
    """User map: raw input record bytes -> (key, value) byte pairs.

    ``fanout`` is the fixed number of output slots per input record.
    Shorter outputs are filled with dummies, so the map-side trace does not
    depend on how many pairs a record produced.
    """

    fn: Callable[[bytes], MapOutput]
    fanout: int = 1

    def __call__(self, record: bytes) -> MapOutput:
        return self.fn(record)


@dataclass
class JobResult:
    output: BlockFile
    distinct_keys: int
    phases: dict = field(default_factory=dict)


def read_records(enclave: Enclave, handle: BlockFile) -> list[int]:
    """All record integers of a file, in order (untraced helper for callers)."""
    out: list[int] = []
    for idx in range(handle.block_count):
        out.extend(rows_to_ints(enclave.read_plain(handle, idx).records))
    return out


def real_records(enclave: Enclave, handle: BlockFile, layout: RecordLayout) -> list[int]:
    return [r for r in read_records(enclave, handle) if not layout.is_dummy(r)]


# ------------------------------------------------------------------ map side

def combine_block(values: list[int], layout: RecordLayout, agg: Aggregator,
                  file_id: int, block_id: int) -> list[int]:
    """Merge equal-key neighbours of a sorted block in one fixed pass.

    Each slot is read once and written once; a merged-away slot becomes a
    dummy and the group's partial aggregate lands in its last slot.
    """
    r = len(values)
    dummy = layout.dummy
    out = list(values)
    acc = values[0]
    touch = trace.emit_record
    touch(trace.READ, file_id, block_id, 0)
    for s in range(1, r):
        touch(trace.READ, file_id, block_id, s)
        nxt = values[s]
        same = int(layout.key(acc) == layout.key(nxt)) & (1 - layout.is_dummy(nxt))
        merged = layout.with_value(layout.key(acc), agg.combine(layout, layout.value(acc), layout.value(nxt)))
        touch(trace.WRITE, file_id, block_id, s - 1)
        out[s - 1] = o_select(same, dummy, acc)
        acc = o_select(same, merged, nxt)
    touch(trace.WRITE, file_id, block_id, r - 1)
    out[r - 1] = acc
    return out


def map_phase(config: JobConfig, map_fn: MapFunction, input_file: BlockFile,
              enclave: Enclave) -> BlockFile:
    layout = config.layout
    meta = config.meta
    if input_file.meta.record_size != meta.record_size or input_file.records_per_block != meta.records_per_block:
        raise ValueError(f"input file layout {input_file.meta} does not match job layout {meta}")
    rpb = meta.records_per_block
    dummy = layout.dummy
    buf = enclave.buffer
    out = enclave.new_file(meta.with_count(0), "map")
    pending: list[int] = []

    def flush_block() -> None:
        idx = out.block_count
        fid = out.file_id
        vals = pending + [dummy] * (rpb - len(pending))
        for s in range(rpb):
            trace.emit_record(trace.WRITE, fid, idx, s)
        rows = sort_block_rows(ints_to_rows(vals, meta.record_size), fid, idx, oswap=True)
        vals = combine_block(rows_to_ints(rows), layout, config.aggregator, fid, idx)
        buf.put(out, idx, PlainBlock(fid, idx, ints_to_rows(vals, meta.record_size)))
        buf.flush(out, idx)
        pending.clear()

    for b in range(input_file.block_count):
        blk = buf.load(input_file, b)
        raw = blk.records.tobytes()
        rs = meta.record_size
        for s in range(rpb):
            touch_record(blk, s, trace.READ)
            rec = raw[s * rs:(s + 1) * rs]
            produced: list[int] = []
            if rec[:8] != b"\xff" * 8:  # register-level branch; slot writes below are fixed
                for key, value in map_fn(rec):
                    produced.append(layout.make(key, value))
                if len(produced) > map_fn.fanout:
                    raise RecordOverflowError(
                        f"map produced {len(produced)} pairs for one record; fanout is {map_fn.fanout}")
            produced += [dummy] * (map_fn.fanout - len(produced))
            for v in produced:
                pending.append(v)
                if len(pending) == rpb:
                    flush_block()
        buf.discard(input_file, b)
    if pending:
        flush_block()
    return out


# ----------------------------------------------------------------- sort phase

def pad_to_power_of_two(handle: BlockFile, enclave: Enclave) -> int:
    """Append all-dummy blocks; returns the original block count."""
    n = handle.block_count
    target = next_power_of_two(n) if n else 0
    enclave.append_dummy_blocks(handle, target - n)
    return n


def sort_phase(config: JobConfig, intermediate: BlockFile, enclave: Enclave) -> BlockFile:
    if config.sort_kind == "merge":
        return merge_sort_blocks(intermediate, enclave, oswap=config.oswap)
    n = pad_to_power_of_two(intermediate, enclave)
    out = bitonic_sort_blocks(intermediate, enclave, oswap=config.oswap)
    # Dummies sort last, so the real records fit in the first n blocks.
    out.truncate(n)
    return out


# --------------------------------------------------------------- reduce side

def reduce_phase(config: JobConfig, sorted_file: BlockFile, enclave: Enclave) -> tuple[BlockFile, int]:
    """Scan sorted records and emit one aggregate per key.

    In the padded modes one output record is written per input record:
    the aggregate where a group ends, a dummy elsewhere.  Returns the output
    file and the number of real aggregates.
    """
    layout = config.layout
    agg = config.aggregator
    meta = sorted_file.meta
    rpb = meta.records_per_block
    rs = meta.record_size
    dummy = layout.dummy
    pad = config.padding_mode != "none"
    buf = enclave.buffer
    src = sorted_file
    n = src.block_count
    out = enclave.new_file(meta.with_count(0), "reduce")
    if n == 0:
        return out, 0

    emitted = 0
    compact: list[int] = []
    acc = 0
    prev_key = -1
    cur_blk = buf.load(src, 0)
    cur_vals = rows_to_ints(cur_blk.records)
    touch_record(cur_blk, 0, trace.READ)
    cur = cur_vals[0]
    for b in range(n):
        nxt_blk = None
        if b + 1 < n:
            nxt_blk = buf.load(src, b + 1)
            nxt_vals = rows_to_ints(nxt_blk.records)
        out_vals = [dummy] * rpb
        out_idx = out.block_count
        for s in range(rpb):
            if s + 1 < rpb:
                touch_record(cur_blk, s + 1, trace.READ)
                nxt = cur_vals[s + 1]
            elif nxt_blk is not None:
                touch_record(nxt_blk, 0, trace.READ)
                nxt = nxt_vals[0]
            else:
                nxt = dummy
            ck, nk = layout.key(cur), layout.key(nxt)
            if nk < ck:
                raise UnsortedInputError(f"key decreases at block {b}, record {s}")
            real = 1 - layout.is_dummy(cur)
            start = int(ck != prev_key)
            val = layout.value(cur)
            acc = o_select(start, val, agg.combine(layout, acc, val))
            emit = int(ck != nk) & real
            rec = o_select(emit, layout.with_value(ck, acc), dummy)
            emitted += emit
            prev_key = ck
            cur = nxt
            if pad:
                trace.emit_record(trace.WRITE, out.file_id, out_idx, s)
                out_vals[s] = rec
            elif emit:
                compact.append(rec)
                if len(compact) == rpb:
                    _write_vals(enclave, out, compact, rs)
                    compact = []
        if pad:
            _write_vals(enclave, out, out_vals, rs)
        buf.discard(src, b)
        if nxt_blk is not None:
            cur_blk, cur_vals = nxt_blk, nxt_vals
    if not pad and compact:
        _write_vals(enclave, out, compact + [dummy] * (rpb - len(compact)), rs)
    return out, emitted


def _write_vals(enclave: Enclave, handle: BlockFile, vals: list[int], record_size: int) -> None:
    idx = handle.block_count
    buf = enclave.buffer
    buf.put(handle, idx, PlainBlock(handle.file_id, idx, ints_to_rows(vals, record_size)))
    buf.flush(handle, idx)


def post_process(config: JobConfig, padded: BlockFile, distinct_keys: int, enclave: Enclave) -> BlockFile:
    """Sort the padded output (dummies last) and keep ceil(k / rpb) blocks."""
    pad_to_power_of_two(padded, enclave)
    out = bitonic_sort_blocks(padded, enclave, oswap=config.oswap)
    out.truncate(math.ceil(distinct_keys / padded.records_per_block))
    return out


# ---------------------------------------------------------------------- job

def run_job(config: JobConfig, map_fn: MapFunction, input_file: BlockFile,
            enclave: Optional[Enclave] = None,
            output_path: Union[str, Path, None] = None) -> JobResult:
    """Run map, sort, reduce and (per padding mode) compaction.

    Intermediate files live in the enclave's work directory.  With
    ``output_path`` the final file is moved there; otherwise it stays in
    the work directory and the caller owns the enclave's cleanup.
    """
    own = enclave is None
    if own:
        enclave = Enclave(config.seal_key, config.workdir, config.buffer_capacity)
    phases: dict = {}
    try:
        with trace.phase("map"):
            inter = map_phase(config, map_fn, input_file, enclave)
        phases["map"] = inter.block_count
        with trace.phase("sort"):
            sorted_file = sort_phase(config, inter, enclave)
        phases["sort"] = sorted_file.block_count
        with trace.phase("reduce"):
            out, k = reduce_phase(config, sorted_file, enclave)
        phases["reduce"] = out.block_count
        if config.padding_mode == "pad_then_postprocess":
            with trace.phase("post"):
                out = post_process(config, out, k, enclave)
            phases["post"] = out.block_count
        enclave.buffer.flush_all()
        if output_path is not None:
            output_path = Path(output_path)
            os.replace(out.path, output_path)
            out.path = output_path
            enclave.files.remove(out)
    except BaseException:
        if own:
            enclave.close(remove=not config.keep_intermediates)
        raise
    if own and output_path is not None:
        enclave.close(remove=not config.keep_intermediates)
    elif not config.keep_intermediates:
        for f in list(enclave.files):
            if f is not out:
                f.close()
                Path(f.path).unlink(missing_ok=True)
                enclave.files.remove(f)
    return JobResult(out, k, phases)
