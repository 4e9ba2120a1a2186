"""File encoding utility: raw records in, sealed block file out."""

from __future__ import annotations

import secrets
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .blockstore import BlockFile, BlockFileMeta, create_file, open_file
from .enclave import PlainBlock, SealKey, seal_block, unseal_block
from .records import KEY_PREFIX_SIZE, RecordOverflowError, dummy_rows, row_is_dummy


def encode_records(records: Iterable[bytes], meta: BlockFileMeta, key: SealKey,
                   path: Union[str, Path], file_id: Optional[int] = None) -> BlockFile:
    """Seal ``records`` (each zero-padded to record_size) into a new file.

    The last block is filled with dummy records.
    """
    rs, rpb = meta.record_size, meta.records_per_block
    handle = create_file(meta.with_count(0), path, file_id=file_id or (secrets.randbits(63) | 1))
    rows = dummy_rows(rpb, rs)
    fill = 0

    def flush():
        nonlocal rows, fill
        idx = handle.block_count
        handle.write_block(idx, seal_block(PlainBlock(handle.file_id, idx, rows), key))
        rows = dummy_rows(rpb, rs)
        fill = 0

    for rec in records:
        if len(rec) > rs:
            raise RecordOverflowError(f"record of {len(rec)} bytes exceeds record_size {rs}")
        if rec[:KEY_PREFIX_SIZE] == b"\xff" * KEY_PREFIX_SIZE:
            raise RecordOverflowError("record starts with the dummy marker")
        rows[fill] = np.frombuffer(rec.ljust(rs, b"\0"), dtype=np.uint8)
        fill += 1
        if fill == rpb:
            flush()
    if fill:
        flush()
    return handle


def decode_records(handle: BlockFile, key: SealKey, keep_dummies: bool = False) -> list[bytes]:
    """Unseal and verify every block; returns the records in file order."""
    out = []
    for idx in range(handle.block_count):
        plain = unseal_block(handle.read_block(idx), handle.file_id, idx, key, handle.record_size)
        dummies = row_is_dummy(plain.records)
        for row, d in zip(plain.records, dummies):
            if keep_dummies or not d:
                out.append(row.tobytes())
    return out


def decode_file(path: Union[str, Path], key: SealKey) -> list[bytes]:
    with open_file(path) as handle:
        return decode_records(handle, key)
