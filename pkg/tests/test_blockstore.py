import os

import pytest
from hypothesis import given, strategies as st

from oblivmr import trace
from oblivmr.blockstore import (
    BlockFileMeta,
    BlockHeader,
    SUPERBLOCK,
    BlockIndexError,
    InvalidMetaError,
    SealedBlock,
    SizeMismatchError,
    create_file,
    open_file,
)


def _sealed(meta, fid, bid, fill=0):
    return SealedBlock(BlockHeader(fid, bid, os.urandom(12)), bytes([fill]) * meta.payload_size, b"\x01" * 16)


def test_payload_size_arithmetic():
    assert BlockFileMeta(64, 32).payload_size == 2048


def test_zero_records_per_block_rejected():
    with pytest.raises(InvalidMetaError):
        BlockFileMeta(64, 0)


def test_kmeans_block_geometry():
    meta = BlockFileMeta.for_block_size(2048, records_per_block=30)
    assert meta.record_size == 68
    assert meta.payload_size == 2040


def test_record_size_needs_key_prefix():
    with pytest.raises(InvalidMetaError):
        BlockFileMeta(8, 4)


def test_create_is_empty(tmp_path):
    with create_file(BlockFileMeta(16, 4), tmp_path / "f.blk", file_id=7) as f:
        assert f.block_count == 0


def test_round_trip_and_reopen(tmp_path):
    meta = BlockFileMeta(16, 4)
    path = tmp_path / "f.blk"
    with create_file(meta, path, file_id=9) as f:
        blocks = [_sealed(meta, 9, i, i) for i in range(3)]
        for i, b in enumerate(blocks):
            f.write_block(i, b)
        assert f.read_block(0).to_bytes() == blocks[0].to_bytes()
    with open_file(path) as g:
        assert g.block_count == 3 and g.file_id == 9
        assert [g.read_block(i).to_bytes() for i in range(3)] == [b.to_bytes() for b in blocks]


def test_read_out_of_range(tmp_path):
    with create_file(BlockFileMeta(16, 4), tmp_path / "f.blk", file_id=1) as f:
        f.write_block(0, _sealed(f.meta, 1, 0))
        with pytest.raises(BlockIndexError):
            f.read_block(1)


def test_write_gap_and_size_mismatch(tmp_path):
    meta = BlockFileMeta(16, 4)
    with create_file(meta, tmp_path / "f.blk", file_id=1) as f:
        with pytest.raises(BlockIndexError):
            f.write_block(1, _sealed(meta, 1, 1))
        bad = SealedBlock(BlockHeader(1, 0, bytes(12)), b"x" * (meta.payload_size - 1), b"\0" * 16)
        with pytest.raises(SizeMismatchError):
            f.write_block(0, bad)


def test_overwrite_emits_one_write(tmp_path):
    meta = BlockFileMeta(16, 4)
    with create_file(meta, tmp_path / "f.blk", file_id=1) as f:
        f.write_block(0, _sealed(meta, 1, 0))
        tr = trace.capture(f.write_block, 0, _sealed(meta, 1, 0, 5))
        assert [(e.region, e.op, e.block_id) for e in tr] == [(trace.UNTRUSTED, trace.WRITE, 0)]
        assert f.block_count == 1


def test_sequential_scan_trace(tmp_path):
    # 21000 blocks of minimal size: read events exactly N, ascending
    meta = BlockFileMeta(9, 1)
    n = 21000
    with create_file(meta, tmp_path / "f.blk", file_id=3) as f:
        with trace.suspended():
            for i in range(n):
                f.write_block(i, _sealed(meta, 3, i))

        def scan():
            for i in range(n):
                f.read_block(i)
        tr = trace.capture(scan)
    ids = [e.block_id for e in tr]
    assert ids == list(range(n))
    assert trace.trace_stats(tr).untrusted_reads == n


@given(st.integers(9, 80), st.integers(1, 8), st.integers(1, 5))
def test_all_blocks_same_serialized_size(rs, rpb, n):
    meta = BlockFileMeta(rs, rpb)
    sizes = {len(_sealed(meta, 1, i).to_bytes()) for i in range(n)}
    assert sizes == {meta.sealed_size}


@given(st.binary(min_size=32, max_size=32), st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
def test_sealed_block_bytes_round_trip(payload, fid, bid):
    sb = SealedBlock(BlockHeader(fid, bid, bytes(range(12))), payload, bytes(16))
    assert SealedBlock.from_bytes(sb.to_bytes(), 32).to_bytes() == sb.to_bytes()


def test_open_rejects_foreign_file(tmp_path):
    p = tmp_path / "junk"
    p.write_bytes(b"not a block file at all, definitely not" * 2)
    with pytest.raises(InvalidMetaError):
        open_file(p)


def test_truncate(tmp_path):
    meta = BlockFileMeta(16, 2)
    with create_file(meta, tmp_path / "f.blk", file_id=1) as f:
        for i in range(4):
            f.write_block(i, _sealed(meta, 1, i))
        f.truncate(1)
        assert f.block_count == 1
    with open_file(tmp_path / "f.blk") as g:
        assert g.block_count == 1
        assert os.path.getsize(g.path) == SUPERBLOCK.size + meta.sealed_size
