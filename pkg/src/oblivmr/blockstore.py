"""Untrusted block-file storage.

This is the only code that touches persistent bytes.  It never sees
plaintext: blocks arrive already sealed by the enclave and are stored at
fixed offsets so any block can be addressed in O(1).

On-disk layout (little-endian)::

    superblock: magic "SGMR" | version u16 | record_size u32
                | records_per_block u32 | block_count u64 | reserved 16 bytes
    block:      file_id u64 | block_id u64 | nonce 12 bytes
                | ciphertext (payload_size bytes) | auth_tag 16 bytes
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from . import trace

MAGIC = b"SGMR"
VERSION = 1
SUPERBLOCK = struct.Struct("<4sHIIQ16s")
HEADER = struct.Struct("<QQ12s")
NONCE_SIZE = 12
TAG_SIZE = 16
# Real keys never start with this many 0xFF bytes; it marks dummy records.
KEY_PREFIX_SIZE = 8

_COUNT_OFFSET = 4 + 2 + 4 + 4


class BlockStoreError(Exception):
    pass


class InvalidMetaError(BlockStoreError, ValueError):
    pass


class BlockIndexError(BlockStoreError, IndexError):
    pass


class SizeMismatchError(BlockStoreError, ValueError):
    pass


class StorageError(BlockStoreError, OSError):
    pass


@dataclass(slots=True)
class BlockHeader:
    file_id: int
    block_id: int
    nonce: bytes

    def pack(self) -> bytes:
        return HEADER.pack(self.file_id, self.block_id, self.nonce)


@dataclass(slots=True)
class SealedBlock:
    header: BlockHeader
    ciphertext: bytes
    auth_tag: bytes

    def to_bytes(self) -> bytes:
        return self.header.pack() + self.ciphertext + self.auth_tag

    @classmethod
    def from_bytes(cls, buf: bytes, payload_size: int) -> "SealedBlock":
        if len(buf) != HEADER.size + payload_size + TAG_SIZE:
            raise SizeMismatchError(f"sealed block is {len(buf)} bytes, expected "
                                    f"{HEADER.size + payload_size + TAG_SIZE}")
        fid, bid, nonce = HEADER.unpack_from(buf)
        end = HEADER.size + payload_size
        return cls(BlockHeader(fid, bid, nonce), bytes(buf[HEADER.size:end]), bytes(buf[end:]))

    def __len__(self) -> int:
        return HEADER.size + len(self.ciphertext) + TAG_SIZE


@dataclass(frozen=True)
class BlockFileMeta:
    record_size: int
    records_per_block: int
    block_count: int = 0

    def __post_init__(self):
        if self.records_per_block < 1:
            raise InvalidMetaError("records_per_block must be >= 1")
        if self.record_size < KEY_PREFIX_SIZE + 1:
            raise InvalidMetaError(f"record_size must be >= {KEY_PREFIX_SIZE + 1}")
        if self.block_count < 0:
            raise InvalidMetaError("block_count must be >= 0")

    @property
    def payload_size(self) -> int:
        return self.record_size * self.records_per_block

    @property
    def sealed_size(self) -> int:
        return HEADER.size + self.payload_size + TAG_SIZE

    @classmethod
    def for_block_size(cls, block_size: int, record_size: Optional[int] = None,
                       records_per_block: Optional[int] = None) -> "BlockFileMeta":
        """Fit fixed-size records into a nominal block size.

        Either the natural record size or the wanted records-per-block is
        given.  The record size is then rounded up to ``block_size // rpb`` so
        the records fill the block as closely as whole bytes allow; the extra
        bytes per record are zero padding.
        """
        if (record_size is None) == (records_per_block is None):
            raise InvalidMetaError("give exactly one of record_size, records_per_block")
        if records_per_block is None:
            if record_size <= 0:
                raise InvalidMetaError("record_size must be positive")
            records_per_block = block_size // record_size
        if records_per_block < 1:
            raise InvalidMetaError(f"block_size {block_size} cannot hold one record")
        return cls(record_size=block_size // records_per_block,
                   records_per_block=records_per_block)

    def with_count(self, n: int) -> "BlockFileMeta":
        return BlockFileMeta(self.record_size, self.records_per_block, n)


class BlockFile:
    """Handle to one block file.  Single writer; not safe to share across threads."""

    def __init__(self, path: Path, fd: int, meta: BlockFileMeta, file_id: Optional[int]):
        self.path = path
        self._fd = fd
        self.meta = meta
        self.block_count = meta.block_count
        self.file_id = file_id
        self._sealed_size = meta.sealed_size
        self._payload_size = meta.payload_size

    def __repr__(self) -> str:
        return (f"BlockFile({str(self.path)!r}, file_id={self.file_id}, "
                f"blocks={self.block_count}, record_size={self.meta.record_size}, "
                f"rpb={self.meta.records_per_block})")

    @property
    def records_per_block(self) -> int:
        return self.meta.records_per_block

    @property
    def record_size(self) -> int:
        return self.meta.record_size

    def _offset(self, index: int) -> int:
        return SUPERBLOCK.size + index * self._sealed_size

    def read_block(self, index: int) -> SealedBlock:
        if not 0 <= index < self.block_count:
            raise BlockIndexError(f"block {index} out of range [0, {self.block_count})")
        size = self._sealed_size
        try:
            buf = os.pread(self._fd, size, self._offset(index))
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        if len(buf) != size:
            raise StorageError(f"short read at block {index}")
        trace.emit_block(trace.UNTRUSTED, trace.READ, self.file_id or 0, index)
        return SealedBlock.from_bytes(buf, self._payload_size)

    def write_block(self, index: int, block: SealedBlock) -> None:
        if not 0 <= index <= self.block_count:
            raise BlockIndexError(f"write at {index} leaves a gap (block_count={self.block_count})")
        if len(block.ciphertext) != self._payload_size or len(block.auth_tag) != TAG_SIZE:
            raise SizeMismatchError(f"payload is {len(block.ciphertext)} bytes, file expects "
                                    f"{self.meta.payload_size}")
        try:
            os.pwrite(self._fd, block.to_bytes(), self._offset(index))
            if index == self.block_count:
                self.block_count += 1
                os.pwrite(self._fd, struct.pack("<Q", self.block_count), _COUNT_OFFSET)
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        trace.emit_block(trace.UNTRUSTED, trace.WRITE, self.file_id or 0, index)

    def truncate(self, block_count: int) -> None:
        """Drop trailing blocks.  Only the file size changes; no block is read."""
        if not 0 <= block_count <= self.block_count:
            raise BlockIndexError(f"cannot truncate {self.block_count} blocks to {block_count}")
        try:
            os.ftruncate(self._fd, self._offset(block_count))
            os.pwrite(self._fd, struct.pack("<Q", block_count), _COUNT_OFFSET)
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        self.block_count = block_count

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def create_file(meta: BlockFileMeta, path: Union[str, Path],
                file_id: Optional[int] = None) -> BlockFile:
    """Create an empty block file (metadata only, zero blocks)."""
    if not isinstance(meta, BlockFileMeta):
        raise InvalidMetaError("meta must be a BlockFileMeta")
    path = Path(path)
    try:
        fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
        os.pwrite(fd, SUPERBLOCK.pack(MAGIC, VERSION, meta.record_size,
                                      meta.records_per_block, 0, bytes(16)), 0)
    except OSError as exc:
        raise StorageError(str(exc)) from exc
    return BlockFile(path, fd, meta.with_count(0), file_id)


def open_file(path: Union[str, Path], file_id: Optional[int] = None) -> BlockFile:
    """Open an existing block file.

    Without ``file_id`` the identity is taken from block 0's header; the
    enclave still verifies every block against it, so a swapped-in block
    from another file is rejected.
    """
    path = Path(path)
    try:
        fd = os.open(path, os.O_RDWR)
        raw = os.pread(fd, SUPERBLOCK.size, 0)
    except OSError as exc:
        raise StorageError(str(exc)) from exc
    if len(raw) != SUPERBLOCK.size:
        os.close(fd)
        raise StorageError(f"{path}: truncated superblock")
    magic, version, record_size, rpb, count, _ = SUPERBLOCK.unpack(raw)
    if magic != MAGIC or version != VERSION:
        os.close(fd)
        raise InvalidMetaError(f"{path}: not a block file (magic={magic!r}, version={version})")
    meta = BlockFileMeta(record_size, rpb, count)
    expected = SUPERBLOCK.size + count * meta.sealed_size
    if os.fstat(fd).st_size < expected:
        os.close(fd)
        raise StorageError(f"{path}: file shorter than its {count} blocks")
    if file_id is None and count:
        file_id = HEADER.unpack(os.pread(fd, HEADER.size, SUPERBLOCK.size))[0]
    return BlockFile(path, fd, meta, file_id)


def read_block(handle: BlockFile, index: int) -> SealedBlock:
    return handle.read_block(index)


def write_block(handle: BlockFile, index: int, block: SealedBlock) -> None:
    handle.write_block(index, block)
