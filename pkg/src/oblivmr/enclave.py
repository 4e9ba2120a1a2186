"""Simulated trusted region.

Seals and unseals blocks with AES-GCM (the cleartext block header is bound
in as associated data), checks block and file identity, owns the bounded
block buffer and tags record accesses for the auditor.
"""

from __future__ import annotations

import os
import secrets
import shutil
import tempfile
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import trace
from .blockstore import (
    BlockFile,
    BlockFileMeta,
    BlockHeader,
    SealedBlock,
    TAG_SIZE,
    create_file,
)
from .records import dummy_rows

NONCE_PREFIX_SIZE = 4


class IntegrityError(Exception):
    pass


class TagMismatch(IntegrityError):
    """Ciphertext, tag or header was modified."""


class BlockIdMismatch(IntegrityError):
    """A valid block of the right file sits at the wrong index."""


class FileIdMismatch(IntegrityError):
    """A valid block from another file (or phase) was inserted."""


@dataclass(frozen=True)
class SealKey:
    material: bytes

    def __post_init__(self):
        if len(self.material) != 16:
            raise ValueError("seal key must be 128 bits")

    def __repr__(self) -> str:
        return "SealKey(<hidden>)"

    @classmethod
    def generate(cls) -> "SealKey":
        return cls(secrets.token_bytes(16))

    @classmethod
    def from_hex(cls, text: str) -> "SealKey":
        return cls(bytes.fromhex(text.strip()))


@dataclass
class PlainBlock:
    file_id: int
    block_id: int
    records: np.ndarray  # (records_per_block, record_size) uint8

    @property
    def records_per_block(self) -> int:
        return self.records.shape[0]

    @classmethod
    def empty(cls, file_id: int, block_id: int, meta: BlockFileMeta) -> "PlainBlock":
        return cls(file_id, block_id, dummy_rows(meta.records_per_block, meta.record_size))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PlainBlock):
            return NotImplemented
        return (self.file_id == other.file_id and self.block_id == other.block_id
                and np.array_equal(self.records, other.records))


class _Sealer:
    """AEAD state for one key: random per-process nonce prefix + counter."""

    def __init__(self, key: SealKey):
        self.aead = AESGCM(key.material)
        self.prefix = os.urandom(NONCE_PREFIX_SIZE)
        self.counter = 0

    def next_nonce(self) -> bytes:
        self.counter += 1
        return self.prefix + self.counter.to_bytes(12 - NONCE_PREFIX_SIZE, "big")


_sealers: dict[bytes, _Sealer] = {}


def _sealer(key: SealKey) -> _Sealer:
    s = _sealers.get(key.material)
    if s is None:
        s = _sealers[key.material] = _Sealer(key)
    return s


def nonce_counter(nonce: bytes) -> int:
    return int.from_bytes(nonce[NONCE_PREFIX_SIZE:], "big")


def seal_block(plain: PlainBlock, key: SealKey) -> SealedBlock:
    s = _sealer(key)
    header = BlockHeader(plain.file_id, plain.block_id, s.next_nonce())
    out = s.aead.encrypt(header.nonce, plain.records.tobytes(), header.pack())
    return SealedBlock(header, out[:-TAG_SIZE], out[-TAG_SIZE:])


def unseal_block(sealed: SealedBlock, expected_file_id: int, expected_block_id: int,
                 key: SealKey, record_size: int) -> PlainBlock:
    """Decrypt and verify; no plaintext is returned unless every check passes."""
    h = sealed.header
    try:
        pt = _sealer(key).aead.decrypt(h.nonce, sealed.ciphertext + sealed.auth_tag, h.pack())
    except InvalidTag:
        raise TagMismatch(f"authentication failed for block {h.block_id}") from None
    if h.file_id != expected_file_id:
        raise FileIdMismatch(f"block belongs to file {h.file_id}, expected {expected_file_id}")
    if h.block_id != expected_block_id:
        raise BlockIdMismatch(f"found block {h.block_id} at index {expected_block_id}")
    rows = np.frombuffer(pt, dtype=np.uint8).reshape(-1, record_size).copy()
    return PlainBlock(h.file_id, h.block_id, rows)


def touch_record(block, record_index: int, mode: str) -> None:
    """Report one record access inside the enclave."""
    if not 0 <= record_index < block.records_per_block:
        raise IndexError(f"record {record_index} out of range [0, {block.records_per_block})")
    trace.emit_record(mode, block.file_id, block.block_id, record_index)


class EnclaveBuffer:
    """Bounded set of resident plaintext blocks with least-recently-used eviction.

    Eviction always reseals and writes the victim back, so the untrusted
    side cannot tell modified blocks from untouched ones.
    """

    def __init__(self, capacity: int, enclave: "Enclave"):
        if capacity < 2:
            raise ValueError("buffer capacity must be at least 2 blocks")
        self.capacity = capacity
        self.enclave = enclave
        self._resident: OrderedDict[tuple[int, int], tuple[BlockFile, PlainBlock]] = OrderedDict()
        self.evictions = 0
        self.max_resident = 0

    def __len__(self) -> int:
        return len(self._resident)

    def __contains__(self, item) -> bool:
        handle, index = item
        return (handle.file_id, index) in self._resident

    def _make_room(self) -> None:
        while len(self._resident) >= self.capacity:
            (_, index), (handle, plain) = self._resident.popitem(last=False)
            self.enclave.write_plain(handle, index, plain)
            self.evictions += 1

    def _install(self, handle: BlockFile, index: int, plain: PlainBlock) -> None:
        self._make_room()
        self._resident[(handle.file_id, index)] = (handle, plain)
        self.max_resident = max(self.max_resident, len(self._resident))
        assert len(self._resident) <= self.capacity

    def load(self, handle: BlockFile, index: int) -> PlainBlock:
        key = (handle.file_id, index)
        trace.emit_block(trace.ENCLAVE, trace.READ, handle.file_id, index)
        hit = self._resident.get(key)
        if hit is not None:
            self._resident.move_to_end(key)
            return hit[1]
        self._make_room()
        plain = self.enclave.read_plain(handle, index)
        self._install(handle, index, plain)
        return plain

    def put(self, handle: BlockFile, index: int, plain: PlainBlock) -> None:
        """Make ``plain`` the resident content of block ``index`` of ``handle``."""
        key = (handle.file_id, index)
        if key in self._resident:
            self._resident[key] = (handle, plain)
            self._resident.move_to_end(key)
        else:
            self._install(handle, index, plain)

    def flush(self, handle: BlockFile, index: int) -> None:
        """Seal and write one resident block, then release it."""
        _, plain = self._resident.pop((handle.file_id, index))
        self.enclave.write_plain(handle, index, plain)

    def discard(self, handle: BlockFile, index: int) -> None:
        self._resident.pop((handle.file_id, index), None)

    def flush_all(self) -> None:
        while self._resident:
            (_, index), (handle, plain) = self._resident.popitem(last=False)
            self.enclave.write_plain(handle, index, plain)


class Enclave:
    """One trusted execution context: key, block buffer and scratch storage."""

    def __init__(self, key: Optional[SealKey] = None, workdir: Union[str, Path, None] = None,
                 buffer_capacity: int = 4):
        self.key = key or SealKey.generate()
        self._owns_workdir = workdir is None
        self.workdir = Path(workdir) if workdir is not None else Path(tempfile.mkdtemp(prefix="oblivmr-"))
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.buffer = EnclaveBuffer(buffer_capacity, self)
        self.files: list[BlockFile] = []
        self._seq = 0

    def new_file_id(self) -> int:
        while True:
            fid = secrets.randbits(64)
            if fid:
                return fid

    def new_file(self, meta: BlockFileMeta, name: str = "tmp") -> BlockFile:
        """Create an empty intermediate file with a fresh file id."""
        self._seq += 1
        path = self.workdir / f"{self._seq:04d}-{name}.blk"
        f = create_file(meta, path, file_id=self.new_file_id())
        self.files.append(f)
        return f

    def seal(self, plain: PlainBlock) -> SealedBlock:
        return seal_block(plain, self.key)

    def read_plain(self, handle: BlockFile, index: int) -> PlainBlock:
        sealed = handle.read_block(index)
        return unseal_block(sealed, handle.file_id, index, self.key, handle.meta.record_size)

    def write_plain(self, handle: BlockFile, index: int, plain: PlainBlock) -> None:
        if plain.file_id != handle.file_id or plain.block_id != index:
            plain = PlainBlock(handle.file_id, index, plain.records)
        handle.write_block(index, self.seal(plain))

    def append_dummy_blocks(self, handle: BlockFile, n: int) -> None:
        for _ in range(n):
            idx = handle.block_count
            self.write_plain(handle, idx, PlainBlock.empty(handle.file_id, idx, handle.meta))

    def close(self, remove: Optional[bool] = None) -> None:
        for f in self.files:
            f.close()
        self.files.clear()
        if remove if remove is not None else self._owns_workdir:
            shutil.rmtree(self.workdir, ignore_errors=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def buffer_load(buffer: EnclaveBuffer, handle: BlockFile, index: int) -> PlainBlock:
    return buffer.load(handle, index)
