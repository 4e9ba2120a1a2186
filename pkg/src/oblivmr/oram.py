"""Path ORAM over an in-memory untrusted bucket store.

Tree in heap layout (root = bucket 0, children 2b+1 and 2b+2) with
``L = ceil(log2 N)`` so there are ``2**L >= N`` leaves.  Each bucket holds Z
slots and is sealed as a unit.  The position map and stash stay in the
enclave.  The untrusted trace of every access is the (L+1)·Z slots of one
root-to-leaf path read, then the same slots written.

Inside the enclave the target is picked out of the loaded path and the
stash with masking over every slot, so which slot held it is not
observable.
"""

from __future__ import annotations

import math
import os
import random
import secrets
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import trace
from ._kernels import masked_extract
from .enclave import SealKey, TagMismatch

EMPTY = np.iinfo(np.uint64).max
_ALL_ONES = (1 << 64) - 1
_AD = struct.Struct("<QQ")


class StashOverflowError(RuntimeError):
    pass


class UnknownBlockError(IndexError):
    pass


@dataclass
class OramState:
    n_blocks: int
    z: int
    payload_size: int
    height: int
    stash_capacity: int
    file_id: int
    key: SealKey
    rng: random.Random
    position: np.ndarray  # block id -> leaf
    store: list  # untrusted: sealed bucket bytes per bucket
    ws_ids: np.ndarray  # enclave working set: loaded path, then stash
    ws_words: np.ndarray  # payloads as uint64 words, zero padded
    stash_max: int = 0
    accesses: int = 0
    _aead: Optional[AESGCM] = field(default=None, repr=False)
    _nonce: int = 0
    _prefix: bytes = b""

    @property
    def n_leaves(self) -> int:
        return 1 << self.height

    @property
    def n_buckets(self) -> int:
        return (1 << (self.height + 1)) - 1

    @property
    def n_slots(self) -> int:
        return self.n_buckets * self.z

    @property
    def path_slots(self) -> int:
        return (self.height + 1) * self.z

    @property
    def stash_ids(self) -> np.ndarray:
        return self.ws_ids[self.path_slots:]

    @property
    def stash_occupancy(self) -> int:
        return int((self.stash_ids != EMPTY).sum())

    def path(self, leaf: int) -> list[int]:
        """Bucket indices from root to ``leaf``."""
        return [(1 << lv) - 1 + (leaf >> (self.height - lv)) for lv in range(self.height + 1)]

    # -- bucket sealing (untrusted side only ever sees these bytes)

    def _seal(self, bucket: int, ids: np.ndarray, words: np.ndarray) -> bytes:
        self._nonce += 1
        nonce = self._prefix + self._nonce.to_bytes(8, "big")
        data = words.view(np.uint8)[:, :self.payload_size]
        pt = ids.astype(">u8").tobytes() + data.tobytes()
        return nonce + self._aead.encrypt(nonce, pt, _AD.pack(self.file_id, bucket))

    def _unseal_into(self, bucket: int, blob: bytes, at: int) -> None:
        """Decrypt one bucket into working-set slots [at, at + Z)."""
        try:
            pt = self._aead.decrypt(blob[:12], blob[12:], _AD.pack(self.file_id, bucket))
        except InvalidTag:
            raise TagMismatch(f"ORAM bucket {bucket} failed authentication") from None
        z = self.z
        self.ws_ids[at:at + z] = np.frombuffer(pt[:8 * z], dtype=">u8")
        data = np.frombuffer(pt[8 * z:], dtype=np.uint8).reshape(z, self.payload_size)
        self.ws_words[at:at + z].view(np.uint8)[:, :self.payload_size] = data


def _to_words(data: np.ndarray, n_words: int) -> np.ndarray:
    buf = np.zeros(n_words * 8, dtype=np.uint8)
    buf[:len(data)] = data
    return buf.view(np.uint64)


def oram_init(n_blocks: int, z: int = 4, payload_size: int = 64, *, seed: Optional[int] = None,
              key: Optional[SealKey] = None, stash_capacity: int = 128) -> OramState:
    """Empty tree (all slots dummy) and a uniform random position map."""
    if n_blocks < 1 or z < 1 or payload_size < 1:
        raise ValueError("need n_blocks >= 1, z >= 1, payload_size >= 1")
    height = math.ceil(math.log2(n_blocks)) if n_blocks > 1 else 0
    rng = random.Random(seed)
    m = (height + 1) * z + stash_capacity
    st = OramState(
        n_blocks=n_blocks, z=z, payload_size=payload_size, height=height,
        stash_capacity=stash_capacity, file_id=secrets.randbits(63) | 1,
        key=key or SealKey.generate(), rng=rng,
        position=np.array([rng.randrange(1 << height) for _ in range(n_blocks)], dtype=np.int64),
        store=[],
        ws_ids=np.full(m, EMPTY, dtype=np.uint64),
        ws_words=np.zeros((m, -(-payload_size // 8)), dtype=np.uint64),
    )
    st._aead = AESGCM(st.key.material)
    st._prefix = os.urandom(4)
    ids = np.full(z, EMPTY, dtype=np.uint64)
    words = np.zeros((z, st.ws_words.shape[1]), dtype=np.uint64)
    st.store = [st._seal(b, ids, words) for b in range(st.n_buckets)]
    return st


def _emit_slots(st: OramState, buckets: list[int], op: str) -> None:
    if trace.recording_events():
        for b in buckets:
            for s in range(st.z):
                trace.emit_block(trace.UNTRUSTED, op, st.file_id, b * st.z + s)
    else:
        trace.add_counts(trace.UNTRUSTED, trace.BLOCK, op, len(buckets) * st.z)


def _emit_touches(st: OramState, n: int) -> None:
    if trace.recording_events():
        for op in (trace.READ, trace.WRITE):
            for w in range(n):
                trace.emit_record(op, st.file_id, 0, w)
    else:
        trace.add_counts(trace.ENCLAVE, trace.RECORD, trace.READ, n)
        trace.add_counts(trace.ENCLAVE, trace.RECORD, trace.WRITE, n)


def oram_access(st: OramState, op: str, block_id: int, data: Optional[bytes] = None) -> bytes:
    """Read or write one logical block; returns its payload (before a write)."""
    if not 0 <= block_id < st.n_blocks:
        raise UnknownBlockError(f"block {block_id} not in [0, {st.n_blocks})")
    if op not in (trace.READ, trace.WRITE):
        raise ValueError(f"op must be read or write, got {op!r}")
    is_write = int(op == trace.WRITE)
    if is_write:
        if data is None or len(data) != st.payload_size:
            raise ValueError(f"payload must be exactly {st.payload_size} bytes")
        new = np.frombuffer(data, dtype=np.uint8)
    else:
        new = np.zeros(st.payload_size, dtype=np.uint8)

    leaf = int(st.position[block_id])
    st.position[block_id] = st.rng.randrange(st.n_leaves)
    buckets = st.path(leaf)
    z, ps = st.z, st.path_slots

    _emit_slots(st, buckets, trace.READ)
    ids, words = st.ws_ids, st.ws_words  # path slots first, then the stash
    for lv, b in enumerate(buckets):
        st._unseal_into(b, st.store[b], lv * z)

    # Masked extraction: every slot is read and rewritten.
    _emit_touches(st, len(ids))
    hit = ids == np.uint64(block_id)
    free = ids == EMPTY
    found = hit.any()
    if not found and not free.any():
        raise StashOverflowError("no free slot in path or stash")
    claim = np.zeros_like(hit)
    claim[np.argmax(free)] = True
    sel = np.where(found, hit, claim)
    result = np.empty(words.shape[1], dtype=np.uint64)
    wmask = np.uint64(_ALL_ONES if is_write else 0)
    masked_extract(ids, words, sel.view(np.uint8), _to_words(new, words.shape[1]), wmask, result)
    ids[sel] = block_id

    # Greedy eviction: each block goes to the deepest bucket on this path
    # that its own leaf's path shares and that still has room.
    real = np.flatnonzero(ids != EMPTY)
    lv_max = st.height - np.frexp((st.position[ids[real].astype(np.int64)] ^ leaf).astype(np.float64))[1]
    order = np.argsort(-lv_max, kind="stable")
    room = [z] * (st.height + 1)
    src = np.full(len(ids), -1, dtype=np.int64)
    stashed = ps
    for o in order.tolist():
        lv = int(lv_max[o])
        while lv >= 0 and room[lv] == 0:
            lv -= 1
        if lv >= 0:
            src[lv * z + (z - room[lv])] = real[o]
            room[lv] -= 1
        else:
            if stashed == len(ids):
                raise StashOverflowError(f"stash over capacity {st.stash_capacity}")
            src[stashed] = real[o]
            stashed += 1
    empty = src < 0
    st.ws_ids = ids = np.where(empty, EMPTY, ids[src])
    st.ws_words = words = words[src]
    words[empty] = 0
    for lv, b in enumerate(buckets):
        st.store[b] = st._seal(b, ids[lv * z:(lv + 1) * z], words[lv * z:(lv + 1) * z])
    st.stash_max = max(st.stash_max, stashed - ps)
    st.accesses += 1
    _emit_slots(st, buckets, trace.WRITE)
    return result.view(np.uint8)[:st.payload_size].tobytes()


def oram_read(st: OramState, block_id: int) -> bytes:
    return oram_access(st, trace.READ, block_id)


def oram_write(st: OramState, block_id: int, data: bytes) -> bytes:
    return oram_access(st, trace.WRITE, block_id, data)


def oram_scan(st: OramState, n: int) -> None:
    """Read logical blocks 0..n-1 in order."""
    if n > st.n_blocks:
        raise UnknownBlockError(f"scan of {n} blocks exceeds {st.n_blocks}")
    for i in range(n):
        oram_access(st, trace.READ, i)


def oram_bulk_load(st: OramState, blocks: list[bytes]) -> None:
    """Untraced setup: install initial contents through normal accesses."""
    with trace.suspended():
        for i, b in enumerate(blocks):
            oram_access(st, trace.WRITE, i, b)


def leaf_of_bucket(st: OramState, bucket: int) -> Optional[int]:
    first_leaf = (1 << st.height) - 1
    return bucket - first_leaf if bucket >= first_leaf else None


def normalize_path(z: int):
    """Signature normalizer that keeps (level, slot) and drops which leaf.

    The leaf of each access is fresh randomness, like a nonce; what must
    not vary with the data is the shape of the access.
    """
    def norm(item: tuple) -> tuple:
        region, gran, op, f, bid, rid = item
        if gran == trace.BLOCK:
            bucket, slot = divmod(bid, z)
            return (region, gran, op, f, (bucket + 1).bit_length() - 1, slot, rid)
        return item
    return norm
