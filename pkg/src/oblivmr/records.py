"""Fixed-width key-value records.

Inside the enclave a record is handled as one big-endian integer
``key || value || zero padding``.  Integer order is then exactly byte-wise
lexicographic order with the key as the leading field, and records can be
selected or swapped with plain bit masking.

A record is a dummy when its first 8 key bytes are all 0xFF.  The canonical
dummy is the all-0xFF record, which sorts after every real record and needs
no knowledge of the key width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .blockstore import KEY_PREFIX_SIZE

_PREFIX_ONES = (1 << (8 * KEY_PREFIX_SIZE)) - 1
LANE_BITS = 64
_LANE_MASK = (1 << LANE_BITS) - 1
_SIGN = 1 << (LANE_BITS - 1)


class RecordOverflowError(ValueError):
    """A key or value does not fit the configured record layout."""


@dataclass(frozen=True)
class KVRecord:
    key: bytes
    value: bytes

    @property
    def dummy(self) -> bool:
        return self.key[:KEY_PREFIX_SIZE] == b"\xff" * KEY_PREFIX_SIZE


@dataclass(frozen=True)
class RecordLayout:
    record_size: int
    key_size: int

    def __post_init__(self):
        if self.key_size < KEY_PREFIX_SIZE:
            raise ValueError(f"key_size must be >= {KEY_PREFIX_SIZE}")
        if self.key_size >= self.record_size:
            raise ValueError("record must have room for a value after the key")
        # Derived sizes are hot in inner loops; compute them once.
        vs = self.record_size - self.key_size
        object.__setattr__(self, "value_size", vs)
        object.__setattr__(self, "value_bits", 8 * vs)
        object.__setattr__(self, "value_mask", (1 << (8 * vs)) - 1)
        object.__setattr__(self, "max_lanes", vs // 8)
        object.__setattr__(self, "dummy", dummy_int(self.record_size))
        object.__setattr__(self, "_prefix_shift", 8 * (self.record_size - KEY_PREFIX_SIZE))

    def key(self, rec: int) -> int:
        return rec >> self.value_bits

    def value(self, rec: int) -> int:
        return rec & self.value_mask

    def is_dummy(self, rec: int) -> int:
        return int((rec >> self._prefix_shift) == _PREFIX_ONES)

    def with_value(self, key: int, value: int) -> int:
        return (key << self.value_bits) | value

    def make(self, key: bytes, value: bytes = b"") -> int:
        if len(key) > self.key_size:
            raise RecordOverflowError(f"key of {len(key)} bytes exceeds key_size {self.key_size}")
        if len(value) > self.value_size:
            raise RecordOverflowError(f"value of {len(value)} bytes exceeds {self.value_size}")
        if key[:KEY_PREFIX_SIZE] == b"\xff" * KEY_PREFIX_SIZE:
            raise RecordOverflowError("real keys may not use the dummy prefix")
        raw = key.ljust(self.key_size, b"\0") + value.ljust(self.value_size, b"\0")
        return int.from_bytes(raw, "big")

    def key_bytes(self, rec: int) -> bytes:
        return self.key(rec).to_bytes(self.key_size, "big")

    def value_bytes(self, rec: int) -> bytes:
        return self.value(rec).to_bytes(self.value_size, "big")

    def to_kv(self, rec: int) -> KVRecord:
        return KVRecord(self.key_bytes(rec), self.value_bytes(rec))

    def lane_shift(self, i: int) -> int:
        return self.value_bits - LANE_BITS * (i + 1)

    def lanes(self, rec: int, n: int) -> list[int]:
        """Signed 64-bit lanes at the front of the value field."""
        shift = self.value_bits
        out = []
        for _ in range(n):
            shift -= LANE_BITS
            x = (rec >> shift) & _LANE_MASK
            out.append(x - ((x & _SIGN) << 1))
        return out

    def pack_lanes(self, lanes: Sequence[int]) -> int:
        """Value-field integer holding ``lanes`` as signed 64-bit big-endian."""
        if len(lanes) > self.max_lanes:
            raise RecordOverflowError(f"{len(lanes)} lanes exceed value width {self.value_size}")
        v = 0
        for i, x in enumerate(lanes):
            if not -_SIGN <= x < _SIGN:
                raise RecordOverflowError(f"lane value {x} outside int64")
            v |= (x & _LANE_MASK) << self.lane_shift(i)
        return v


def lanes_bytes(lanes: Iterable[int]) -> bytes:
    return b"".join((x & _LANE_MASK).to_bytes(8, "big") for x in lanes)


def rows_to_ints(rows: np.ndarray) -> list[int]:
    n, rs = rows.shape
    raw = rows.tobytes()
    return [int.from_bytes(raw[i * rs:(i + 1) * rs], "big") for i in range(n)]


def ints_to_rows(values: Sequence[int], record_size: int) -> np.ndarray:
    raw = b"".join(v.to_bytes(record_size, "big") for v in values)
    return np.frombuffer(raw, dtype=np.uint8).reshape(len(values), record_size).copy()


def dummy_int(record_size: int) -> int:
    return (1 << (8 * record_size)) - 1


def dummy_rows(n: int, record_size: int) -> np.ndarray:
    return np.full((n, record_size), 0xFF, dtype=np.uint8)


def row_is_dummy(rows: np.ndarray) -> np.ndarray:
    return (rows[:, :KEY_PREFIX_SIZE] == 0xFF).all(axis=1)
