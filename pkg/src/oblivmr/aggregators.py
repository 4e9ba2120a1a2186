"""Hierarchically aggregatable reducers.

Values are read as signed 64-bit lanes at the front of the value field.
COUNT and SUM add lane-wise (wrapping at 2^64), MAX and MIN pick lane-wise
by masking, TOPK keeps the k largest of lane values in descending order.
All combines are associative and commutative, so the same function serves
as combiner and reducer.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .primitives import RecordSlots, merge_schedule, next_power_of_two, o_compare_exchange, o_select
from .records import RecordLayout

KINDS = ("COUNT", "SUM", "MAX", "MIN", "TOPK")
_MASK = (1 << 64) - 1
_BIAS = 1 << 63


def _lt(a: int, b: int) -> int:
    return int(a < b)


@dataclass(frozen=True)
class Aggregator:
    kind: str = "COUNT"
    k: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown aggregator {self.kind!r}; expected one of {KINDS}")
        if self.k < 1:
            raise ValueError("TOPK needs k >= 1")

    def __str__(self) -> str:
        return f"TOPK:{self.k}" if self.kind == "TOPK" else self.kind

    @classmethod
    def parse(cls, text: str) -> "Aggregator":
        text = text.strip().upper()
        if text.startswith("TOPK"):
            _, _, k = text.partition(":")
            return cls("TOPK", int(k or 1))
        return cls(text)

    def lanes(self, layout: RecordLayout) -> int:
        n = self.k if self.kind == "TOPK" else layout.max_lanes
        if n > layout.max_lanes:
            raise ValueError(f"{self} needs {n} lanes; value field holds {layout.max_lanes}")
        return n

    def combine(self, layout: RecordLayout, v1: int, v2: int) -> int:
        """Combine two value fields (as integers) into one."""
        n = self.lanes(layout)
        if self.kind in ("COUNT", "SUM"):
            low, high, tail = _add_masks(layout.value_bits, n)
            return ((v1 & low) + (v2 & low)) ^ ((v1 ^ v2) & high) | (v1 & tail)
        a = _value_lanes(layout, v1, n)
        b = _value_lanes(layout, v2, n)
        if self.kind == "MAX":
            out = [o_select(_lt(y, x), x, y) for x, y in zip(a, b)]
        elif self.kind == "MIN":
            out = [o_select(_lt(x, y), x, y) for x, y in zip(a, b)]
        else:
            out = _topk_merge(a, b)
        return _pack(layout, v1, out)

    def reference(self, values: list[list[int]]) -> list[int]:
        """Plaintext fold over lane lists, used as an oracle in tests."""
        acc = list(values[0])
        for v in values[1:]:
            if self.kind in ("COUNT", "SUM"):
                acc = [((x + y + _BIAS) & _MASK) - _BIAS for x, y in zip(acc, v)]
            elif self.kind == "MAX":
                acc = [max(x, y) for x, y in zip(acc, v)]
            elif self.kind == "MIN":
                acc = [min(x, y) for x, y in zip(acc, v)]
            else:
                acc = sorted(acc + list(v), reverse=True)[:self.k]
        return acc


@lru_cache(maxsize=None)
def _add_masks(value_bits: int, n: int) -> tuple[int, int, int]:
    """Masks for a carry-isolated lane-wise add over the top n lanes.

    Adding the low 63 bits of each lane cannot carry past the lane; the top
    bit is then the xor of both top bits and the carry into it.
    """
    tail_bits = value_bits - 64 * n
    high = sum(_BIAS << (tail_bits + 64 * i) for i in range(n))
    region = ((1 << (64 * n)) - 1) << tail_bits
    return region ^ high, high, (1 << tail_bits) - 1


def _value_lanes(layout: RecordLayout, value: int, n: int) -> list[int]:
    return layout.lanes(value, n)  # value field only: key bits are above it


def _pack(layout: RecordLayout, old_value: int, lanes: list[int]) -> int:
    # Bytes past the lanes are carried over from the first operand.
    n = len(lanes)
    tail_bits = layout.value_bits - 64 * n
    tail = old_value & ((1 << tail_bits) - 1)
    return layout.pack_lanes(lanes) | tail


def _topk_merge(a: list[int], b: list[int]) -> list[int]:
    """Top k of two descending k-lists via a fixed bitonic merge."""
    k = len(a)
    p = next_power_of_two(k)
    # Biased so signed order becomes unsigned order; padding 0 is the minimum.
    ws = [x + _BIAS for x in a] + [0] * (p - k) + [0] * (p - k) + [x + _BIAS for x in reversed(b)]
    slots = RecordSlots(ws, [(0, 0, s) for s in range(2 * p)])
    for i, j, _ in merge_schedule(2 * p).steps:
        o_compare_exchange(0, slots, i, j)
    return [x - _BIAS for x in slots.values[:k]]
