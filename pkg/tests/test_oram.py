import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from oblivmr import trace
from oblivmr.enclave import TagMismatch
from oblivmr.oram import (
    _AD,
    EMPTY,
    StashOverflowError,
    UnknownBlockError,
    normalize_path,
    oram_access,
    oram_bulk_load,
    oram_init,
    oram_read,
    oram_scan,
    oram_write,
)


def _bucket_ids(state, b):
    blob = state.store[b]
    pt = state._aead.decrypt(blob[:12], blob[12:], _AD.pack(state.file_id, b))
    return np.frombuffer(pt[:8 * state.z], dtype=">u8")


def test_geometry_n16():
    s = oram_init(16, 4)
    assert (s.height, s.n_buckets, s.n_slots) == (4, 31, 124)


def test_single_block_tree():
    s = oram_init(1, 4, 8, seed=0)
    assert s.n_buckets == 1
    oram_write(s, 0, b"abcdefgh")
    assert oram_read(s, 0) == b"abcdefgh"


def test_payload_size_mismatch():
    s = oram_init(4, 4, 8, seed=0)
    with pytest.raises(ValueError):
        oram_write(s, 0, b"short")


def test_unknown_block():
    s = oram_init(4, 4, 8, seed=0)
    with pytest.raises(UnknownBlockError):
        oram_read(s, 4)


def test_access_trace_n16():
    s = oram_init(16, 4, 8, seed=1)
    for i in range(10):
        st_ = trace.trace_stats(trace.capture(oram_read, s, i % 16))
        assert (st_.untrusted_reads, st_.untrusted_writes) == (20, 20)


def test_per_access_shape_is_reads_then_writes():
    s = oram_init(16, 4, 8, seed=1)
    tr = trace.capture(oram_write, s, 3, bytes(8))
    ops = [e.op for e in tr if e.region == trace.UNTRUSTED]
    assert ops == ["read"] * 20 + ["write"] * 20


def test_read_after_write():
    s = oram_init(64, 4, 16, seed=2)
    oram_write(s, 17, b"x" * 16)
    assert oram_read(s, 17) == b"x" * 16
    assert oram_read(s, 18) == bytes(16)


@settings(max_examples=25)
@given(st.integers(1, 40), st.lists(st.tuples(st.booleans(), st.integers(0, 39), st.binary(min_size=8, max_size=8)),
                                    max_size=150), st.integers(0, 2**32))
def test_matches_array_oracle(n, ops, seed):
    s = oram_init(n, 4, 8, seed=seed)
    oracle = [bytes(8)] * n
    for is_write, bid, data in ops:
        bid %= n
        if is_write:
            assert oram_write(s, bid, data) == oracle[bid]
            oracle[bid] = data
        else:
            assert oram_read(s, bid) == oracle[bid]


def test_blocks_live_on_their_path_or_in_stash():
    s = oram_init(64, 4, 8, seed=3)
    rng = random.Random(3)
    for i in range(64):
        oram_write(s, i, bytes(8))
    for _ in range(300):
        oram_write(s, rng.randrange(64), bytes(8))
    stash = set(int(x) for x in s.stash_ids if x != EMPTY)
    seen = set()
    for b in range(s.n_buckets):
        for bid in _bucket_ids(s, b):
            if bid != EMPTY:
                bid = int(bid)
                assert b in s.path(int(s.position[bid]))
                seen.add(bid)
    assert seen.isdisjoint(stash)
    assert seen | stash == set(range(64))


def test_leaf_choice_uniform():
    s = oram_init(64, 4, 8, seed=4)
    # the path an access reads is the leaf drawn at the previous access
    nxt = int(s.position[5])
    tr = trace.capture(oram_read, s, 5)
    last = [e.block_id for e in tr if e.region == trace.UNTRUSTED][s.path_slots - 1]
    assert last // s.z - (s.n_leaves - 1) == nxt
    leaves = []
    for _ in range(10_000):
        oram_read(s, 5)
        leaves.append(int(s.position[5]))
    counts = np.bincount(leaves, minlength=s.n_leaves)
    assert chisquare(counts).pvalue > 0.01


def test_scan_counts_and_zero():
    s = oram_init(64, 4, 8, seed=5)
    assert len(trace.capture(oram_scan, s, 0)) == 0
    st_ = trace.trace_stats(trace.capture(oram_scan, s, 10, keep_events=False))
    assert st_.untrusted_reads == 10 * 7 * 4


def test_trace_independent_of_payloads():
    def prog(payloads):
        s = oram_init(32, 4, 8, seed=9)
        oram_bulk_load(s, payloads)
        oram_scan(s, 32)
    rng = random.Random(0)
    inputs = [[bytes(rng.randrange(256) for _ in range(8)) for _ in range(32)] for _ in range(4)]
    assert trace.assert_oblivious(prog, inputs)


def test_normalized_trace_independent_of_targets():
    def prog(ids):
        s = oram_init(32, 4, 8, seed=None)
        for i in ids:
            oram_read(s, i)
    rng = random.Random(1)
    inputs = [[rng.randrange(32) for _ in range(30)] for _ in range(5)] + [[0] * 30]
    assert trace.assert_oblivious(prog, inputs, normalize=normalize_path(4))


def test_counting_mode_matches_event_mode():
    a = oram_init(128, 4, 8, seed=6)
    b = oram_init(128, 4, 8, seed=6)
    ea = trace.trace_stats(trace.capture(oram_scan, a, 20))
    eb = trace.trace_stats(trace.capture(oram_scan, b, 20, keep_events=False))
    assert ea.by_kind == eb.by_kind


def test_tampered_bucket_detected():
    s = oram_init(8, 4, 8, seed=7)
    blob = bytearray(s.store[0])
    blob[20] ^= 1
    s.store[0] = bytes(blob)
    with pytest.raises(TagMismatch):
        oram_read(s, 0)


def test_tiny_stash_overflows():
    s = oram_init(64, 1, 8, seed=8, stash_capacity=1)
    with pytest.raises(StashOverflowError):
        for i in range(2000):
            oram_write(s, i % 64, bytes(8))


def test_stash_stays_small():
    s = oram_init(256, 4, 8, seed=10)
    rng = random.Random(10)
    for _ in range(5000):
        oram_read(s, rng.randrange(256))
    assert s.stash_max < 30
