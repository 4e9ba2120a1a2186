import numpy as np
import pytest
from hypothesis import given, strategies as st

from oblivmr import trace
from oblivmr.blockstore import HEADER, BlockFileMeta, SealedBlock
from oblivmr.enclave import (
    BlockIdMismatch,
    Enclave,
    EnclaveBuffer,
    FileIdMismatch,
    PlainBlock,
    SealKey,
    TagMismatch,
    buffer_load,
    nonce_counter,
    seal_block,
    touch_record,
    unseal_block,
)
from oblivmr.primitives import RecordSlots, o_swap, plain_compare_exchange

from conftest import RS, random_rows

META = BlockFileMeta(RS, 4)


def _plain(rng, fid=11, bid=0):
    return PlainBlock(fid, bid, random_rows(rng, META.records_per_block))


def test_sealing_is_randomized_and_round_trips():
    rng = np.random.default_rng(0)
    key = SealKey.generate()
    p = _plain(rng)
    a, b = seal_block(p, key), seal_block(p, key)
    assert a.ciphertext != b.ciphertext
    assert unseal_block(a, 11, 0, key, RS) == p
    assert unseal_block(b, 11, 0, key, RS) == p


def test_sealed_size_constant():
    rng = np.random.default_rng(1)
    key = SealKey.generate()
    sizes = {len(seal_block(_plain(rng, bid=i), key).to_bytes()) for i in range(100)}
    assert sizes == {HEADER.size + META.payload_size + 16}


def test_nonce_counter_is_monotone():
    rng = np.random.default_rng(2)
    key = SealKey.generate()
    nonces = [seal_block(_plain(rng), key).header.nonce for _ in range(50)]
    counters = [nonce_counter(n) for n in nonces]
    assert all(b > a for a, b in zip(counters, counters[1:]))
    assert len(set(nonces)) == len(nonces)


def test_bit_flip_is_tag_mismatch():
    key = SealKey.generate()
    s = seal_block(_plain(np.random.default_rng(3)), key)
    ct = bytearray(s.ciphertext)
    ct[5] ^= 0x10
    with pytest.raises(TagMismatch):
        unseal_block(SealedBlock(s.header, bytes(ct), s.auth_tag), 11, 0, key, RS)


def test_header_tamper_is_tag_mismatch():
    key = SealKey.generate()
    s = seal_block(_plain(np.random.default_rng(3)), key)
    h = type(s.header)(s.header.file_id, s.header.block_id + 1, s.header.nonce)
    with pytest.raises(TagMismatch):
        unseal_block(SealedBlock(h, s.ciphertext, s.auth_tag), 11, 1, key, RS)


def test_shuffle_is_block_id_mismatch():
    key = SealKey.generate()
    s = seal_block(_plain(np.random.default_rng(4), bid=5), key)
    with pytest.raises(BlockIdMismatch):
        unseal_block(s, 11, 3, key, RS)


def test_cross_file_is_file_id_mismatch():
    key = SealKey.generate()
    s = seal_block(_plain(np.random.default_rng(5), fid=100), key)
    with pytest.raises(FileIdMismatch):
        unseal_block(s, 200, 0, key, RS)


def test_wrong_key_is_tag_mismatch():
    s = seal_block(_plain(np.random.default_rng(6)), SealKey.generate())
    with pytest.raises(TagMismatch):
        unseal_block(s, 11, 0, SealKey.generate(), RS)


def test_key_hex_round_trip_and_repr_hides_material():
    k = SealKey.from_hex("00112233445566778899aabbccddeeff")
    assert k.material.hex() == "00112233445566778899aabbccddeeff"
    assert "0011" not in repr(k)
    with pytest.raises(ValueError):
        SealKey.from_hex("abcd")


def _fill(enclave, n):
    f = enclave.new_file(META, "buf")
    rng = np.random.default_rng(7)
    with trace.suspended():
        for i in range(n):
            enclave.write_plain(f, i, _plain(rng, f.file_id, i))
    return f


def test_capacity_four_five_loads_one_eviction(enclave):
    f = _fill(enclave, 5)
    buf = EnclaveBuffer(4, enclave)

    def run():
        for i in range(5):
            buffer_load(buf, f, i)
    tr = trace.capture(run)
    st_ = trace.trace_stats(tr)
    assert buf.evictions == 1
    assert st_.untrusted_writes == 1
    assert st_.untrusted_reads == 5
    assert len(buf) == 4


def test_resident_load_is_a_hit(enclave):
    f = _fill(enclave, 2)
    buf = EnclaveBuffer(3, enclave)
    buf.load(f, 0)
    tr = trace.capture(buf.load, f, 0)
    assert trace.trace_stats(tr).untrusted_reads == 0


def test_capacity_two_fits_a_pair_operation(enclave):
    f = _fill(enclave, 2)
    buf = EnclaveBuffer(2, enclave)
    buf.load(f, 0)
    buf.load(f, 1)
    buf.flush(f, 0)
    buf.flush(f, 1)
    assert buf.evictions == 0
    assert buf.max_resident == 2


@given(st.lists(st.integers(0, 9), min_size=1, max_size=60), st.integers(2, 5))
def test_buffer_never_exceeds_capacity(tmp_path_factory, loads, cap):
    with Enclave(workdir=tmp_path_factory.mktemp("b")) as e:
        f = _fill(e, 10)
        buf = EnclaveBuffer(cap, e)
        for i in loads:
            buf.load(f, i)
            assert len(buf) <= cap
        assert buf.max_resident <= cap


def test_eviction_writes_back_modified_block(enclave):
    f = _fill(enclave, 4)
    buf = EnclaveBuffer(2, enclave)
    new = PlainBlock(f.file_id, 0, np.zeros((4, RS), dtype=np.uint8))
    buf.put(f, 0, new)
    buf.load(f, 1)
    buf.load(f, 2)  # evicts block 0
    assert enclave.read_plain(f, 0) == new


def test_touch_record_bounds_and_event():
    blk = PlainBlock(3, 4, np.zeros((4, RS), dtype=np.uint8))
    tr = trace.capture(touch_record, blk, 2, trace.READ)
    assert [e.address for e in tr] == [(3, 4, 2)]
    with pytest.raises(IndexError):
        touch_record(blk, 4, trace.READ)


def test_block_scan_touches_records_in_order():
    blk = PlainBlock(3, 0, np.zeros((8, RS), dtype=np.uint8))
    tr = trace.capture(lambda: [touch_record(blk, i, trace.READ) for i in range(8)])
    assert [e.record_index for e in tr] == list(range(8))


@pytest.mark.parametrize("cond", [0, 1])
def test_o_swap_trace_is_two_reads_two_writes(cond):
    tr = trace.capture(o_swap, cond, RecordSlots([1, 2]), 0, 1)
    assert [(e.op, e.record_index) for e in tr] == [
        ("read", 0), ("read", 1), ("write", 0), ("write", 1)]


def test_branchy_swap_false_writes_nothing():
    tr = trace.capture(plain_compare_exchange, 1, RecordSlots([1, 2]), 0, 1)
    assert [e.op for e in tr] == ["read", "read"]


def test_write_plain_rewrites_ids_and_workdir_cleanup(tmp_path):
    e = Enclave()
    wd = e.workdir
    f = e.new_file(META, "x")
    e.write_plain(f, 0, PlainBlock(999, 999, np.zeros((4, RS), dtype=np.uint8)))
    assert e.read_plain(f, 0).file_id == f.file_id
    e.close()
    assert not wd.exists()
