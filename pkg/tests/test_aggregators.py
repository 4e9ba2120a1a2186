import pytest
from hypothesis import given, strategies as st

from oblivmr.aggregators import Aggregator
from oblivmr.records import RecordLayout, RecordOverflowError

LAYOUT = RecordLayout(40, 8)  # 4 value lanes
I64 = st.integers(-2**63, 2**63 - 1)
VALUE = st.lists(I64, min_size=4, max_size=4)
AGGS = st.sampled_from([Aggregator("COUNT"), Aggregator("SUM"), Aggregator("MAX"),
                        Aggregator("MIN"), Aggregator("TOPK", 1), Aggregator("TOPK", 3)])


def _v(lanes):
    return LAYOUT.pack_lanes(lanes)


def _topk_norm(agg, lanes):
    # a TOPK value is a descending k-list
    if agg.kind != "TOPK":
        return lanes
    k = agg.k
    return sorted(lanes[:k], reverse=True) + lanes[k:]


@given(AGGS, VALUE, VALUE, VALUE)
def test_associative(agg, a, b, c):
    a, b, c = (_v(_topk_norm(agg, x)) for x in (a, b, c))
    f = lambda x, y: agg.combine(LAYOUT, x, y)
    assert f(f(a, b), c) == f(a, f(b, c))


@given(AGGS, VALUE, VALUE)
def test_commutative_on_lanes(agg, a, b):
    a, b = _v(_topk_norm(agg, a)), _v(_topk_norm(agg, b))
    n = agg.lanes(LAYOUT)
    assert (LAYOUT.lanes(agg.combine(LAYOUT, a, b), n)
            == LAYOUT.lanes(agg.combine(LAYOUT, b, a), n))


@given(AGGS, st.lists(VALUE, min_size=1, max_size=8))
def test_fold_matches_reference(agg, values):
    values = [_topk_norm(agg, v) for v in values]
    n = agg.lanes(LAYOUT)
    acc = _v(values[0])
    for v in values[1:]:
        acc = agg.combine(LAYOUT, acc, _v(v))
    assert LAYOUT.lanes(acc, n) == agg.reference([v[:n] for v in values])


def test_count_is_sum_of_partials():
    agg = Aggregator("COUNT")
    acc = _v([3, 0, 0, 0])
    for c in (4, 5):
        acc = agg.combine(LAYOUT, acc, _v([c, 0, 0, 0]))
    assert LAYOUT.lanes(acc, 1) == [12]


def test_topk_keeps_largest():
    agg = Aggregator.parse("topk:3")
    out = agg.combine(LAYOUT, _v([9, 4, 1, 0]), _v([7, 5, -2, 0]))
    assert LAYOUT.lanes(out, 3) == [9, 7, 5]


def test_parse_and_errors():
    assert Aggregator.parse("max") == Aggregator("MAX")
    assert str(Aggregator.parse("TOPK:5")) == "TOPK:5"
    with pytest.raises(ValueError):
        Aggregator("MEDIAN")
    with pytest.raises(ValueError):
        Aggregator("TOPK", 9).lanes(LAYOUT)


def test_layout_make_and_overflow():
    r = LAYOUT.make(b"ab", b"\x01")
    assert LAYOUT.key_bytes(r) == b"ab" + bytes(6)
    assert not LAYOUT.is_dummy(r)
    assert LAYOUT.is_dummy(LAYOUT.dummy)
    assert LAYOUT.dummy > r
    with pytest.raises(RecordOverflowError):
        LAYOUT.make(b"x" * 9)
    with pytest.raises(RecordOverflowError):
        LAYOUT.make(b"\xff" * 8)
