"""WordCount: frequency of each case-folded, whitespace-delimited token."""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Iterable, Optional, Union

from ..aggregators import Aggregator
from ..blockstore import BlockFile, BlockFileMeta
from ..encoding import encode_records
from ..enclave import Enclave, SealKey
from ..engine import JobConfig, JobResult, MapFunction, real_records, run_job
from ..records import RecordLayout, lanes_bytes

RECORD_SIZE = 32
KEY_SIZE = 24
_ONE = lanes_bytes([1])


def tokenize(text: bytes) -> list[bytes]:
    """ASCII-whitespace split, lowercased (ASCII only)."""
    return text.rstrip(b"\0").lower().split()


def wordcount_map(fragment: bytes, key_size: int = KEY_SIZE) -> list[tuple[bytes, bytes]]:
    return [(tok[:key_size], _ONE) for tok in tokenize(fragment)]


def map_function(key_size: int = KEY_SIZE, fanout: int = 1) -> MapFunction:
    return MapFunction(lambda rec: wordcount_map(rec, key_size), fanout)


def default_config(**kw) -> JobConfig:
    kw.setdefault("record_size", RECORD_SIZE)
    kw.setdefault("key_size", KEY_SIZE)
    kw.setdefault("aggregator", Aggregator("COUNT"))
    return JobConfig(**kw)


def encode_text(tokens: Iterable[Union[str, bytes]], path: Union[str, Path], key: SealKey,
                block_size: int = 2048, record_size: int = RECORD_SIZE) -> BlockFile:
    """One whitespace-delimited token per record, raw UTF-8, zero padded."""
    meta = BlockFileMeta.for_block_size(block_size, record_size=record_size)
    recs = (w for t in tokens for w in split_text(t))
    return encode_records(recs, meta, key, path)


def split_text(text: Union[str, bytes]) -> list[bytes]:
    if isinstance(text, str):
        text = text.encode()
    return text.split()


def results(enclave: Enclave, handle: BlockFile, config: JobConfig) -> dict[bytes, int]:
    layout = config.layout
    out: dict[bytes, int] = {}
    for rec in real_records(enclave, handle, layout):
        word = layout.key_bytes(rec).rstrip(b"\0")
        out[word] = layout.lanes(rec, 1)[0]
    return out


def oracle(tokens: Iterable[Union[str, bytes]], key_size: int = KEY_SIZE) -> dict[bytes, int]:
    """Plaintext reference: hash-map count over the same tokenization."""
    c: Counter = Counter()
    for t in tokens:
        if isinstance(t, str):
            t = t.encode()
        for w in tokenize(t):
            c[w[:key_size].rstrip(b"\0")] += 1
    return dict(c)


def run_wordcount(tokens: list, config: Optional[JobConfig] = None,
                  enclave: Optional[Enclave] = None) -> tuple[dict[bytes, int], JobResult]:
    """Encode, run and decode in one go (convenience for tests and benches)."""
    config = config or default_config()
    own = enclave is None
    enclave = enclave or Enclave(config.seal_key, config.workdir, config.buffer_capacity)
    try:
        src = encode_text(tokens, enclave.workdir / "input.blk", config.seal_key,
                          config.block_size, config.record_size)
        res = run_job(config, map_function(config.key_size), src, enclave)
        return results(enclave, res.output, config), res
    finally:
        if own:
            enclave.close()
