"""Benchmark harness: run named scenarios and report access counts.

Each scenario prepares its input outside the measured region, then runs
the measured operation under a counting-mode trace.  Counts in the report
are exactly the trace statistics of that run; wall time is informational.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from . import trace
from .apps import kmeans as km
from .apps import wordcount as wc
from .baselines import run_oram_baseline
from .blocksort import bitonic_sort_blocks, merge_sort_blocks
from .blockstore import BlockFile, BlockFileMeta
from .corpora import gaussian_mixture, zipf_tokens
from .enclave import Enclave, PlainBlock
from .engine import map_phase, pad_to_power_of_two, run_job
from .oram import oram_init, oram_scan
from .primitives import next_power_of_two

CSV_COLUMNS = ("scenario", "blocks", "block_size", "untrusted_reads", "untrusted_writes",
               "enclave_record_touches", "wall_ms")


@dataclass
class BenchRow:
    scenario: str
    blocks: int
    block_size: int
    untrusted_reads: int
    untrusted_writes: int
    enclave_record_touches: int
    wall_ms: float
    stats: Optional[trace.TraceStats] = field(default=None, repr=False, compare=False)

    @property
    def untrusted_touches(self) -> int:
        return self.untrusted_reads + self.untrusted_writes

    def as_csv(self) -> list:
        return [self.scenario, self.blocks, self.block_size, self.untrusted_reads,
                self.untrusted_writes, self.enclave_record_touches, f"{self.wall_ms:.1f}"]


@dataclass
class Comparison:
    label: str
    numerator: str
    denominator: str
    metric: str
    ratio: float

    def __str__(self) -> str:
        return f"{self.label}: {self.numerator} / {self.denominator} {self.metric} = {self.ratio:.2f}x"


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    comparisons: list[Comparison] = field(default_factory=list)

    def row(self, scenario: str) -> BenchRow:
        for r in self.rows:
            if r.scenario == scenario:
                return r
        raise KeyError(scenario)

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow(r.as_csv())

    def summary(self) -> str:
        return "\n".join(str(c) for c in self.comparisons)


@dataclass
class BenchSettings:
    blocks: int = 1024
    block_size: int = 2048
    seed: int = 0
    scan_oram_blocks: Optional[int] = None  # ORAM capacity for oram-scan; default next pow2


def _random_file(enclave: Enclave, n: int, meta: BlockFileMeta, seed: int) -> BlockFile:
    rng = np.random.default_rng(seed)
    f = enclave.new_file(meta.with_count(0), "bench-in")
    for b in range(n):
        rows = rng.integers(0, 255, size=(meta.records_per_block, meta.record_size), dtype=np.uint8)
        rows[:, 0] = np.minimum(rows[:, 0], 0xFE)  # never a dummy marker
        enclave.write_plain(f, b, PlainBlock(f.file_id, b, rows))
    return f


def _measure(name: str, s: BenchSettings, fn: Callable[[], object]) -> BenchRow:
    t0 = time.perf_counter()
    tr = trace.capture(fn, keep_events=False)
    wall = (time.perf_counter() - t0) * 1000.0
    st = trace.trace_stats(tr)
    return BenchRow(name, s.blocks, s.block_size, st.untrusted_reads, st.untrusted_writes,
                    st.enclave_record_touches, wall, st)


def _sort_input(enclave: Enclave, s: BenchSettings) -> BlockFile:
    meta = BlockFileMeta.for_block_size(s.block_size, record_size=wc.RECORD_SIZE)
    f = _random_file(enclave, s.blocks, meta, s.seed)
    with trace.suspended():
        pad_to_power_of_two(f, enclave)
    return f


def scenario_seq_scan(s: BenchSettings) -> BenchRow:
    with Enclave() as e:
        f = _random_file(e, s.blocks, BlockFileMeta.for_block_size(s.block_size, record_size=wc.RECORD_SIZE),
                         s.seed)

        def scan():
            for b in range(f.block_count):
                e.buffer.load(f, b)
                e.buffer.discard(f, b)
        return _measure("seq-scan", s, scan)


def scenario_oram_scan(s: BenchSettings) -> BenchRow:
    cap = s.scan_oram_blocks or next_power_of_two(s.blocks)
    meta = BlockFileMeta.for_block_size(s.block_size, record_size=wc.RECORD_SIZE)
    st = oram_init(cap, 4, meta.payload_size, seed=s.seed)
    return _measure("oram-scan", s, lambda: oram_scan(st, s.blocks))


def _sort_scenario(name: str, sorter, oswap: bool):
    def run(s: BenchSettings) -> BenchRow:
        with Enclave() as e:
            f = _sort_input(e, s)
            return _measure(name, s, lambda: sorter(f, e, oswap=oswap))
    return run


def _wordcount_input(e: Enclave, s: BenchSettings, cfg):
    tokens = zipf_tokens(s.blocks * cfg.records_per_block, vocab_size=5000, seed=s.seed)
    return wc.encode_text(tokens, e.workdir / "wc.blk", cfg.seal_key, s.block_size, cfg.record_size)


def _kmeans_input(e: Enclave, s: BenchSettings, cfg):
    pts, centres = gaussian_mixture(s.blocks * cfg.records_per_block, k=5, seed=s.seed)
    src = km.encode_points(pts, e.workdir / "km.blk", cfg.seal_key, s.block_size)
    cents = km.as_centroids(centres + 0.5)
    return src, cents


def scenario_wordcount_sgxmr(s: BenchSettings) -> BenchRow:
    cfg = wc.default_config(block_size=s.block_size)
    with Enclave(cfg.seal_key, buffer_capacity=cfg.buffer_capacity) as e:
        src = _wordcount_input(e, s, cfg)
        return _measure("wordcount-sgxmr", s, lambda: run_job(cfg, wc.map_function(), src, e))


def scenario_wordcount_oram(s: BenchSettings) -> BenchRow:
    cfg = wc.default_config(block_size=s.block_size)
    with Enclave(cfg.seal_key, buffer_capacity=cfg.buffer_capacity) as e:
        src = _wordcount_input(e, s, cfg)
        return _measure("wordcount-oram-baseline", s,
                        lambda: run_oram_baseline(cfg, wc.map_function(), src, seed=s.seed))


def scenario_kmeans_sgxmr(s: BenchSettings) -> BenchRow:
    cfg = km.default_config(block_size=s.block_size)
    with Enclave(cfg.seal_key, buffer_capacity=cfg.buffer_capacity) as e:
        src, cents = _kmeans_input(e, s, cfg)
        return _measure("kmeans-sgxmr", s, lambda: run_job(cfg, km.map_function(cents), src, e))


def scenario_kmeans_oram(s: BenchSettings) -> BenchRow:
    cfg = km.default_config(block_size=s.block_size)
    with Enclave(cfg.seal_key, buffer_capacity=cfg.buffer_capacity) as e:
        src, cents = _kmeans_input(e, s, cfg)
        return _measure("kmeans-oram-baseline", s,
                        lambda: run_oram_baseline(cfg, km.map_function(cents), src, seed=s.seed))


SCENARIOS: dict[str, Callable[[BenchSettings], BenchRow]] = {
    "seq-scan": scenario_seq_scan,
    "oram-scan": scenario_oram_scan,
    "bitonic-sort": _sort_scenario("bitonic-sort", bitonic_sort_blocks, oswap=False),
    "merge-sort": _sort_scenario("merge-sort", merge_sort_blocks, oswap=False),
    "bitonic+oswap": _sort_scenario("bitonic+oswap", bitonic_sort_blocks, oswap=True),
    "wordcount-sgxmr": scenario_wordcount_sgxmr,
    "wordcount-oram-baseline": scenario_wordcount_oram,
    "kmeans-sgxmr": scenario_kmeans_sgxmr,
    "kmeans-oram-baseline": scenario_kmeans_oram,
}

# (label, numerator, denominator, metric)
_COMPARISONS = (
    ("sequential access", "oram-scan", "seq-scan", "untrusted_touches"),
    ("o-swap cost", "bitonic+oswap", "bitonic-sort", "wall_ms"),
    ("o-swap record writes", "bitonic+oswap", "bitonic-sort", "enclave_record_touches"),
    ("sort block touches", "bitonic-sort", "merge-sort", "untrusted_touches"),
    ("wordcount", "wordcount-oram-baseline", "wordcount-sgxmr", "untrusted_touches"),
    ("kmeans", "kmeans-oram-baseline", "kmeans-sgxmr", "untrusted_touches"),
)


class UnknownScenarioError(KeyError):
    pass


def run_bench(scenarios: list[str], settings: Optional[BenchSettings] = None,
              progress: Optional[Callable[[BenchRow], None]] = None) -> BenchReport:
    """Run scenarios sequentially and derive the ratio comparisons available."""
    settings = settings or BenchSettings()
    unknown = [n for n in scenarios if n not in SCENARIOS]
    if unknown:
        raise UnknownScenarioError(f"unknown scenario(s): {', '.join(unknown)}; "
                                   f"known: {', '.join(SCENARIOS)}")
    report = BenchReport()
    for name in scenarios:
        row = SCENARIOS[name](settings)
        report.rows.append(row)
        if progress:
            progress(row)
    have = {r.scenario: r for r in report.rows}
    for label, num, den, metric in _COMPARISONS:
        if num in have and den in have:
            a = getattr(have[num], metric)
            b = getattr(have[den], metric)
            report.comparisons.append(Comparison(label, num, den, metric, a / b if b else float("inf")))
    return report


def combiner_group_sizes(tokens: list, config=None) -> tuple[dict[bytes, int], dict[bytes, int]]:
    """True word frequencies and the number of combiner-output records per word.

    The second map is what a reducer receives per key after map-side
    combining: one partial aggregate per map output block holding the word.
    """
    config = config or wc.default_config()
    layout = config.layout
    observed: dict[bytes, int] = {}
    with Enclave(config.seal_key, buffer_capacity=config.buffer_capacity) as e:
        src = wc.encode_text(tokens, e.workdir / "zipf.blk", config.seal_key,
                             config.block_size, config.record_size)
        inter = map_phase(config, wc.map_function(config.key_size), src, e)
        for idx in range(inter.block_count):
            for rec in e.read_plain(inter, idx).records:
                v = int.from_bytes(rec.tobytes(), "big")
                if not layout.is_dummy(v):
                    w = layout.key_bytes(v).rstrip(b"\0")
                    observed[w] = observed.get(w, 0) + 1
    return wc.oracle(tokens, config.key_size), observed


def combiner_rank_correlation(tokens: list, config=None, top: Optional[int] = None) -> float:
    """Spearman correlation of true frequency vs observed group size.

    With ``top``, only the ``top`` most frequent words are ranked.
    """
    from scipy.stats import spearmanr

    true, observed = combiner_group_sizes(tokens, config)
    words = sorted(true, key=lambda w: (-true[w], w))[:top]
    rho = spearmanr([true[w] for w in words], [observed[w] for w in words]).statistic
    return float(rho)
