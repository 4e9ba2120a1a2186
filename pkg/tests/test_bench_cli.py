import csv

import numpy as np
import pytest

from oblivmr import trace
from oblivmr.bench import (
    CSV_COLUMNS,
    SCENARIOS,
    BenchSettings,
    UnknownScenarioError,
    combiner_group_sizes,
    run_bench,
)
from oblivmr.cli import main
from oblivmr.corpora import zipf_tokens

KEY = "00112233445566778899aabbccddeeff"


def test_scenarios_registered():
    assert list(SCENARIOS) == ["seq-scan", "oram-scan", "bitonic-sort", "merge-sort", "bitonic+oswap",
                               "wordcount-sgxmr", "wordcount-oram-baseline", "kmeans-sgxmr",
                               "kmeans-oram-baseline"]


def test_unknown_scenario():
    with pytest.raises(UnknownScenarioError):
        run_bench(["warp-drive"])


def test_seq_scan_3000():
    r = run_bench(["seq-scan"], BenchSettings(blocks=3000, block_size=256)).row("seq-scan")
    assert (r.untrusted_reads, r.untrusted_writes) == (3000, 0)


def test_bitonic_counts_closed_form():
    n = 64
    r = run_bench(["bitonic-sort"], BenchSettings(blocks=n, block_size=256)).row("bitonic-sort")
    pair_ops = n * 6 * 7 // 4
    assert r.untrusted_reads == r.untrusted_writes == 2 * pair_ops


def test_report_counts_reconcile_with_trace_stats(tmp_path):
    rep = run_bench(list(SCENARIOS), BenchSettings(blocks=8, block_size=2048))
    for row in rep.rows:
        assert row.untrusted_reads == row.stats.untrusted_reads
        assert row.untrusted_writes == row.stats.untrusted_writes
        assert row.enclave_record_touches == row.stats.enclave_record_touches
    labels = {c.label for c in rep.comparisons}
    assert {"wordcount", "kmeans", "sequential access"} <= labels
    rep.write_csv(tmp_path / "b.csv")
    with open(tmp_path / "b.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 1 + len(SCENARIOS)


def test_combiner_group_sizes_sum():
    tokens = zipf_tokens(3000, vocab_size=200, seed=0)
    true, observed = combiner_group_sizes(tokens)
    assert sum(true.values()) == 3000
    assert set(observed) == set(true)
    assert all(observed[w] <= true[w] for w in true)


def test_cli_end_to_end(tmp_path, capsys):
    (tmp_path / "t.txt").write_text("b a B c a a\n")
    assert main(["encode", "--in", str(tmp_path / "t.txt"), "--out", str(tmp_path / "t.blk"), "--key", KEY]) == 0
    assert main(["run", "--job", "wordcount", "--in", str(tmp_path / "t.blk"),
                 "--out", str(tmp_path / "o.blk"), "--key", KEY]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-3:] == ["a\t3", "b\t2", "c\t1"]


def test_cli_kmeans(tmp_path, capsys):
    np.savetxt(tmp_path / "p.txt", [[0, 0], [0, 2], [10, 0], [10, 2]])
    (tmp_path / "c.txt").write_text("0 1\n10 1\n")
    main(["encode", "--in", str(tmp_path / "p.txt"), "--out", str(tmp_path / "p.blk"),
          "--key", KEY, "--format", "vectors"])
    capsys.readouterr()
    assert main(["run", "--job", "kmeans", "--in", str(tmp_path / "p.blk"), "--out", str(tmp_path / "k.blk"),
                 "--key", KEY, "--centroids", str(tmp_path / "c.txt")]) == 0
    assert capsys.readouterr().out.splitlines() == ["0 0 1", "1 10 1"]
    assert main(["run", "--job", "kmeans", "--in", str(tmp_path / "p.blk"), "--out", str(tmp_path / "k2.blk"),
                 "--key", KEY, "--k", "2"]) == 0


def test_cli_integrity_exit_code(tmp_path):
    (tmp_path / "t.txt").write_text("x y z\n")
    main(["encode", "--in", str(tmp_path / "t.txt"), "--out", str(tmp_path / "t.blk"), "--key", KEY])
    data = bytearray((tmp_path / "t.blk").read_bytes())
    data[-20] ^= 1
    (tmp_path / "t.blk").write_bytes(data)
    assert main(["run", "--job", "wordcount", "--in", str(tmp_path / "t.blk"),
                 "--out", str(tmp_path / "o.blk"), "--key", KEY]) == 3


@pytest.mark.parametrize("job,code", [("bitonic", 0), ("merge", 1), ("wordcount", 0), ("kmeans", 0)])
def test_cli_audit(tmp_path, job, code):
    export = tmp_path / "trace.txt"
    assert main(["audit", "--job", job, "--sweeps", "3", "--blocks", "4", "--export", str(export)]) == code
    tr = trace.Trace.load(export.read_text().splitlines())
    assert len(tr) > 0


def test_cli_bench(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "--scenarios", "seq-scan,merge-sort", "--out", str(out), "--blocks", "4"]) == 0
    assert len(out.read_text().splitlines()) == 3
    assert main(["bench", "--scenarios", "nope", "--out", str(out)]) == 2
