"""Command line: encode inputs, run jobs, audit traces, benchmark."""

from __future__ import annotations

import argparse
import random
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import trace
from .apps import kmeans as km
from .apps import wordcount as wc
from .bench import SCENARIOS, BenchSettings, UnknownScenarioError, run_bench
from .blocksort import bitonic_sort_blocks, merge_sort_blocks
from .blockstore import BlockFileMeta, open_file
from .corpora import gaussian_mixture, zipf_tokens
from .encoding import encode_records
from .enclave import Enclave, IntegrityError, SealKey
from .engine import JobConfig, real_records, run_job


def _read_vectors(path: Path) -> np.ndarray:
    rows = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].replace(",", " ").strip()
        if line:
            rows.append([float(x) for x in line.split()])
    if not rows:
        return np.zeros((0, 0))
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: rows differ in dimension")
    return np.array(rows, dtype=np.float64)


def cmd_encode(args) -> int:
    key = SealKey.from_hex(args.key)
    src = Path(args.inp)
    if args.format == "text":
        meta = BlockFileMeta.for_block_size(args.block_size, record_size=args.record_size or wc.RECORD_SIZE)
        with encode_records(wc.split_text(src.read_bytes()), meta, key, args.out) as f:
            n = f.block_count
    else:
        pts = _read_vectors(src)
        if args.record_size:
            meta = BlockFileMeta.for_block_size(args.block_size, record_size=args.record_size)
        else:
            meta = BlockFileMeta.for_block_size(args.block_size, records_per_block=km.RECORDS_PER_BLOCK)
        with km.encode_points(pts, args.out, key, args.block_size, meta.records_per_block) as f:
            n = f.block_count
    print(f"wrote {n} blocks ({meta.records_per_block} records of {meta.record_size} bytes) to {args.out}")
    return 0


def _job_config(args, job: str) -> JobConfig:
    defaults = wc.default_config() if job == "wordcount" else km.default_config()
    return JobConfig.load(args.config, defaults) if args.config else defaults


def _first_points(enclave: Enclave, src, cfg: JobConfig, k: int, dim: int) -> list:
    """Forgy initialisation: the first k input points (read untraced)."""
    recs = real_records(enclave, src, cfg.layout)[:k]
    if not recs:
        raise SystemExit("kmeans input has no points")
    return km.as_centroids([np.frombuffer(cfg.layout.value_bytes(r)[:8 * dim], dtype=">f8") for r in recs])


def cmd_run(args) -> int:
    cfg = _job_config(args, args.job)
    if args.key:
        cfg = cfg.with_(seal_key=SealKey.from_hex(args.key))
    with Enclave(cfg.seal_key, cfg.workdir, cfg.buffer_capacity) as e, open_file(args.inp) as src:
        if args.job == "wordcount":
            res = run_job(cfg, wc.map_function(cfg.key_size), src, e, output_path=args.out)
            counts = wc.results(e, res.output, cfg)
            for word, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:args.top or None]:
                print(f"{word.decode(errors='replace')}\t{n}")
        else:
            if args.centroids:
                cents = km.as_centroids(_read_vectors(Path(args.centroids)))
            else:
                cents = _first_points(e, src, cfg, args.k, args.dim)
            res = run_job(cfg, km.map_function(cents), src, e, output_path=args.out)
            for c in km.new_centroids(e, res.output, cfg, cents):
                print(c.cluster_id, " ".join(f"{x:.12g}" for x in c.coordinates))
        res.output.close()
    print(f"# {res.distinct_keys} distinct keys, output {args.out} "
          f"({res.phases})", file=sys.stderr)
    return 0


def _audit_inputs(job: str, sweeps: int, blocks: int, seed: int):
    """Programs plus equal-shape inputs (random sweep plus corner cases)."""
    rng = random.Random(seed)
    if job == "wordcount":
        cfg = wc.default_config()
        n_tok = blocks * cfg.records_per_block
        corpora = [zipf_tokens(n_tok, rng.choice([5, 50, 500]), seed=rng.randrange(1 << 30))
                   for _ in range(sweeps)]
        corpora += [["same"] * n_tok, [f"w{i}" for i in range(n_tok)]]

        def program(tokens):
            with Enclave(cfg.seal_key) as e:
                with trace.suspended():
                    src = wc.encode_text(tokens, e.workdir / "in.blk", cfg.seal_key)
                return run_job(cfg, wc.map_function(), src, e).distinct_keys
        return program, corpora, None
    if job == "kmeans":
        cfg = km.default_config()
        n = blocks * cfg.records_per_block
        sets = [gaussian_mixture(n, k=rng.randint(1, 8), seed=rng.randrange(1 << 30))[0]
                for _ in range(sweeps)]
        sets += [np.zeros((n, 2))]
        cents = km.as_centroids([[0, 0], [50, 50], [-50, 20]])

        def program(points):
            with Enclave(cfg.seal_key) as e:
                with trace.suspended():
                    src = km.encode_points(points, e.workdir / "in.blk", cfg.seal_key)
                return run_job(cfg.with_(padding_mode="pad_only"), km.map_function(cents), src, e).distinct_keys
        return program, sets, None
    if job in ("bitonic", "merge"):
        sorter = bitonic_sort_blocks if job == "bitonic" else merge_sort_blocks
        rs, rpb = 16, 4
        datasets = [[rng.randrange(1 << 60) for _ in range(blocks * rpb)] for _ in range(sweeps)]
        asc = list(range(1, blocks * rpb + 1))
        half = blocks * rpb // 2
        datasets += [asc, asc[::-1], asc[half:] + asc[:half]]

        def program(keys):
            with Enclave() as e:
                with trace.suspended():
                    from .enclave import PlainBlock
                    from .records import ints_to_rows
                    f = e.new_file(BlockFileMeta(rs, rpb), "in")
                    for b in range(blocks):
                        vals = [k << (8 * (rs - 8)) for k in keys[b * rpb:(b + 1) * rpb]]
                        e.write_plain(f, b, PlainBlock(f.file_id, b, ints_to_rows(vals, rs)))
                sorter(f, e)
        return program, datasets, None
    raise ValueError(f"unknown audit job {job!r}")


def cmd_audit(args) -> int:
    blocks = args.blocks
    if args.job in ("bitonic", "merge") and blocks & (blocks - 1):
        raise SystemExit("--blocks must be a power of two for sort audits")
    program, inputs, normalize = _audit_inputs(args.job, args.sweeps, blocks, args.seed)
    verdict = trace.assert_oblivious(program, inputs, shape=lambda x: len(x), normalize=normalize)
    if args.export:
        tr = trace.capture(program, inputs[0])
        with open(args.export, "w") as fh:
            tr.export(fh)
    print(f"{args.job}: {verdict}")
    if not verdict:
        i, j = verdict.witness
        print(f"witness: input #{i} vs input #{j}, first divergent event {verdict.divergence}")
        return 1
    return 0


def cmd_bench(args) -> int:
    names = list(SCENARIOS) if args.scenarios in ("all", "") else [s.strip() for s in args.scenarios.split(",")]
    settings = BenchSettings(blocks=args.blocks, block_size=args.block_size, seed=args.seed)
    try:
        report = run_bench(names, settings,
                           progress=lambda r: print(f"{r.scenario}: reads={r.untrusted_reads} "
                                                    f"writes={r.untrusted_writes} "
                                                    f"touches={r.enclave_record_touches} "
                                                    f"wall={r.wall_ms:.0f}ms", file=sys.stderr))
    except UnknownScenarioError as exc:
        print(exc.args[0], file=sys.stderr)
        return 2
    report.write_csv(args.out)
    if report.comparisons:
        print(report.summary())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oblivmr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("encode", help="seal a text or vector file into a block file")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--block-size", type=int, default=2048)
    e.add_argument("--record-size", type=int, default=0,
                   help="default: 32 for text, 30 records per block for vectors")
    e.add_argument("--key", required=True, help="128-bit seal key, hex")
    e.add_argument("--format", choices=("text", "vectors"), default="text")
    e.set_defaults(func=cmd_encode)

    r = sub.add_parser("run", help="run a sample job on an encoded file")
    r.add_argument("--job", choices=("wordcount", "kmeans"), required=True)
    r.add_argument("--config")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--key", help="seal key (overrides key_hex in the config)")
    r.add_argument("--centroids", help="kmeans: initial centroids, one vector per line")
    r.add_argument("--k", type=int, default=5, help="kmeans: clusters when --centroids is absent")
    r.add_argument("--dim", type=int, default=2, help="kmeans: point dimension when --centroids is absent")
    r.add_argument("--top", type=int, default=0, help="wordcount: print only the top N words")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("audit", help="check that a job's trace is input-independent")
    a.add_argument("--job", choices=("wordcount", "kmeans", "bitonic", "merge"), required=True)
    a.add_argument("--sweeps", type=int, default=20)
    a.add_argument("--blocks", type=int, default=8)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--export", help="write the first input's trace here")
    a.set_defaults(func=cmd_audit)

    b = sub.add_parser("bench", help="run benchmark scenarios and write CSV")
    b.add_argument("--scenarios", default="all", help="comma-separated names or 'all'")
    b.add_argument("--out", required=True)
    b.add_argument("--blocks", type=int, default=1024)
    b.add_argument("--block-size", type=int, default=2048)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except IntegrityError as exc:
        print(f"integrity check failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
