"""One KMeans iteration: assign points to the nearest centroid, recompute.

Input record: 8-byte big-endian point index, then the coordinates as
big-endian float64.  Map output: cluster id as key, value lanes holding
each coordinate in 32.32 fixed point followed by a count of 1.  The SUM
aggregator accumulates (vector sum, count) per cluster.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from ..aggregators import Aggregator
from ..blockstore import BlockFile, BlockFileMeta
from ..encoding import encode_records
from ..enclave import Enclave, SealKey
from ..engine import JobConfig, JobResult, MapFunction, real_records, run_job
from ..records import RecordOverflowError, lanes_bytes

RECORDS_PER_BLOCK = 30
KEY_SIZE = 8
FRAC_BITS = 32
_SCALE = float(1 << FRAC_BITS)
_LIMIT = float(1 << (63 - FRAC_BITS))


@dataclass(frozen=True)
class Centroid:
    cluster_id: int
    coordinates: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.coordinates)


def as_centroids(points) -> list[Centroid]:
    return [Centroid(i, tuple(float(x) for x in p)) for i, p in enumerate(points)]


def nearest(point: np.ndarray, centers: np.ndarray) -> int:
    """Squared Euclidean distance; ties go to the lower cluster id."""
    d = ((centers - point) ** 2).sum(axis=1)
    return int(np.argmin(d))


def to_fixed(x: float) -> int:
    if not -_LIMIT < x < _LIMIT:
        raise RecordOverflowError(f"coordinate {x} outside the fixed-point range")
    return int(round(x * _SCALE))


def kmeans_map(record: bytes, centroids: Sequence[Centroid]) -> list[tuple[bytes, bytes]]:
    if not centroids:
        raise ValueError("no centroids")
    d = centroids[0].dim
    centers = np.array([c.coordinates for c in centroids], dtype=np.float64)
    if centers.shape[1] != d:
        raise ValueError("centroids disagree on dimension")
    point = np.array(struct.unpack(f">{d}d", record[KEY_SIZE:KEY_SIZE + 8 * d]))
    cid = centroids[nearest(point, centers)].cluster_id
    return [(cid.to_bytes(KEY_SIZE, "big"), lanes_bytes([to_fixed(x) for x in point] + [1]))]


def map_function(centroids: Sequence[Centroid]) -> MapFunction:
    cents = list(centroids)
    return MapFunction(lambda rec: kmeans_map(rec, cents), 1)


def record_size(block_size: int = 2048, records_per_block: int = RECORDS_PER_BLOCK) -> int:
    return BlockFileMeta.for_block_size(block_size, records_per_block=records_per_block).record_size


def default_config(block_size: int = 2048, **kw) -> JobConfig:
    kw.setdefault("record_size", record_size(block_size))
    kw.setdefault("key_size", KEY_SIZE)
    kw.setdefault("aggregator", Aggregator("SUM"))
    return JobConfig(block_size=block_size, **kw)


def encode_points(points: np.ndarray, path: Union[str, Path], key: SealKey,
                  block_size: int = 2048, records_per_block: int = RECORDS_PER_BLOCK) -> BlockFile:
    points = np.asarray(points, dtype=np.float64)
    meta = BlockFileMeta.for_block_size(block_size, records_per_block=records_per_block)
    d = points.shape[1]
    if KEY_SIZE + 8 * (d + 1) > meta.record_size:
        raise RecordOverflowError(f"{d}-dimensional points do not fit record_size {meta.record_size}")
    recs = (i.to_bytes(KEY_SIZE, "big") + struct.pack(f">{d}d", *p) for i, p in enumerate(points))
    return encode_records(recs, meta, key, path)


def new_centroids(enclave: Enclave, handle: BlockFile, config: JobConfig,
                  old: Sequence[Centroid]) -> list[Centroid]:
    """Divide accumulated sums by counts; clusters with no points keep their centroid."""
    layout = config.layout
    d = old[0].dim
    sums = {}
    for rec in real_records(enclave, handle, layout):
        lanes = layout.lanes(rec, d + 1)
        sums[int.from_bytes(layout.key_bytes(rec), "big")] = lanes
    out = []
    for c in old:
        lanes = sums.get(c.cluster_id)
        if lanes is None or lanes[d] == 0:
            out.append(c)
        else:
            n = lanes[d]
            out.append(Centroid(c.cluster_id, tuple(lanes[i] / _SCALE / n for i in range(d))))
    return out


def oracle(points: np.ndarray, centroids: Sequence[Centroid]) -> list[Centroid]:
    """Plaintext float reference for one iteration."""
    points = np.asarray(points, dtype=np.float64)
    centers = np.array([c.coordinates for c in centroids], dtype=np.float64)
    assign = np.array([nearest(p, centers) for p in points], dtype=np.int64)
    out = []
    for i, c in enumerate(centroids):
        members = points[assign == i]
        out.append(c if len(members) == 0 else Centroid(c.cluster_id, tuple(members.mean(axis=0))))
    return out


def run_kmeans(points: np.ndarray, centroids: Sequence[Centroid], config: Optional[JobConfig] = None,
               enclave: Optional[Enclave] = None) -> tuple[list[Centroid], JobResult]:
    config = config or default_config()
    own = enclave is None
    enclave = enclave or Enclave(config.seal_key, config.workdir, config.buffer_capacity)
    try:
        src = encode_points(points, enclave.workdir / "points.blk", config.seal_key,
                            config.block_size, config.records_per_block)
        res = run_job(config, map_function(centroids), src, enclave)
        return new_centroids(enclave, res.output, config, centroids), res
    finally:
        if own:
            enclave.close()
