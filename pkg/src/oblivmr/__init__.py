"""Oblivious MapReduce over sealed block files with a simulated enclave.

Data outside the enclave lives in fixed-size AES-GCM sealed blocks; every
phase of a job (map, sort, reduce, post-process) touches blocks and
in-enclave record slots in an order that depends only on input size.
"""

from .aggregators import Aggregator
from .blocksort import bitonic_sort_blocks, merge_sort_blocks
from .blockstore import BlockFile, BlockFileMeta, create_file, open_file
from .enclave import Enclave, IntegrityError, PlainBlock, SealKey
from .engine import JobConfig, JobResult, MapFunction, run_job
from .oram import oram_access, oram_init, oram_read, oram_write
from .trace import assert_oblivious, capture, trace_stats

__all__ = [
    "Aggregator", "BlockFile", "BlockFileMeta", "Enclave", "IntegrityError", "JobConfig",
    "JobResult", "MapFunction", "PlainBlock", "SealKey", "assert_oblivious",
    "bitonic_sort_blocks", "capture", "create_file", "merge_sort_blocks", "open_file",
    "oram_access", "oram_init", "oram_read", "oram_write", "run_job", "trace_stats",
]
