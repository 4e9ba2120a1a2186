import numpy as np
import pytest
from hypothesis import settings

from oblivmr.blockstore import BlockFileMeta
from oblivmr.enclave import Enclave, PlainBlock, SealKey
from oblivmr.records import dummy_int, ints_to_rows

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

RS = 16  # small records: 8-byte key prefix + 8 bytes


@pytest.fixture
def enclave(tmp_path):
    with Enclave(SealKey.generate(), tmp_path / "work", buffer_capacity=4) as e:
        yield e


def key_record(k: int, rs: int = RS) -> int:
    """Record whose leading 8 bytes are ``k`` and whose tail is zero."""
    return k << (8 * (rs - 8))


def file_from_ints(enclave: Enclave, values, rpb: int, rs: int = RS, name: str = "in"):
    """Write record integers into a new file, dummy-filling the last block."""
    values = list(values)
    f = enclave.new_file(BlockFileMeta(rs, rpb), name)
    d = dummy_int(rs)
    n_blocks = -(-len(values) // rpb)
    for b in range(n_blocks):
        chunk = values[b * rpb:(b + 1) * rpb]
        chunk += [d] * (rpb - len(chunk))
        enclave.write_plain(f, b, PlainBlock(f.file_id, b, ints_to_rows(chunk, rs)))
    return f


def file_from_keys(enclave: Enclave, keys, rpb: int, rs: int = RS, name: str = "in"):
    return file_from_ints(enclave, [key_record(k, rs) for k in keys], rpb, rs, name)


def random_rows(rng: np.random.Generator, n: int, rs: int = RS) -> np.ndarray:
    rows = rng.integers(0, 256, size=(n, rs), dtype=np.uint8)
    rows[:, 0] = np.minimum(rows[:, 0], 0xFE)
    return rows


# Acceptance lines: each criterion test appends one, the summary prints them.
ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    def record(criterion: int, ok: bool, detail: str) -> None:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
