"""Compiled compare-exchange kernel over uint8 record rows."""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _greater(rows, a, b):
    # Returns (a > b, a < b) over the full record, lexicographically.
    width = rows.shape[1]
    for c in range(width):
        x = rows[a, c]
        y = rows[b, c]
        if x != y:
            return (1, 0) if x > y else (0, 1)
    return (0, 0)


@numba.njit(cache=True, nogil=True)
def run_schedule(rows, si, sj, sasc):
    width = rows.shape[1]
    swaps = 0
    for t in range(si.shape[0]):
        a = si[t]
        b = sj[t]
        gt, lt = _greater(rows, a, b)
        asc = np.uint8(sasc[t])
        cond = (gt & asc) | (lt & (asc ^ 1))
        m = np.uint8(0) - np.uint8(cond)
        for c in range(width):
            d = (rows[a, c] ^ rows[b, c]) & m
            rows[a, c] ^= d
            rows[b, c] ^= d
        swaps += cond
    return swaps



@numba.njit(cache=True, nogil=True)
def masked_extract(ids, words, sel, new, wmask, out):
    """One pass over all slots: out = OR of selected rows; selected rows
    are overwritten with ``new`` where ``wmask`` is all ones."""
    m, width = words.shape
    for c in range(width):
        out[c] = 0
    for s in range(m):
        mask = np.uint64(0) - np.uint64(sel[s])
        wm = mask & wmask
        for c in range(width):
            v = words[s, c]
            out[c] |= v & mask
            words[s, c] = v ^ ((v ^ new[c]) & wm)
