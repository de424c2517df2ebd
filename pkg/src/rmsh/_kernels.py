"""Hot loops over packed binary codes.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version with identical results. The numba path is used when numba imports
and the environment variable ``RMSH_DISABLE_NUMBA`` is unset (or ``0``).
Both variants stay importable as ``<name>_nb`` / ``<name>_np`` so tests and
``benchmarks/bench_kernels.py`` can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("RMSH_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_ENABLED = numba is not None and not _DISABLE

# popcount blocks copied from the classic SWAR routine; LLVM lowers it to popcnt
_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def hamming_distances_np(db: np.ndarray, query: np.ndarray) -> np.ndarray:
    return np.bitwise_count(db ^ query[None, :]).sum(axis=1, dtype=np.int64)


def hamming_matrix_np(queries: np.ndarray, db: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty((queries.shape[0], db.shape[0]), dtype=np.int64)
    for start in range(0, queries.shape[0], chunk):
        q = queries[start : start + chunk]
        out[start : start + chunk] = np.bitwise_count(q[:, None, :] ^ db[None, :, :]).sum(axis=2, dtype=np.int64)
    return out


def rank_by_distance_np(dist: np.ndarray, id_order: np.ndarray, max_dist: int) -> np.ndarray:
    # id_order: database positions listed in ascending identifier order
    tie_rank = np.empty_like(id_order)
    tie_rank[id_order] = np.arange(id_order.shape[0])
    return np.lexsort((tie_rank, dist)).astype(np.int64)


def min_pairwise_distance_np(words: np.ndarray) -> int:
    best = 1 << 62
    for i in range(words.shape[0] - 1):
        best = min(best, int(np.bitwise_count(words[i + 1 :] ^ words[i]).min()))
    return best


def greedy_scan_np(n_bits: int, min_dist: int) -> np.ndarray:
    kept = np.empty(1 << n_bits, dtype=np.uint64)
    m = 0
    for w in range(1 << n_bits):
        word = np.uint64(w)
        if m == 0 or np.bitwise_count(kept[:m] ^ word).min() >= min_dist:
            kept[m] = word
            m += 1
    return kept[:m].copy()


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if numba is not None:

    @numba.njit(cache=True, inline="always")
    def _popcount64(x):
        x = x - ((x >> np.uint64(1)) & _M1)
        x = (x & _M2) + ((x >> np.uint64(2)) & _M2)
        x = (x + (x >> np.uint64(4))) & _M4
        return (x * _H01) >> np.uint64(56)

    @numba.njit(cache=True)
    def hamming_distances_nb(db, query):
        n, w = db.shape
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            acc = np.uint64(0)
            for j in range(w):
                acc += _popcount64(db[i, j] ^ query[j])
            out[i] = np.int64(acc)
        return out

    @numba.njit(cache=True)
    def hamming_matrix_nb(queries, db):
        nq, w = queries.shape
        n = db.shape[0]
        out = np.empty((nq, n), dtype=np.int64)
        for q in range(nq):
            for i in range(n):
                acc = np.uint64(0)
                for j in range(w):
                    acc += _popcount64(db[i, j] ^ queries[q, j])
                out[q, i] = np.int64(acc)
        return out

    @numba.njit(cache=True)
    def rank_by_distance_nb(dist, id_order, max_dist):
        # counting sort on distance; visiting rows in identifier order keeps ties stable
        counts = np.zeros(max_dist + 2, dtype=np.int64)
        n = dist.shape[0]
        for i in range(n):
            counts[dist[i] + 1] += 1
        for d in range(1, max_dist + 2):
            counts[d] += counts[d - 1]
        out = np.empty(n, dtype=np.int64)
        for r in range(n):
            pos = id_order[r]
            d = dist[pos]
            out[counts[d]] = pos
            counts[d] += 1
        return out

    @numba.njit(cache=True)
    def min_pairwise_distance_nb(words):
        best = np.int64(1) << np.int64(62)
        n = words.shape[0]
        for i in range(n - 1):
            for j in range(i + 1, n):
                d = np.int64(_popcount64(words[i] ^ words[j]))
                if d < best:
                    best = d
        return best

    @numba.njit(cache=True)
    def greedy_scan_nb(n_bits, min_dist):
        total = 1 << n_bits
        kept = np.empty(total, dtype=np.uint64)
        m = 0
        for w in range(total):
            word = np.uint64(w)
            ok = True
            for t in range(m):
                if np.int64(_popcount64(kept[t] ^ word)) < min_dist:
                    ok = False
                    break
            if ok:
                kept[m] = word
                m += 1
        return kept[:m].copy()

else:  # pragma: no cover
    hamming_distances_nb = hamming_distances_np
    hamming_matrix_nb = hamming_matrix_np
    rank_by_distance_nb = rank_by_distance_np
    min_pairwise_distance_nb = min_pairwise_distance_np
    greedy_scan_nb = greedy_scan_np


if NUMBA_ENABLED:
    hamming_distances = hamming_distances_nb
    hamming_matrix = hamming_matrix_nb
    rank_by_distance = rank_by_distance_nb
    min_pairwise_distance = min_pairwise_distance_nb
    greedy_scan = greedy_scan_nb
else:
    hamming_distances = hamming_distances_np
    hamming_matrix = hamming_matrix_np
    rank_by_distance = rank_by_distance_np
    min_pairwise_distance = min_pairwise_distance_np
    greedy_scan = greedy_scan_np
