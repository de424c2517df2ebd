"""Packed binary codes and exact Hamming top-k search.

Layout: code bit ``i`` of row ``n`` lives in ``words[n, i // 64]`` at bit
position ``i % 64``; +1 maps to bit 1 and -1 to bit 0. Padding bits past
``K`` are always zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .data import SimilarityMatrix
from .errors import BadMagicError, DimensionMismatchError, ShapeMismatchError, TruncatedFileError, ValidationError

CODE_MAGIC = b"RMSHCODE"
WORD_BITS = 64


def n_words(K: int) -> int:
    return (K + WORD_BITS - 1) // WORD_BITS


def default_ids(n: int) -> list[str]:
    width = len(str(max(n - 1, 0)))
    return [str(i).zfill(width) for i in range(n)]


@dataclass(frozen=True)
class PackedCodes:
    K: int
    words: np.ndarray  # (N, ceil(K/64)) uint64
    ids: tuple[str, ...]

    def __post_init__(self):
        w = np.ascontiguousarray(self.words, dtype=np.uint64)
        if w.ndim != 2 or w.shape[1] != n_words(self.K):
            raise ShapeMismatchError(f"words shape {w.shape} does not fit K={self.K}")
        if len(self.ids) != w.shape[0]:
            raise ShapeMismatchError(f"{len(self.ids)} ids for {w.shape[0]} codes")
        w.flags.writeable = False
        object.__setattr__(self, "words", w)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        # rows in ascending identifier order, used for tie-breaking
        order = np.array(sorted(range(len(self.ids)), key=self.ids.__getitem__), dtype=np.int64)
        object.__setattr__(self, "_id_order", order)

    @property
    def n(self) -> int:
        return self.words.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self.words[i]

    def position(self, identifier: str) -> int:
        try:
            return self.ids.index(str(identifier))
        except ValueError:
            raise ValidationError(f"unknown identifier {identifier!r}") from None

    def unpack(self) -> np.ndarray:
        return unpack(self)


@dataclass(frozen=True)
class SearchResult:
    ids: tuple[str, ...]
    distances: tuple[int, ...]
    positions: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)

    def pairs(self) -> list[tuple[str, int]]:
        return list(zip(self.ids, self.distances))


def pack(codes, ids: Sequence | None = None) -> PackedCodes:
    c = np.asarray(codes)
    if c.ndim == 1:
        c = c[None, :]
    if c.ndim != 2:
        raise ShapeMismatchError(f"codes must be (N, K), got {c.shape}")
    if not np.isin(c, (-1, 1)).all():
        raise ValidationError("codes must contain only -1 and +1")
    N, K = c.shape
    bits = c > 0
    W = n_words(K)
    padded = np.zeros((N, W * WORD_BITS), dtype=bool)
    padded[:, :K] = bits
    # packbits is MSB-first per byte; little bit order plus little-endian words gives bit i at position i % 64
    words = np.packbits(padded, axis=1, bitorder="little").view("<u8").astype(np.uint64).reshape(N, W)
    return PackedCodes(K, words, tuple(default_ids(N) if ids is None else ids))


def unpack(packed: PackedCodes) -> np.ndarray:
    as_bytes = packed.words.astype("<u8").view(np.uint8).reshape(packed.n, -1)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little")[:, : packed.K]
    return np.where(bits == 1, 1, -1).astype(np.int8)


def hamming(a: np.ndarray, b: np.ndarray, K: int | None = None) -> int:
    a = np.atleast_1d(np.asarray(a, dtype=np.uint64))
    b = np.atleast_1d(np.asarray(b, dtype=np.uint64))
    if a.shape != b.shape:
        raise ShapeMismatchError(f"packed rows differ in width: {a.shape} vs {b.shape}")
    return int(np.bitwise_count(a ^ b).sum())


def _check_query(index: PackedCodes, query) -> np.ndarray:
    if isinstance(query, PackedCodes):
        if query.K != index.K:
            raise DimensionMismatchError(f"query K={query.K} vs index K={index.K}")
        return query.words[0]
    q = np.asarray(query, dtype=np.uint64).ravel()
    if q.shape[0] != index.words.shape[1]:
        raise DimensionMismatchError(f"query has {q.shape[0]} words, index rows have {index.words.shape[1]}")
    return q


def search_topk(index: PackedCodes, query, k: int = 10) -> SearchResult:
    """Exact k nearest rows; ties break by ascending identifier."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    q = _check_query(index, query)
    dist = _kernels.hamming_distances(index.words, q)
    order = _kernels.rank_by_distance(dist, index._id_order, index.K)[: min(k, index.n)]
    return SearchResult(
        tuple(index.ids[i] for i in order),
        tuple(int(d) for d in dist[order]),
        tuple(int(i) for i in order),
    )


def rank_all(index: PackedCodes, queries: PackedCodes) -> tuple[np.ndarray, np.ndarray]:
    """Full rankings for every query row: (positions, distances), both (Q, N)."""
    if queries.K != index.K:
        raise DimensionMismatchError(f"query K={queries.K} vs index K={index.K}")
    dist = _kernels.hamming_matrix(queries.words, index.words)
    order = np.empty_like(dist)
    for qi in range(queries.n):
        order[qi] = _kernels.rank_by_distance(dist[qi], index._id_order, index.K)
    return order, np.take_along_axis(dist, order, axis=1)


def distance_matrix(a: PackedCodes, b: PackedCodes) -> np.ndarray:
    if a.K != b.K:
        raise DimensionMismatchError(f"K differs: {a.K} vs {b.K}")
    return _kernels.hamming_matrix(a.words, b.words)


DEFAULT_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)


def distance_histogram(index_a: PackedCodes, index_b: PackedCodes, similarity: SimilarityMatrix,
                       levels: Sequence[float] = DEFAULT_LEVELS) -> dict[str, np.ndarray]:
    """Hamming-distance counts (length K+1) per similarity bucket over all (a, b) pairs.

    Buckets: ``S == 0`` then ``(levels[i], levels[i+1]]``.
    """
    if similarity.shape != (index_a.n, index_b.n):
        raise ShapeMismatchError(f"similarity {similarity.shape} vs codes {(index_a.n, index_b.n)}")
    levels = list(levels)
    if levels[0] != 0.0 or sorted(levels) != levels:
        raise ValidationError("levels must start at 0 and increase")
    dist = distance_matrix(index_a, index_b)
    s = similarity.dense()
    out = {"0": np.bincount(dist[s == 0], minlength=index_a.K + 1)}
    for lo, hi in zip(levels[:-1], levels[1:]):
        mask = (s > lo) & (s <= hi)
        out[f"({lo:g},{hi:g}]"] = np.bincount(dist[mask], minlength=index_a.K + 1)
    return out


# ---------------------------------------------------------------------------
# code file: magic, K u32, N u64, N*W words LE, then N x (u32 length + utf-8 id)
# ---------------------------------------------------------------------------


def save_codes(path, packed: PackedCodes) -> None:
    with open(path, "wb") as fh:
        fh.write(CODE_MAGIC)
        fh.write(struct.pack("<IQ", packed.K, packed.n))
        fh.write(packed.words.astype("<u8").tobytes())
        for ident in packed.ids:
            raw = ident.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def load_codes(path) -> PackedCodes:
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != CODE_MAGIC:
        raise BadMagicError(f"{path}: not a code file (magic {data[:8]!r})")
    if len(data) < 20:
        raise TruncatedFileError(f"{path}: truncated header")
    K, N = struct.unpack_from("<IQ", data, 8)
    if K < 1:
        raise DimensionMismatchError(f"{path}: K must be positive")
    W = n_words(K)
    off = 20
    nbytes = N * W * 8
    if len(data) < off + nbytes:
        raise TruncatedFileError(f"{path}: truncated code payload")
    words = np.frombuffer(data, dtype="<u8", count=N * W, offset=off).astype(np.uint64).reshape(N, W)
    off += nbytes
    ids = []
    for _ in range(N):
        if len(data) < off + 4:
            raise TruncatedFileError(f"{path}: truncated identifier list")
        (length,) = struct.unpack_from("<I", data, off)
        off += 4
        if len(data) < off + length:
            raise TruncatedFileError(f"{path}: truncated identifier")
        try:
            ids.append(data[off : off + length].decode("utf-8"))
        except UnicodeDecodeError:
            raise DimensionMismatchError(f"{path}: identifier is not valid UTF-8") from None
        off += length
    if off != len(data):
        raise DimensionMismatchError(f"{path}: trailing bytes after identifier list")
    pad = K % WORD_BITS
    if pad and (words[:, -1] >> np.uint64(pad)).any():
        raise DimensionMismatchError(f"{path}: non-zero padding bits beyond K={K}")
    return PackedCodes(K, words, tuple(ids))
