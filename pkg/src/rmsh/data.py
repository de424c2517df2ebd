"""Multi-label two-modality datasets.

Holds the label/feature containers, the graded cross-modal similarity
``S_ij = |l_i & l_j| / max(|l_i|, |l_j|)``, triplet sampling with the
reference-reordering rule, a synthetic generator and the binary file
formats for features and labels.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    EmptyLabelRowError,
    InvalidLabelValueError,
    NonFiniteError,
    ShapeMismatchError,
    TruncatedFileError,
    ValidationError,
)

FEATURE_MAGIC = b"RMSHFEAT"
FEATURE_VERSION = 1
LABEL_MAGIC = b"RMSHLBL0"
MODALITIES = ("image", "text")


@dataclass(frozen=True)
class LabelMatrix:
    entries: np.ndarray
    tag_names: tuple[str, ...] | None = None

    def __post_init__(self):
        e = np.asarray(self.entries)
        if e.ndim != 2 or e.shape[0] == 0 or e.shape[1] == 0:
            raise ValidationError(f"label matrix must be a non-empty 2-D array, got shape {e.shape}")
        if not np.isin(e, (0, 1)).all():
            raise InvalidLabelValueError("label entries must be exactly 0 or 1")
        e = e.astype(np.uint8)
        empty = np.flatnonzero(e.sum(axis=1) == 0)
        if empty.size:
            raise EmptyLabelRowError(int(empty[0]))
        if self.tag_names is not None and len(self.tag_names) != e.shape[1]:
            raise ShapeMismatchError(f"{len(self.tag_names)} tag names for {e.shape[1]} tags")
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def c(self) -> int:
        return self.entries.shape[1]

    @property
    def counts(self) -> np.ndarray:
        return self.entries.sum(axis=1, dtype=np.int64)

    def subset(self, rows) -> "LabelMatrix":
        return LabelMatrix(self.entries[rows], self.tag_names)


@dataclass(frozen=True)
class FeatureMatrix:
    rows: np.ndarray
    modality: str = "image"

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=np.float64)
        if r.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got shape {r.shape}")
        if not np.isfinite(r).all():
            bad = int(np.flatnonzero(~np.isfinite(r).all(axis=1))[0])
            raise NonFiniteError(f"non-finite feature value in row {bad}")
        if self.modality not in MODALITIES:
            raise ValidationError(f"unknown modality {self.modality!r}")
        r.flags.writeable = False
        object.__setattr__(self, "rows", r)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def subset(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(self.rows[rows], self.modality)


@dataclass(frozen=True)
class SimilarityMatrix:
    """Sparse store of S; zeros are implicit."""

    values: sp.csr_matrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def row(self, i: int) -> np.ndarray:
        return self.values.getrow(i).toarray().ravel()

    def dense(self) -> np.ndarray:
        return self.values.toarray()

    def __getitem__(self, ij) -> float:
        i, j = ij
        return float(self.values[i, j])


@dataclass(frozen=True)
class Triplet:
    ref_index: int
    pos_index: int
    neg_index: int
    margin_alpha: float
    y_ref_pos: int
    y_ref_neg: int


@dataclass(frozen=True)
class Dataset:
    """Aligned image/text/label rows."""

    image: FeatureMatrix
    text: FeatureMatrix
    labels: LabelMatrix

    def __post_init__(self):
        if not (self.image.n == self.text.n == self.labels.n):
            raise ShapeMismatchError(
                f"row counts differ: image={self.image.n} text={self.text.n} labels={self.labels.n}"
            )

    @property
    def n(self) -> int:
        return self.labels.n

    def subset(self, rows) -> "Dataset":
        return Dataset(self.image.subset(rows), self.text.subset(rows), self.labels.subset(rows))


def as_label_matrix(labels) -> LabelMatrix:
    return labels if isinstance(labels, LabelMatrix) else LabelMatrix(np.asarray(labels))


# ---------------------------------------------------------------------------
# similarity
# ---------------------------------------------------------------------------


def similarity(l1, l2) -> float:
    a = np.asarray(l1).astype(bool)
    b = np.asarray(l2).astype(bool)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"label rows differ in length: {a.shape} vs {b.shape}")
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 or nb == 0:
        raise EmptyLabelRowError(0 if na == 0 else 1, "similarity arguments")
    return int((a & b).sum()) / max(na, nb)


def build_similarity(labels_a, labels_b=None) -> SimilarityMatrix:
    la = as_label_matrix(labels_a)
    lb = la if labels_b is None else as_label_matrix(labels_b)
    if la.c != lb.c:
        raise ShapeMismatchError(f"tag counts differ: {la.c} vs {lb.c}")
    a = sp.csr_matrix(la.entries, dtype=np.int64)
    b = sp.csr_matrix(lb.entries, dtype=np.int64)
    inter = (a @ b.T).tocoo()
    ca, cb = la.counts, lb.counts
    vals = inter.data / np.maximum(ca[inter.row], cb[inter.col])
    s = sp.csr_matrix((vals, (inter.row, inter.col)), shape=(la.n, lb.n))
    s.eliminate_zeros()
    s.sort_indices()
    return SimilarityMatrix(s)


# ---------------------------------------------------------------------------
# triplets
# ---------------------------------------------------------------------------


def sample_triplet_indices(n: int, batch: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform ordered triples of distinct indices, shape (batch, 3)."""
    if n < 3:
        raise ValidationError(f"need at least 3 samples to form triplets, got {n}")
    a = rng.integers(0, n, size=batch)
    b = rng.integers(0, n - 1, size=batch)
    b = b + (b >= a)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    c = rng.integers(0, n - 2, size=batch)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return np.stack([a, b, c], axis=1).astype(np.int64)


def order_triplet(counts: np.ndarray, inter: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reference-reordering rule, vectorised.

    ``counts`` (B, 3) tag counts of the members; ``inter`` (B, 3, 3) pairwise
    intersection sizes. Members are identified by position 0..2, and ties break
    toward the lower position. Returns positions (ref, pos, neg), each (B,).
    """
    ref = np.argmax(counts, axis=1)
    o1 = np.where(ref == 0, 1, 0)
    o2 = np.where(ref == 2, 1, 2)
    rows = np.arange(counts.shape[0])
    # ref holds the max count, so S(ref, x) = |l_ref & l_x| / |l_ref|: compare raw counts
    first = inter[rows, ref, o1] >= inter[rows, ref, o2]
    pos = np.where(first, o1, o2)
    neg = np.where(first, o2, o1)
    return ref, pos, neg


def sample_triplet_batch(labels, similarity_matrix: SimilarityMatrix | None, batch: int, delta: int,
                         rng: np.random.Generator) -> list[Triplet]:
    lm = as_label_matrix(labels)
    idx = sample_triplet_indices(lm.n, batch, rng)
    return make_triplets(lm, idx, delta, similarity_matrix)


def make_triplets(labels, idx: np.ndarray, delta: int, similarity_matrix: SimilarityMatrix | None = None) -> list[Triplet]:
    lm = as_label_matrix(labels)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
    # ties in count break by lowest sample index, so sort members by index first
    idx = np.sort(idx, axis=1)
    e = lm.entries[idx].astype(np.int64)
    counts = e.sum(axis=2)
    inter = np.einsum("bic,bjc->bij", e, e)
    ref, pos, neg = order_triplet(counts, inter)
    rows = np.arange(idx.shape[0])
    i_rp = inter[rows, ref, pos]
    i_rn = inter[rows, ref, neg]
    alpha = delta * (i_rp - i_rn) / counts[rows, ref]
    out = []
    for b in range(idx.shape[0]):
        r, p, q = idx[b, ref[b]], idx[b, pos[b]], idx[b, neg[b]]
        if similarity_matrix is not None:
            y_rp = int(similarity_matrix[r, p] > 0)
            y_rn = int(similarity_matrix[r, q] > 0)
        else:
            y_rp, y_rn = int(i_rp[b] > 0), int(i_rn[b] > 0)
        out.append(Triplet(int(r), int(p), int(q), float(alpha[b]), y_rp, y_rn))
    return out


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 2000
    c: int = 8
    dim_image: int = 32
    dim_text: int = 24
    tag_probs: tuple[float, ...] | float = 0.2
    noise: float = 0.1
    seed: int = 0
    tag_names: tuple[str, ...] | None = field(default=None)

    def thetas(self) -> np.ndarray:
        if np.isscalar(self.tag_probs):
            return np.full(self.c, float(self.tag_probs))
        t = np.asarray(self.tag_probs, dtype=np.float64)
        if t.shape != (self.c,):
            raise ValidationError(f"{t.size} tag probabilities for {self.c} tags")
        return t


def generate_synthetic(config: SyntheticConfig | None = None, **kwargs) -> tuple[FeatureMatrix, FeatureMatrix, LabelMatrix]:
    """Labels ~ independent Bernoulli per tag (empty rows redrawn); each
    modality sees ``labels @ P_modality + noise * N(0, 1)``."""
    cfg = config or SyntheticConfig(**kwargs)
    thetas = cfg.thetas()
    if cfg.n < 1 or cfg.c < 1 or cfg.dim_image < 1 or cfg.dim_text < 1:
        raise ValidationError("synthetic sizes must be positive")
    if not ((thetas > 0) & (thetas < 1)).all():
        raise ValidationError("tag probabilities must lie strictly inside (0, 1)")
    if cfg.noise < 0 or not np.isfinite(cfg.noise):
        raise ValidationError("noise level must be a finite non-negative number")

    rng = np.random.default_rng(cfg.seed)
    labels = (rng.random((cfg.n, cfg.c)) < thetas).astype(np.uint8)
    empty = labels.sum(axis=1) == 0
    while empty.any():
        labels[empty] = rng.random((int(empty.sum()), cfg.c)) < thetas
        empty = labels.sum(axis=1) == 0

    proj_x = rng.standard_normal((cfg.c, cfg.dim_image))
    proj_y = rng.standard_normal((cfg.c, cfg.dim_text))
    x = labels @ proj_x + cfg.noise * rng.standard_normal((cfg.n, cfg.dim_image))
    y = labels @ proj_y + cfg.noise * rng.standard_normal((cfg.n, cfg.dim_text))
    return FeatureMatrix(x, "image"), FeatureMatrix(y, "text"), LabelMatrix(labels, cfg.tag_names)


# ---------------------------------------------------------------------------
# file formats (little-endian throughout)
# ---------------------------------------------------------------------------


def _read_exact(fh, n: int, what: str, path) -> bytes:
    # guard against corrupted headers declaring payloads larger than the file
    remaining = os.fstat(fh.fileno()).st_size - fh.tell()
    if n > remaining:
        raise TruncatedFileError(f"{path}: truncated while reading {what} ({remaining} of {n} bytes)")
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"{path}: truncated while reading {what} ({len(buf)} of {n} bytes)")
    return buf


def save_features(path, features: FeatureMatrix) -> None:
    rows = np.ascontiguousarray(features.rows, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<HQQ", FEATURE_VERSION, rows.shape[0], rows.shape[1]))
        fh.write(rows.tobytes())


def load_features(path, modality: str = "image") -> FeatureMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "magic", path)
        if magic != FEATURE_MAGIC:
            raise BadMagicError(f"{path}: not a feature file (magic {magic!r})")
        version, n, d = struct.unpack("<HQQ", _read_exact(fh, 18, "header", path))
        if version != FEATURE_VERSION:
            raise DimensionMismatchError(f"{path}: unsupported feature file version {version}")
        nbytes = n * d * 4
        payload = _read_exact(fh, nbytes, "feature payload", path)
        if fh.read(1):
            raise DimensionMismatchError(f"{path}: trailing bytes after {n}x{d} payload")
    rows = np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)
    if not np.isfinite(rows).all():
        bad = int(np.flatnonzero(~np.isfinite(rows).all(axis=1))[0])
        raise NonFiniteError(f"{path}: non-finite feature value in row {bad}")
    return FeatureMatrix(rows, modality)


def save_labels(path, labels: LabelMatrix) -> None:
    e = np.ascontiguousarray(labels.entries, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<QQ", e.shape[0], e.shape[1]))
        fh.write(e.tobytes())


def load_labels(path) -> LabelMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "magic", path)
        if magic != LABEL_MAGIC:
            raise BadMagicError(f"{path}: not a label file (magic {magic!r})")
        n, c = struct.unpack("<QQ", _read_exact(fh, 16, "header", path))
        payload = _read_exact(fh, n * c, "label payload", path)
        if fh.read(1):
            raise DimensionMismatchError(f"{path}: trailing bytes after {n}x{c} payload")
    if n == 0 or c == 0:
        raise DimensionMismatchError(f"{path}: empty label matrix ({n}x{c})")
    e = np.frombuffer(payload, dtype=np.uint8).reshape(n, c)
    if (e > 1).any():
        bad = int(np.flatnonzero((e > 1).any(axis=1))[0])
        raise InvalidLabelValueError(f"{path}: row {bad} has a label byte other than 0/1")
    empty = np.flatnonzero(e.sum(axis=1) == 0)
    if empty.size:
        raise EmptyLabelRowError(int(empty[0]), str(path))
    return LabelMatrix(e.copy())


def load_dataset(image_path, text_path, labels_path) -> Dataset:
    return Dataset(load_features(image_path, "image"), load_features(text_path, "text"), load_labels(labels_path))


def save_dataset(prefix_dir, name: str, ds: Dataset) -> dict[str, Path]:
    d = Path(prefix_dir)
    paths = {
        "image": d / f"{name}_image.feat",
        "text": d / f"{name}_text.feat",
        "labels": d / f"{name}_labels.lbl",
    }
    save_features(paths["image"], ds.image)
    save_features(paths["text"], ds.text)
    save_labels(paths["labels"], ds.labels)
    return paths


def split_dataset(ds: Dataset, n_query: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random held-out query split; returns (database/train, query)."""
    if not 0 < n_query < ds.n:
        raise ValidationError(f"query size {n_query} must lie in (0, {ds.n})")
    perm = np.random.default_rng(seed).permutation(ds.n)
    return ds.subset(np.sort(perm[n_query:])), ds.subset(np.sort(perm[:n_query]))


def pseudo_labels(l1: np.ndarray, l2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Union and intersection labels of two label rows (or row batches)."""
    a = np.asarray(l1).astype(np.uint8)
    b = np.asarray(l2).astype(np.uint8)
    return a | b, a & b


__all__ = (
    "LabelMatrix",
    "FeatureMatrix",
    "SimilarityMatrix",
    "Triplet",
    "Dataset",
    "SyntheticConfig",
    "similarity",
    "build_similarity",
    "sample_triplet_batch",
    "sample_triplet_indices",
    "make_triplets",
    "order_triplet",
    "generate_synthetic",
    "save_features",
    "load_features",
    "save_labels",
    "load_labels",
    "load_dataset",
    "save_dataset",
    "split_dataset",
    "pseudo_labels",
)
