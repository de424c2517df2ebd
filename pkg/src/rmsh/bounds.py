"""Effective range of the robust margin ``delta`` for K-bit codes.

Upper end: the packing argument. Codes for ``2**H(L)`` distinct label
patterns need ``A(K, delta) >= 2**H(L)``; the Gilbert-Varshamov bound and the
entropy bound on Hamming-ball volume turn this into
``H((delta - 1) / K) <= 1 - H(L) / K``.

Lower end: ``delta`` bits must cover the per-sample neighbour entropy
``H_i`` with probability ``confidence``; Chebyshev gives
``delta >= sqrt(Var(H) / (1 - confidence)) + E(H)``.

Entropies here are in bits. Binomial sums are exact Python integers.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .data import LabelMatrix, SimilarityMatrix, as_label_matrix, build_similarity
from .errors import ValidationError

MODES = ("cardinality", "exact")
GREEDY_MAX_BITS = 20


@dataclass(frozen=True)
class TagDistribution:
    thetas: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thetas, dtype=np.float64).ravel()
        if t.size == 0 or not ((t >= 0) & (t <= 1)).all():
            raise ValidationError("tag probabilities must be a non-empty vector in [0, 1]")
        object.__setattr__(self, "thetas", t)


@dataclass(frozen=True)
class BinaryCodebook:
    K: int
    min_distance: int
    words: np.ndarray  # uint64, one codeword per entry, bit i = position i

    @property
    def size(self) -> int:
        return int(self.words.shape[0])

    def as_bits(self) -> np.ndarray:
        shifts = np.arange(self.K, dtype=np.uint64)
        return ((self.words[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)

    def pairwise_min_distance(self) -> int | None:
        if self.size < 2:
            return None
        return int(_kernels.min_pairwise_distance(self.words))


@dataclass(frozen=True)
class BoundsReport:
    K: int
    h_label: float
    neighbor_entropy_mean: float
    neighbor_entropy_var: float
    confidence: float
    delta_min: int
    delta_max: int | None
    mode: str = "cardinality"
    empty: bool = field(default=False)
    diagnostic: str = ""

    @property
    def midpoint(self) -> int | None:
        if self.empty:
            return None
        return (self.delta_min + self.delta_max) // 2

    def contains(self, delta: int) -> bool:
        return not self.empty and self.delta_min <= delta <= self.delta_max

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "BoundsReport":
        return cls(**d)


def binary_entropy(p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"probability {p} outside [0, 1]")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def hamming_ball_volume(K: int, delta: int) -> int:
    if K < 0 or not 0 <= delta <= K:
        raise ValidationError(f"radius {delta} must lie in [0, {K}]")
    return sum(math.comb(K, i) for i in range(delta + 1))


def gv_lower_bound(K: int, delta: int) -> int:
    """ceil(2**K / |B_{delta-1}|), a guaranteed lower bound on A(K, delta)."""
    if not 1 <= delta <= K:
        raise ValidationError(f"minimum distance {delta} must lie in [1, {K}]")
    return -(-(1 << K) // hamming_ball_volume(K, delta - 1))


def ball_entropy_bound(K: int, delta: int) -> float:
    if K < 1 or delta < 0 or 2 * delta > K:
        raise ValidationError(f"entropy bound needs 0 <= delta/K <= 1/2, got delta={delta}, K={K}")
    return 2.0 ** (binary_entropy(delta / K) * K)


def greedy_codebook(K: int, delta: int) -> BinaryCodebook:
    """Lexicographic greedy code: keep each word at distance >= delta from every kept word."""
    if not 1 <= K <= GREEDY_MAX_BITS:
        raise ValidationError(f"greedy enumeration limited to 1 <= K <= {GREEDY_MAX_BITS}, got {K}")
    if not 1 <= delta <= K:
        raise ValidationError(f"minimum distance {delta} must lie in [1, {K}]")
    # bit i of the integer is code position K-1-i so integer order is lexicographic
    words = _kernels.greedy_scan(K, delta)
    return BinaryCodebook(K, delta, _reverse_bits(words, K))


def _reverse_bits(words: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros_like(words)
    for i in range(K):
        out |= ((words >> np.uint64(i)) & np.uint64(1)) << np.uint64(K - 1 - i)
    return out


def estimate_tag_probs(labels) -> TagDistribution:
    e = np.asarray(labels.entries if isinstance(labels, LabelMatrix) else labels)
    if e.ndim != 2 or e.shape[0] == 0 or e.shape[1] == 0:
        raise ValidationError("cannot estimate tag probabilities from an empty label matrix")
    return TagDistribution((e == 1).mean(axis=0))


def label_entropy(dist: TagDistribution) -> float:
    return float(sum(binary_entropy(t) for t in dist.thetas))


def delta_upper_bound(K: int, h_label: float) -> int | None:
    """Largest delta in [1, K // 2] with H((delta-1)/K) <= 1 - h_label/K, or None."""
    if K < 2:
        raise ValidationError(f"code length must be >= 2, got {K}")
    if h_label < 0:
        raise ValidationError(f"label entropy must be non-negative, got {h_label}")
    rhs = 1.0 - h_label / K
    best = None
    for delta in range(1, K // 2 + 1):
        # H is increasing on [0, 1/2], so the feasible set is a prefix
        if binary_entropy((delta - 1) / K) <= rhs:
            best = delta
        else:
            break
    return best


def _row_entropy_exact(li: np.ndarray, srow: np.ndarray, self_index: int, counts: np.ndarray, c_i: int) -> float:
    # neighbours whose S is on the |l_i| scale (|l_*| <= |l_i|) with S > 0
    mask = (srow > 0) & (counts <= c_i)
    mask[self_index] = False
    if not mask.any():
        return 0.0
    levels = np.rint(srow[mask] * c_i).astype(np.int64)
    p = np.bincount(levels, minlength=c_i + 1)[1:] / mask.sum()
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def neighbor_entropy_stats(labels, similarity: SimilarityMatrix | None = None,
                           mode: str = "cardinality") -> tuple[float, float]:
    """Population mean and variance of the per-row neighbour entropy H_i (bits)."""
    lm = as_label_matrix(labels)
    counts = lm.counts
    if mode == "cardinality":
        h = counts.astype(np.float64)
    elif mode == "exact":
        sim = similarity if similarity is not None else build_similarity(lm)
        if sim.shape != (lm.n, lm.n):
            raise ValidationError(f"similarity shape {sim.shape} does not match {lm.n} label rows")
        h = np.array([
            _row_entropy_exact(lm.entries[i], sim.row(i), i, counts, int(counts[i])) for i in range(lm.n)
        ])
    else:
        raise ValidationError(f"unknown neighbour-entropy mode {mode!r}; expected one of {MODES}")
    mean = float(h.mean())
    return mean, float(((h - mean) ** 2).mean())


def delta_lower_bound(mean: float, variance: float, confidence: float) -> int:
    if not 0.5 < confidence < 1.0:
        raise ValidationError(f"confidence {confidence} must lie in (1/2, 1)")
    if variance < 0:
        raise ValidationError(f"variance must be non-negative, got {variance}")
    return math.ceil(math.sqrt(variance / (1.0 - confidence)) + mean)


def effective_delta_range(labels, K: int, confidence: float = 0.9, mode: str = "cardinality",
                          similarity: SimilarityMatrix | None = None) -> BoundsReport:
    lm = as_label_matrix(labels)
    h_label = label_entropy(estimate_tag_probs(lm))
    upper = delta_upper_bound(K, h_label)
    mean, var = neighbor_entropy_stats(lm, similarity, mode)
    lower = max(1, delta_lower_bound(mean, var, confidence))

    empty, diagnostic = False, ""
    if upper is None:
        empty = True
        diagnostic = f"label entropy {h_label:.4f} bits exceeds code length {K}: no delta >= 1 satisfies the upper bound"
    elif lower > upper:
        empty = True
        diagnostic = (
            f"lower bound {lower} exceeds upper bound {upper}: neighbour entropy too high "
            f"or label entropy {h_label:.4f} bits too large for K={K}"
        )
    return BoundsReport(
        K=K,
        h_label=h_label,
        neighbor_entropy_mean=mean,
        neighbor_entropy_var=var,
        confidence=confidence,
        delta_min=lower,
        delta_max=upper,
        mode=mode,
        empty=empty,
        diagnostic=diagnostic,
    )
