"""Training objective: margin-adaptive triplets, weighted classification, quantization.

Distances between relaxed codes are ``||z1 - z2||^2 / 4`` so that on exact
+-1 codes they equal the Hamming distance and ``delta`` keeps its bit-count
meaning. Loss-side logarithms are natural logs.

Per sampled triplet (codes z1..z3 and pseudo-codes z4 = union(z1, z2),
z5 = intersect(z1, z2), in both modalities)::

    total = cls(real) + lambda3 * cls(pseudo)
          + lambda1 * intra-modal triplets + lambda2 * inter-modal triplets
          + lambda4 * ||z - b||^2 over the three real codes
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import order_triplet
from .errors import ShapeMismatchError, ValidationError

PROB_EPS = 1e-7

IMAGE, TEXT = 0, 1


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.01
    lambda2: float = 0.1
    lambda3: float = 0.1
    lambda4: float = 0.1
    w_p: float = 20.0
    delta: int | None = None
    inter_both_directions: bool = True

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "w_p"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    triplet_intra: float
    triplet_inter: float
    classification_real: float
    classification_pseudo: float
    quantization: float
    total: float
    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float
    w_p: float
    delta: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def scaled(self, factor: float) -> "LossBreakdown":
        d = self.to_dict()
        for k in ("triplet_intra", "triplet_inter", "classification_real", "classification_pseudo",
                  "quantization", "total"):
            d[k] *= factor
        return LossBreakdown(**d)


LOSS_FIELDS = tuple(LossBreakdown.__dataclass_fields__)


def relaxed_distance(z1, z2) -> np.ndarray | float:
    z1, z2 = np.asarray(z1, dtype=np.float64), np.asarray(z2, dtype=np.float64)
    if z1.shape[-1] != z2.shape[-1]:
        raise ShapeMismatchError(f"code lengths differ: {z1.shape[-1]} vs {z2.shape[-1]}")
    d = ((z1 - z2) ** 2).sum(axis=-1) / 4.0
    return float(d) if np.ndim(d) == 0 else d


def triplet_term(d_ij, d_ik, y_ij, y_ik, alpha, delta):
    """Margin-adaptive triplet hinge; works elementwise on arrays."""
    d_ij, d_ik = np.asarray(d_ij, dtype=np.float64), np.asarray(d_ik, dtype=np.float64)
    rank = y_ij * y_ik * np.maximum(d_ij - d_ik + alpha, 0.0)
    push = (1 - y_ij) * np.maximum(delta - d_ij, 0.0) + (1 - y_ik) * np.maximum(delta - d_ik, 0.0)
    out = rank + push
    return float(out) if np.ndim(out) == 0 else out


def classification_loss(l, l_hat, w_p: float) -> float:
    l = np.asarray(l, dtype=np.float64)
    l_hat = np.asarray(l_hat, dtype=np.float64)
    if l.shape != l_hat.shape:
        raise ShapeMismatchError(f"label shape {l.shape} vs prediction shape {l_hat.shape}")
    q = np.clip(l_hat, PROB_EPS, 1.0 - PROB_EPS)
    return float(-(w_p * l * np.log(q) + (1.0 - l) * np.log1p(-q)).sum())


def quantization_loss(z, b) -> float:
    z, b = np.asarray(z, dtype=np.float64), np.asarray(b)
    if z.shape != b.shape:
        raise ShapeMismatchError(f"relaxed shape {z.shape} vs binary shape {b.shape}")
    if not np.isin(b, (-1, 1)).all():
        raise ValidationError("binary codes must be exactly -1 or +1")
    return float(((z - b) ** 2).sum())


def triplet_labels(labels3: np.ndarray) -> np.ndarray:
    """(B, 3, C) labels -> (B, 5, C) with union and intersection pseudo-labels of the first two."""
    labels3 = np.asarray(labels3).astype(np.uint8)
    if labels3.ndim != 3 or labels3.shape[1] != 3:
        raise ShapeMismatchError(f"expected (B, 3, C) triplet labels, got {labels3.shape}")
    l1, l2 = labels3[:, 0], labels3[:, 1]
    return np.concatenate([labels3, (l1 | l2)[:, None], (l1 & l2)[:, None]], axis=1)


def classification_target(l_intersect: np.ndarray) -> np.ndarray:
    """Empty intersections keep the all-zero target: pure negative supervision."""
    return np.asarray(l_intersect).astype(np.uint8)


# (modality, slot) members of every inner triplet
def intra_groups(modality: int) -> list[tuple[tuple[int, int], ...]]:
    return [((modality, 0), (modality, 1), (modality, s)) for s in (2, 3, 4)]


def inter_groups(anchor_modality: int) -> list[tuple[tuple[int, int], ...]]:
    other = 1 - anchor_modality
    return [
        ((anchor_modality, 0), (other, 1), (other, 2)),
        ((anchor_modality, 1), (other, 0), (other, 2)),
        ((anchor_modality, 2), (other, 0), (other, 1)),
    ]


def _groups(inter_both_directions: bool) -> tuple[np.ndarray, np.ndarray, int]:
    """All inner triplets as (G, 3) modality and slot arrays; the first n_intra are intra-modal."""
    intra = intra_groups(IMAGE) + intra_groups(TEXT)
    anchors = (TEXT, IMAGE) if inter_both_directions else (TEXT,)
    groups = intra + [g for a in anchors for g in inter_groups(a)]
    mods = np.array([[m for m, _ in g] for g in groups])
    slots = np.array([[s for _, s in g] for g in groups])
    return mods, slots, len(intra)


def _grouped_loss(codes, labels5, mods, slots, delta, d_codes, scales):
    """Per-group loss sums, shape (G,); all groups evaluated in one vectorised pass."""
    B = codes.shape[0]
    G = mods.shape[0]
    lab = labels5[:, slots].astype(np.int64)  # (B, G, 3, C)
    counts = lab.sum(axis=3)
    valid = (counts > 0).all(axis=2)  # drops groups holding an empty intersection pseudo-code
    inter = np.einsum("bgic,bgjc->bgij", lab, lab)
    ref, pos, neg = order_triplet(counts.reshape(B * G, 3), inter.reshape(B * G, 3, 3))
    ref, pos, neg = ref.reshape(B, G), pos.reshape(B, G), neg.reshape(B, G)

    Z = codes[:, mods, slots]  # (B, G, 3, K)
    take = lambda a, i: np.take_along_axis(a, i[:, :, None], axis=2)[:, :, 0]
    zr = np.take_along_axis(Z, ref[:, :, None, None], axis=2)[:, :, 0]
    zp = np.take_along_axis(Z, pos[:, :, None, None], axis=2)[:, :, 0]
    zn = np.take_along_axis(Z, neg[:, :, None, None], axis=2)[:, :, 0]
    d_rp = ((zr - zp) ** 2).sum(axis=2) / 4.0
    d_rn = ((zr - zn) ** 2).sum(axis=2) / 4.0
    inter_ref = np.take_along_axis(inter, ref[:, :, None, None], axis=2)[:, :, 0]  # (B, G, 3)
    i_rp, i_rn = take(inter_ref, pos), take(inter_ref, neg)
    c_ref = np.maximum(take(counts, ref), 1)
    alpha = delta * (i_rp - i_rn) / c_ref
    y_rp = (i_rp > 0).astype(np.float64)
    y_rn = (i_rn > 0).astype(np.float64)

    h_rank = d_rp - d_rn + alpha
    h_p = delta - d_rp
    h_n = delta - d_rn
    loss = y_rp * y_rn * np.maximum(h_rank, 0.0) + (1 - y_rp) * np.maximum(h_p, 0.0) + (1 - y_rn) * np.maximum(h_n, 0.0)
    loss = np.where(valid, loss, 0.0)

    if d_codes is not None:
        # subgradient 0 at hinge kinks
        a_rank = y_rp * y_rn * (h_rank > 0)
        g_rp = (a_rank - (1 - y_rp) * (h_p > 0)) * valid * scales
        g_rn = (-a_rank - (1 - y_rn) * (h_n > 0)) * valid * scales
        diff_p = (zr - zp) / 2.0
        diff_n = (zr - zn) / 2.0
        gr = g_rp[..., None] * diff_p + g_rn[..., None] * diff_n
        gp = -g_rp[..., None] * diff_p
        gn = -g_rn[..., None] * diff_n
        rows = np.broadcast_to(np.arange(B)[:, None], (B, G))
        gidx = np.broadcast_to(np.arange(G), (B, G))
        for which, grad in ((ref, gr), (pos, gp), (neg, gn)):
            np.add.at(d_codes, (rows, mods[gidx, which], slots[gidx, which]), grad)
    return loss.sum(axis=0)


def triplet_losses(codes, labels5, delta, lambda1=1.0, lambda2=1.0, inter_both_directions=True, d_codes=None):
    """Unweighted (intra, inter) sums over the batch; optionally accumulates weighted gradients."""
    mods, slots, n_intra = _groups(inter_both_directions)
    scales = np.where(np.arange(mods.shape[0]) < n_intra, lambda1, lambda2)
    per_group = _grouped_loss(codes, labels5, mods, slots, delta, d_codes, scales)
    return float(per_group[:n_intra].sum()), float(per_group[n_intra:].sum())


def combined_triplet_loss(codes_image, codes_text, labels, lambda1: float, lambda2: float, delta: int,
                          inter_both_directions: bool = True) -> float:
    """Combined intra/inter triplet loss for one triplet.

    ``codes_*`` are (5, K): three real codes then the union and intersection
    pseudo-codes; ``labels`` is (5, C) with the matching fused labels.
    """
    ci, ct = np.asarray(codes_image, dtype=np.float64), np.asarray(codes_text, dtype=np.float64)
    lab = np.asarray(labels)
    if ci.shape[0] != 5 or ct.shape[0] != 5 or lab.shape[0] != 5:
        raise ValidationError("need 5 codes per modality and 5 label rows (pseudo-labels included)")
    codes = np.stack([ci, ct])[None]
    intra, inter = triplet_losses(codes, lab[None], delta, inter_both_directions=inter_both_directions)
    return lambda1 * intra + lambda2 * inter


def objective(codes: np.ndarray, probs: np.ndarray, labels3: np.ndarray, unified: np.ndarray,
              weights: LossWeights, with_grad: bool = True):
    """Full batch objective.

    ``codes`` (B, 2, 5, K) and ``probs`` (B, 2, 5, C) from the forward pass,
    ``labels3`` (B, 3, C), ``unified`` (B, 3, K) fixed binary codes. Returns
    ``(LossBreakdown, d_codes, d_probs)``; gradients are None when
    ``with_grad`` is False.
    """
    if weights.delta is None:
        raise ValidationError("loss configuration is missing delta")
    delta = weights.delta
    B, _, _, K = codes.shape
    if unified.shape != (B, 3, K):
        raise ShapeMismatchError(f"unified codes shape {unified.shape}, expected {(B, 3, K)}")
    labels5 = triplet_labels(labels3)
    targets = labels5[:, None, :, :].astype(np.float64)  # broadcast over modality

    d_codes = np.zeros_like(codes) if with_grad else None
    d_probs = np.zeros_like(probs) if with_grad else None

    q = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    per = -(weights.w_p * targets * np.log(q) + (1.0 - targets) * np.log1p(-q))
    cls_real = float(per[:, :, :3].sum())
    cls_pseudo = float(per[:, :, 3:].sum())

    intra, inter = triplet_losses(codes, labels5, delta, weights.lambda1, weights.lambda2,
                                  weights.inter_both_directions, d_codes)

    diff = codes[:, :, :3] - unified[:, None].astype(np.float64)
    quant = float((diff**2).sum())

    total = cls_real + weights.lambda3 * cls_pseudo + weights.lambda1 * intra + weights.lambda2 * inter + weights.lambda4 * quant

    if with_grad:
        inside = (probs > PROB_EPS) & (probs < 1.0 - PROB_EPS)
        g = -(weights.w_p * targets / q - (1.0 - targets) / (1.0 - q)) * inside
        g[:, :, 3:] *= weights.lambda3
        d_probs[...] = g
        d_codes[:, :, :3] += 2.0 * weights.lambda4 * diff

    breakdown = LossBreakdown(
        triplet_intra=intra,
        triplet_inter=inter,
        classification_real=cls_real,
        classification_pseudo=cls_pseudo,
        quantization=quant,
        total=float(total),
        lambda1=weights.lambda1,
        lambda2=weights.lambda2,
        lambda3=weights.lambda3,
        lambda4=weights.lambda4,
        w_p=weights.w_p,
        delta=int(delta),
    )
    return breakdown, d_codes, d_probs


def total_loss(codes, probs, labels3, unified, weights: LossWeights) -> LossBreakdown:
    return objective(codes, probs, labels3, unified, weights, with_grad=False)[0]
