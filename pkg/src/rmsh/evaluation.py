"""Retrieval metrics: graded NDCG@p and interpolated precision-recall."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import LabelMatrix, as_label_matrix
from .errors import DimensionMismatchError, ShapeMismatchError, ValidationError
from .index import PackedCodes, rank_all

RECALL_GRID = np.linspace(0.0, 1.0, 101)
TASKS = ("I->T", "T->I")


def _discounts(p: int, log_base: float) -> np.ndarray:
    return np.log(np.arange(2, p + 2)) / math.log(log_base)


def dcg(relevance: np.ndarray, p: int, log_base: float = 2.0) -> float:
    r = np.asarray(relevance, dtype=np.float64)[:p]
    return float(((2.0**r - 1.0) / _discounts(r.shape[0], log_base)).sum())


def ndcg_from_relevance(ranked_rel, all_rel, p: int, log_base: float = 2.0) -> float:
    """NDCG@p given relevance of the ranked list and of the whole database (for the ideal)."""
    if p < 1:
        raise ValidationError(f"cutoff p must be >= 1, got {p}")
    ideal = np.sort(np.asarray(all_rel, dtype=np.float64))[::-1]
    z = dcg(ideal, p, log_base)
    if z == 0.0:
        return 0.0
    return dcg(ranked_rel, p, log_base) / z


def ndcg_at_p(ranked_labels, query_label, p: int, database_labels=None, log_base: float = 2.0) -> float:
    """Relevance r_i = |l_q & l_i|. The ideal ordering comes from ``database_labels``
    when given, otherwise from ``ranked_labels`` (a full ranking)."""
    q = np.asarray(query_label).astype(np.int64)
    ranked = np.asarray(ranked_labels).astype(np.int64)
    pool = ranked if database_labels is None else np.asarray(database_labels).astype(np.int64)
    if ranked.ndim != 2 or ranked.shape[1] != q.shape[0] or pool.shape[1] != q.shape[0]:
        raise ShapeMismatchError("label rows must share the query's tag dimension")
    return ndcg_from_relevance(ranked @ q, pool @ q, p, log_base)


def _precision_recall(flags: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hits = np.cumsum(flags)
    ranks = np.arange(1, flags.shape[0] + 1)
    return hits / ranks, hits / hits[-1]


def interpolated_precision(flags: np.ndarray, grid: np.ndarray = RECALL_GRID) -> np.ndarray:
    """max precision at recall >= r, for r on ``grid``."""
    prec, rec = _precision_recall(np.asarray(flags, dtype=np.float64))
    run_max = np.maximum.accumulate(prec[::-1])[::-1]
    idx = np.searchsorted(rec, grid, side="left")
    out = np.zeros_like(grid)
    ok = idx < rec.shape[0]
    out[ok] = run_max[idx[ok]]
    return out


def pr_curve(ranked_flags: Sequence[np.ndarray], grid: np.ndarray = RECALL_GRID) -> tuple[list[tuple[float, float]], int]:
    """Mean interpolated PR curve over queries; queries without relevant items are skipped.

    Returns ``(points, skipped)``; points are (recall, precision) on ``grid``.
    """
    acc = np.zeros_like(grid)
    used = skipped = 0
    for flags in ranked_flags:
        f = np.asarray(flags, dtype=np.float64)
        if f.size == 0 or f.sum() == 0:
            skipped += 1
            continue
        acc += interpolated_precision(f, grid)
        used += 1
    prec = acc / used if used else acc
    return [(float(r), float(p)) for r, p in zip(grid, prec)], skipped


@dataclass
class EvalReport:
    task: str
    ndcg_at: dict[int, float]
    pr_curve: list[tuple[float, float]]
    num_queries: int
    num_skipped: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ndcg_at"] = {str(k): v for k, v in self.ndcg_at.items()}
        d["pr_curve"] = [list(p) for p in self.pr_curve]
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d["ndcg_at"] = {int(k): float(v) for k, v in d["ndcg_at"].items()}
        d["pr_curve"] = [tuple(p) for p in d["pr_curve"]]
        return cls(**d)

    def write_pr_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["recall", "precision"])
            for r, p in self.pr_curve:
                w.writerow([f"{r:.6g}", f"{p:.10g}"])


def evaluate(query_codes: PackedCodes, db_codes: PackedCodes, query_labels, db_labels,
             cutoffs: Sequence[int] = (50,), task: str = "I->T", config: dict | None = None) -> EvalReport:
    """Rank the database for every query by Hamming distance and score the rankings."""
    if query_codes.K != db_codes.K:
        raise DimensionMismatchError(f"query codes K={query_codes.K} vs database codes K={db_codes.K}")
    ql: LabelMatrix = as_label_matrix(query_labels)
    dl: LabelMatrix = as_label_matrix(db_labels)
    if ql.n != query_codes.n or dl.n != db_codes.n:
        raise ShapeMismatchError("label rows must align with code rows")
    if ql.c != dl.c:
        raise ShapeMismatchError(f"tag counts differ: {ql.c} vs {dl.c}")
    cutoffs = sorted({int(p) for p in cutoffs})
    if not cutoffs or cutoffs[0] < 1:
        raise ValidationError("cutoffs must be positive integers")

    order, _ = rank_all(db_codes, query_codes)
    rel = ql.entries.astype(np.int64) @ dl.entries.T.astype(np.int64)  # (Q, N)
    ndcg = {p: [] for p in cutoffs}
    flags = []
    for qi in range(ql.n):
        r_all = rel[qi]
        r_ranked = r_all[order[qi]]
        for p in cutoffs:
            ndcg[p].append(ndcg_from_relevance(r_ranked, r_all, p))
        flags.append(r_ranked > 0)
    curve, skipped = pr_curve(flags)
    return EvalReport(
        task=task,
        ndcg_at={p: float(np.mean(v)) for p, v in ndcg.items()},
        pr_curve=curve,
        num_queries=ql.n,
        num_skipped=skipped,
        config=dict(config or {}),
    )


def random_baseline(query_labels, db_labels, p: int, reps: int = 200, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo mean NDCG@p of uniformly random rankings and the std of that mean."""
    ql, dl = as_label_matrix(query_labels), as_label_matrix(db_labels)
    rel = ql.entries.astype(np.int64) @ dl.entries.T.astype(np.int64)
    rng = np.random.default_rng(seed)
    means = np.empty(reps)
    for r in range(reps):
        perm = rng.permuted(np.tile(np.arange(dl.n), (ql.n, 1)), axis=1)
        ranked = np.take_along_axis(rel, perm, axis=1)
        means[r] = np.mean([ndcg_from_relevance(ranked[q], rel[q], p) for q in range(ql.n)])
    return float(means.mean()), float(means.std(ddof=1))
