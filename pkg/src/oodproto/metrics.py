"""Evaluation metrics: FPR at fixed TPR, AUROC, KS, top-1, modality gap.

Conventions (scores are "higher = more in-distribution"):

  * fpr_at_tpr picks the largest threshold t with frac{id >= t} >= level
    and counts OOD samples >= t. Inclusive on the ID side, matching the
    decision rule "OOD iff score <= gamma".
  * auroc is the Mann-Whitney statistic with ties counted 0.5, computed
    by sort-and-rank in O(n log n); exact pair counting gives the same
    float because rank sums are exact multiples of 0.5.
  * ks is the sup over sample points of |ECDF_id - ECDF_ood|.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatchError, EmptyInputError, LengthMismatchError


def _scores(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyInputError(f"{name} scores are empty")
    return arr


def fpr_at_tpr(id_scores, ood_scores, tpr_level: float = 0.95) -> tuple[float, float]:
    """(fpr, threshold) at the largest threshold keeping TPR >= tpr_level."""
    ids = _scores(id_scores, "id")
    oods = _scores(ood_scores, "ood")
    if not 0.0 < tpr_level <= 1.0:
        raise EmptyInputError(f"tpr_level must be in (0, 1], got {tpr_level}")

    sorted_ids = np.sort(ids)
    n = sorted_ids.size
    # frac{id >= t} is constant between consecutive id values, so the
    # optimal threshold is attained at an id value
    candidates = np.unique(sorted_ids)
    count_ge = n - np.searchsorted(sorted_ids, candidates, side="left")
    ok = (count_ge / n) >= tpr_level
    threshold = float(candidates[ok][-1])  # t=min always qualifies
    fpr = float(np.count_nonzero(oods >= threshold) / oods.size)
    return fpr, threshold


def auroc(id_scores, ood_scores) -> float:
    """P(id > ood) + 0.5 * P(id == ood) over all pairs."""
    ids = _scores(id_scores, "id")
    oods = _scores(ood_scores, "ood")
    n, m = ids.size, oods.size
    pooled = np.concatenate([ids, oods])
    vals, inverse, counts = np.unique(pooled, return_inverse=True, return_counts=True)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    avg_ranks = starts + (counts + 1) / 2.0  # 1-based midranks
    rank_sum_id = float(avg_ranks[inverse[:n]].sum())
    u = rank_sum_id - n * (n + 1) / 2.0
    return u / (n * m)


def ks_statistic(id_scores, ood_scores) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    ids = np.sort(_scores(id_scores, "id"))
    oods = np.sort(_scores(ood_scores, "ood"))
    points = np.unique(np.concatenate([ids, oods]))
    cdf_id = np.searchsorted(ids, points, side="right") / ids.size
    cdf_ood = np.searchsorted(oods, points, side="right") / oods.size
    return float(np.max(np.abs(cdf_id - cdf_ood)))


def top1_accuracy(predictions, labels) -> float:
    """Fraction of exact matches between predicted and true class indices."""
    pred = np.asarray(predictions).ravel()
    lab = np.asarray(labels).ravel()
    if pred.size != lab.size:
        raise LengthMismatchError(f"{pred.size} predictions vs {lab.size} labels")
    if pred.size == 0:
        raise EmptyInputError("no predictions to score")
    return float(np.count_nonzero(pred == lab) / pred.size)


def modality_gap_norm(set_a, set_b) -> float:
    """l2 distance between the centroids of two collections of vectors."""
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.size == 0 or b.size == 0:
        raise EmptyInputError("both collections must be non-empty 2-D arrays")
    if a.shape[1] != b.shape[1]:
        raise DimMismatchError(f"dim mismatch: {a.shape[1]} vs {b.shape[1]}")
    return float(np.linalg.norm(a.mean(axis=0) - b.mean(axis=0)))


def ecdf(scores) -> tuple[np.ndarray, np.ndarray]:
    """(sorted unique values, cumulative fractions); duplicates collapse."""
    arr = np.sort(_scores(scores, "ecdf"))
    vals = np.unique(arr)
    fracs = np.searchsorted(arr, vals, side="right") / arr.size
    return vals, fracs


def ecdf_export(scores, path) -> None:
    """Write the ECDF as a two-column CSV (score, cumulative fraction)."""
    vals, fracs = ecdf(scores)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["score", "cdf"])
        for v, c in zip(vals, fracs):
            w.writerow([repr(float(v)), repr(float(c))])


@dataclass
class EvalReport:
    """Flat bundle of the evaluation quantities for one ID/OOD pairing."""

    fpr95: float
    auroc: float
    ks: float
    threshold_used: float
    top1: float | None = None
    gap_norm: float | None = None

    def to_dict(self) -> dict:
        out = {
            "fpr95": self.fpr95,
            "auroc": self.auroc,
            "ks": self.ks,
            "threshold_used": self.threshold_used,
        }
        if self.top1 is not None:
            out["top1"] = self.top1
        if self.gap_norm is not None:
            out["gap_norm"] = self.gap_norm
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def evaluate(
    id_scores,
    ood_scores,
    predictions=None,
    labels=None,
    gap_norm: float | None = None,
    tpr_level: float = 0.95,
) -> EvalReport:
    fpr, threshold = fpr_at_tpr(id_scores, ood_scores, tpr_level)
    top1 = None
    if predictions is not None and labels is not None:
        top1 = top1_accuracy(predictions, labels)
    return EvalReport(
        fpr95=fpr,
        auroc=auroc(id_scores, ood_scores),
        ks=ks_statistic(id_scores, ood_scores),
        threshold_used=threshold,
        top1=top1,
        gap_norm=gap_norm,
    )
