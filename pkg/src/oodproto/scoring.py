"""The three detection scores and the ID/OOD decision rule.

All scores are max-softmax over temperature-scaled cosine similarities to
class prototypes:

    mcm: one prototype set
    mmp: average of the mcm terms over text and image prototype sets
    gmp: average of four mcm terms, adding the cross-modally mapped input

Scores lie in [1/C, 1); they are invariant to positive rescaling of the
input and of any prototype. Everything here is pure and reentrant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadConfigError,
    ClassCountMismatchError,
    DimMismatchError,
    EmptyInputError,
    ZeroVectorError,
)
from .prototypes import PrototypeSet

ID_LABEL = "ID"
OOD_LABEL = "OOD"

SCORE_KINDS = ("mcm", "mmp", "gmp")


@dataclass(frozen=True)
class ScoreConfig:
    """tau is the softmax temperature; default follows the common
    vision-language logit scale of 100 (tau = 0.01)."""

    tau: float = 0.01

    def __post_init__(self):
        if not self.tau > 0:
            raise BadConfigError(f"tau must be positive, got {self.tau}")


def _as_batch(vectors, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(vectors, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != dim:
        raise DimMismatchError(f"input shape {x.shape} does not match dim={dim}")
    return x, single


def cosine_matrix(x: np.ndarray, prototypes: PrototypeSet) -> np.ndarray:
    """Pairwise cosines, (n, C). Raises on zero rows/prototypes."""
    xn = np.linalg.norm(x, axis=1)
    pn = np.linalg.norm(prototypes.vectors, axis=1)
    if np.any(xn == 0.0):
        raise ZeroVectorError("cannot score a zero embedding vector")
    if np.any(pn == 0.0):
        raise ZeroVectorError("prototype set contains a zero vector")
    return (x @ prototypes.vectors.T) / np.outer(xn, pn)


def _max_softmax(cosines: np.ndarray, tau: float) -> np.ndarray:
    # max-subtraction: |cos| <= 1 but tau=0.01 puts exponents at +-100
    logits = cosines / tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    return 1.0 / np.exp(shifted).sum(axis=1)


def mcm_batch(vectors, prototypes: PrototypeSet, cfg: ScoreConfig) -> np.ndarray:
    x, _ = _as_batch(vectors, prototypes.dim)
    return _max_softmax(cosine_matrix(x, prototypes), cfg.tau)


def mcm_score(vector, prototypes: PrototypeSet, cfg: ScoreConfig) -> float:
    """max_c softmax_c(cos(I, P_c) / tau)."""
    x, single = _as_batch(vector, prototypes.dim)
    if not single:
        raise DimMismatchError("mcm_score takes a single vector; use mcm_batch")
    return float(_max_softmax(cosine_matrix(x, prototypes), cfg.tau)[0])


def _check_pair(p_txt: PrototypeSet, p_img: PrototypeSet) -> None:
    if p_txt.class_count != p_img.class_count:
        raise ClassCountMismatchError(
            f"text has {p_txt.class_count} classes, image has {p_img.class_count}"
        )
    if p_txt.dim != p_img.dim:
        raise DimMismatchError(
            f"text dim {p_txt.dim} != image dim {p_img.dim}"
        )


def mmp_batch(vectors, p_txt: PrototypeSet, p_img: PrototypeSet, cfg: ScoreConfig) -> np.ndarray:
    _check_pair(p_txt, p_img)
    return (mcm_batch(vectors, p_img, cfg) + mcm_batch(vectors, p_txt, cfg)) / 2.0


def mmp_score(vector, p_txt: PrototypeSet, p_img: PrototypeSet, cfg: ScoreConfig) -> float:
    """Average of the image- and text-prototype mcm terms."""
    return float(mmp_batch(np.asarray(vector, dtype=np.float64).reshape(1, -1), p_txt, p_img, cfg)[0])


def gmp_batch(
    vectors,
    mapped_vectors,
    p_txt: PrototypeSet,
    p_img: PrototypeSet,
    cfg: ScoreConfig,
) -> np.ndarray:
    _check_pair(p_txt, p_img)
    x, _ = _as_batch(vectors, p_txt.dim)
    xm, _ = _as_batch(mapped_vectors, p_txt.dim)
    if x.shape[0] != xm.shape[0]:
        raise DimMismatchError("vectors and mapped_vectors must pair up row-wise")
    direct = mcm_batch(x, p_txt, cfg) + mcm_batch(x, p_img, cfg)
    mapped = mcm_batch(xm, p_txt, cfg) + mcm_batch(xm, p_img, cfg)
    # pairwise grouping keeps the mcm collapse identity exact in floats
    return (direct + mapped) / 4.0


def gmp_score(vector, mapped_vector, p_txt, p_img, cfg: ScoreConfig) -> float:
    """Four-term mcm average over (input, mapped input) x (text, image)."""
    x = np.asarray(vector, dtype=np.float64).reshape(1, -1)
    xm = np.asarray(mapped_vector, dtype=np.float64).reshape(1, -1)
    return float(gmp_batch(x, xm, p_txt, p_img, cfg)[0])


def predict_batch(vectors, prototypes: PrototypeSet) -> np.ndarray:
    x, _ = _as_batch(vectors, prototypes.dim)
    # np.argmax takes the lowest index on ties
    return np.argmax(cosine_matrix(x, prototypes), axis=1)


def predict_class(vector, prototypes: PrototypeSet) -> int:
    """argmax_c cos(I, P_c); ties broken toward the lowest index."""
    x, single = _as_batch(vector, prototypes.dim)
    if not single:
        raise DimMismatchError("predict_class takes a single vector; use predict_batch")
    return int(predict_batch(x, prototypes)[0])


def decide(score: float, gamma: float) -> str:
    """OOD iff score <= gamma (threshold inclusive on the OOD side)."""
    return OOD_LABEL if score <= gamma else ID_LABEL


@dataclass(frozen=True)
class ScoreReport:
    """Per-record scores of one kind plus predicted class indices."""

    kind: str
    ids: tuple
    scores: np.ndarray
    predicted: np.ndarray

    def rows(self):
        for i, rid in enumerate(self.ids):
            yield rid, self.kind, float(self.scores[i]), int(self.predicted[i])


def write_scores_csv(report: ScoreReport, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "score_kind", "score", "predicted_class"])
        for rid, kind, score, pred in report.rows():
            w.writerow([rid, kind, repr(score), pred])


def read_scores_csv(path) -> np.ndarray:
    """Read the `score` column of a scores CSV (or a bare one-column file)."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise EmptyInputError(f"{path}: empty scores file")
    header = rows[0]
    if "score" in header:
        col = header.index("score")
        body = rows[1:]
    else:
        col = 0
        body = rows
    try:
        scores = np.array([float(r[col]) for r in body if r], dtype=np.float64)
    except (ValueError, IndexError) as e:
        raise EmptyInputError(f"{path}: cannot parse scores: {e}") from e
    if scores.size == 0:
        raise EmptyInputError(f"{path}: no score rows")
    return scores
