"""Per-class reference vectors for each modality.

Image prototypes are the arithmetic mean of a class's labeled embeddings,
optionally renormalized. Text prototypes come from a frozen encoder over
(template tokens ++ class token), or verbatim from a precomputed table.
All functions are pure over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BadConfigError,
    DimMismatchError,
    EmptyClassError,
    NoLabelsError,
    NonFiniteError,
    ZeroVectorError,
)
from .store import UNIT_NORM_TOL, EmbeddingSet


@dataclass(frozen=True)
class PrototypeSet:
    """One reference vector per class, ordered to match class_names."""

    modality: str
    dim: int
    class_names: tuple
    vectors: np.ndarray  # (C, dim) float64
    normalized: bool = False

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 2 or vec.shape != (len(self.class_names), self.dim):
            raise DimMismatchError(
                f"prototype matrix shape {vec.shape} != ({len(self.class_names)}, {self.dim})"
            )
        if not np.all(np.isfinite(vec)):
            raise NonFiniteError("prototype vectors contain NaN or Inf")
        if self.normalized:
            norms = np.linalg.norm(vec, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise ZeroVectorError("flagged normalized but a prototype is not unit norm")
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def to_embedding_set(self) -> EmbeddingSet:
        """Prototype sets persist as OODEMB1 with label = class index."""
        return EmbeddingSet(
            dim=self.dim,
            class_names=self.class_names,
            modality=self.modality,
            normalized=self.normalized,
            vectors=self.vectors,
            labels=np.arange(self.class_count),
        )

    @classmethod
    def from_embedding_set(cls, s: EmbeddingSet) -> "PrototypeSet":
        if len(s) != s.class_count:
            raise DimMismatchError(
                f"prototype file must have one record per class, got {len(s)} for "
                f"{s.class_count} classes"
            )
        if not np.array_equal(s.labels, np.arange(s.class_count)):
            raise DimMismatchError("prototype records must be labeled 0..C-1 in order")
        return cls(
            modality=s.modality,
            dim=s.dim,
            class_names=s.class_names,
            vectors=s.vectors.copy(),
            normalized=s.normalized,
        )


def compute_image_prototypes(base: EmbeddingSet, normalize_output: bool = True) -> PrototypeSet:
    """Class-wise mean of labeled image embeddings.

    Unlabeled rows are skipped. A class with no labeled record is a hard
    error: a silent zero prototype would corrupt every downstream score.
    """
    if base.modality != "image":
        raise BadConfigError(f"expected an image set, got modality={base.modality!r}")
    labeled = base.labeled_mask()
    if not np.any(labeled):
        raise NoLabelsError("set has no labeled records")

    c = base.class_count
    sums = np.zeros((c, base.dim))
    counts = np.zeros(c, dtype=np.int64)
    np.add.at(sums, base.labels[labeled], base.vectors[labeled])
    np.add.at(counts, base.labels[labeled], 1)
    if np.any(counts == 0):
        missing = int(np.nonzero(counts == 0)[0][0])
        raise EmptyClassError(
            f"class {missing} ({base.class_names[missing]!r}) has no labeled records"
        )
    means = sums / counts[:, None]

    if normalize_output:
        norms = np.linalg.norm(means, axis=1)
        if np.any(norms == 0.0):
            raise ZeroVectorError("a class mean has zero norm, cannot normalize")
        means = means / norms[:, None]

    return PrototypeSet(
        modality="image",
        dim=base.dim,
        class_names=base.class_names,
        vectors=means,
        normalized=normalize_output,
    )


def text_prototypes_zero_shot(
    encoder,
    class_tokens,
    template_tokens,
    class_names=None,
) -> PrototypeSet:
    """Encode (template ++ class token) per class with a frozen encoder.

    `class_tokens` is a (C, n_lm) array or list of token vectors;
    `template_tokens` a (T, n_lm) array (the fixed prompt). Deterministic
    for a given encoder.
    """
    toks = np.asarray(class_tokens, dtype=np.float64)
    if toks.ndim != 2 or toks.shape[1] != encoder.n_lm:
        raise DimMismatchError(
            f"class tokens shape {toks.shape} incompatible with n_lm={encoder.n_lm}"
        )
    template = np.asarray(template_tokens, dtype=np.float64)
    if template.size == 0:
        template = template.reshape(0, encoder.n_lm)
    if template.ndim != 2 or template.shape[1] != encoder.n_lm:
        raise DimMismatchError(
            f"template tokens shape {template.shape} incompatible with n_lm={encoder.n_lm}"
        )

    count = toks.shape[0]
    names = tuple(class_names) if class_names is not None else tuple(
        f"class_{i}" for i in range(count)
    )
    vectors = np.stack(
        [encoder.encode(np.vstack([template, toks[c]])) for c in range(count)]
    )
    return PrototypeSet(
        modality="text",
        dim=vectors.shape[1],
        class_names=names,
        vectors=vectors,
        normalized=False,
    )
