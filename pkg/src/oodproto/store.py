"""Embedding data model and the OODEMB1 on-disk format.

OODEMB1 layout (no padding anywhere):

    magic    8 bytes   b"OODEMB1\\n"
    header   one UTF-8 JSON line, terminated by b"\\n":
             {"dim":d,"count":n,"classes":[...],"modality":"image"|"text",
              "normalized":bool}
    vectors  n*d little-endian IEEE-754 binary32, row-major
    labels   n little-endian int32; -1 encodes "no label"

Vectors are stored as 32-bit floats on disk and held as 64-bit in memory
(binary32 -> binary64 is exact, so load-then-save is byte-identical).
Sets are immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    BadLabelError,
    BadMagicError,
    DimMismatchError,
    EngineError,
    NonFiniteError,
    ZeroVectorError,
)

MAGIC = b"OODEMB1\n"
MODALITIES = ("image", "text")
NO_LABEL = -1
UNIT_NORM_TOL = 1e-4

_HEADER_KEYS = ("dim", "count", "classes", "modality", "normalized")


@dataclass(frozen=True)
class EmbeddingRecord:
    """One embedding vector with an opaque id and an optional class label."""

    id: str
    label_index: int | None
    vector: np.ndarray


class EmbeddingSet:
    """An immutable, dimension-tagged collection of embedding vectors.

    `vectors` is an (n, dim) float64 array; `labels` is an (n,) int array
    where -1 means unlabeled (OOD / query rows). Ids are not persisted by
    the file format; on load they are the stringified row indices.
    """

    def __init__(
        self,
        dim: int,
        class_names: Sequence[str],
        modality: str,
        normalized: bool,
        vectors: np.ndarray,
        labels: Sequence[int | None] | np.ndarray | None = None,
        ids: Sequence[str] | None = None,
    ):
        if dim <= 0:
            raise DimMismatchError(f"dim must be positive, got {dim}")
        if modality not in MODALITIES:
            raise BadMagicError(f"modality must be one of {MODALITIES}, got {modality!r}")
        names = tuple(str(c) for c in class_names)
        if len(set(names)) != len(names):
            raise BadLabelError("class_names entries must be unique")

        vec = np.asarray(vectors, dtype=np.float64)
        if vec.ndim == 1:
            vec = vec.reshape(0, dim) if vec.size == 0 else vec.reshape(1, -1)
        if vec.ndim != 2 or (vec.size and vec.shape[1] != dim):
            raise DimMismatchError(
                f"vectors shape {vec.shape} does not match dim={dim}"
            )
        if vec.size == 0:
            vec = vec.reshape(0, dim)
        if not np.all(np.isfinite(vec)):
            raise NonFiniteError("embedding vectors contain NaN or Inf")

        n = vec.shape[0]
        if labels is None:
            lab = np.full(n, NO_LABEL, dtype=np.int64)
        else:
            lab = np.array(
                [NO_LABEL if v is None else int(v) for v in np.asarray(labels, dtype=object)],
                dtype=np.int64,
            )
        if lab.shape != (n,):
            raise DimMismatchError(f"labels length {lab.shape} does not match count {n}")
        if np.any(lab < NO_LABEL) or np.any(lab >= len(names)):
            bad = lab[(lab < NO_LABEL) | (lab >= len(names))][0]
            raise BadLabelError(f"label {bad} outside 0..{len(names) - 1}")

        if normalized and n:
            norms = np.linalg.norm(vec, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                worst = float(np.max(np.abs(norms - 1.0)))
                raise EngineError(
                    f"set flagged normalized but a vector norm deviates by {worst:.2e}"
                )

        if ids is None:
            id_list = tuple(str(i) for i in range(n))
        else:
            id_list = tuple(str(s) for s in ids)
            if len(id_list) != n:
                raise DimMismatchError("ids length does not match record count")

        vec.setflags(write=False)
        lab.setflags(write=False)
        self.dim = int(dim)
        self.class_names = names
        self.modality = modality
        self.normalized = bool(normalized)
        self.vectors = vec
        self.labels = lab
        self.ids = id_list

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def records(self) -> Iterator[EmbeddingRecord]:
        for i in range(len(self)):
            lab = int(self.labels[i])
            yield EmbeddingRecord(
                id=self.ids[i],
                label_index=None if lab == NO_LABEL else lab,
                vector=self.vectors[i],
            )

    def labeled_mask(self) -> np.ndarray:
        return self.labels != NO_LABEL

    def value_equal(self, other: "EmbeddingSet") -> bool:
        return (
            self.dim == other.dim
            and self.class_names == other.class_names
            and self.modality == other.modality
            and self.normalized == other.normalized
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.vectors, other.vectors)
        )


def _header_bytes(s: EmbeddingSet) -> bytes:
    header = {
        "dim": s.dim,
        "count": len(s),
        "classes": list(s.class_names),
        "modality": s.modality,
        "normalized": s.normalized,
    }
    # canonical form: fixed key order, no whitespace
    return json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n"


def save_embedding_set(s: EmbeddingSet, path) -> None:
    """Write `s` to `path` in OODEMB1 form (vectors rounded to binary32)."""
    payload = s.vectors.astype("<f4").tobytes(order="C")
    labels = s.labels.astype("<i4").tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_header_bytes(s))
        f.write(payload)
        f.write(labels)


def load_embedding_set(path) -> EmbeddingSet:
    """Read and validate an OODEMB1 file."""
    with open(path, "rb") as f:
        data = f.read()

    if not data.startswith(MAGIC):
        raise BadMagicError(f"{path}: missing OODEMB1 magic bytes")
    nl = data.find(b"\n", len(MAGIC))
    if nl < 0:
        raise BadMagicError(f"{path}: unterminated header line")
    try:
        header = json.loads(data[len(MAGIC):nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BadMagicError(f"{path}: malformed header: {e}") from e
    if not isinstance(header, dict) or tuple(header) != _HEADER_KEYS:
        raise BadMagicError(f"{path}: header keys must be exactly {_HEADER_KEYS}")

    dim, count = int(header["dim"]), int(header["count"])
    if dim <= 0 or count < 0:
        raise BadMagicError(f"{path}: invalid dim/count {dim}/{count}")
    body = data[nl + 1:]
    expected = 4 * count * dim + 4 * count
    if len(body) != expected:
        raise DimMismatchError(
            f"{path}: payload is {len(body)} bytes, expected {expected} "
            f"for count={count}, dim={dim}"
        )
    raw = np.frombuffer(body[: 4 * count * dim], dtype="<f4").astype(np.float64)
    vectors = raw.reshape(count, dim)
    labels = np.frombuffer(body[4 * count * dim:], dtype="<i4").astype(np.int64)
    if not np.all(np.isfinite(vectors)):
        raise NonFiniteError(f"{path}: payload contains NaN or Inf")

    return EmbeddingSet(
        dim=dim,
        class_names=header["classes"],
        modality=header["modality"],
        normalized=bool(header["normalized"]),
        vectors=vectors,
        labels=labels,
    )


def normalize_set(s: EmbeddingSet) -> EmbeddingSet:
    """Rescale every vector to unit l2 norm and set the normalized flag.

    A set already flagged normalized is returned unchanged, which makes
    the operation exactly idempotent.
    """
    if s.normalized:
        return s
    norms = np.linalg.norm(s.vectors, axis=1)
    if np.any(norms == 0.0):
        row = int(np.nonzero(norms == 0.0)[0][0])
        raise ZeroVectorError(f"record {s.ids[row]} has zero norm")
    return EmbeddingSet(
        dim=s.dim,
        class_names=s.class_names,
        modality=s.modality,
        normalized=True,
        vectors=s.vectors / norms[:, None],
        labels=s.labels,
        ids=s.ids,
    )
