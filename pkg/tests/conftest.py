import numpy as np
import pytest

from oodproto import EmbeddingSet


def make_set(vectors, labels=None, class_names=("a", "b"), modality="image",
             normalized=False, dim=None):
    vectors = np.asarray(vectors, dtype=np.float64)
    if dim is None:
        dim = vectors.shape[1] if vectors.ndim == 2 else vectors.shape[0]
    return EmbeddingSet(
        dim=dim, class_names=class_names, modality=modality,
        normalized=normalized, vectors=vectors, labels=labels,
    )


def unit_from_components(d, **axis_values):
    """Unit vector with prescribed components on standard axes.

    axis_values maps axis index (as 'a<i>') to component; the residual
    mass goes on the last axis. Raises if the prescribed mass exceeds 1.
    """
    v = np.zeros(d)
    for key, value in axis_values.items():
        v[int(key[1:])] = value
    used = float(np.sum(v * v))
    if used > 1.0 + 1e-12:
        raise ValueError(f"components already exceed unit norm: {used}")
    v[d - 1] = np.sqrt(max(0.0, 1.0 - used))
    return v


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
