"""Class prototype computation for both modalities."""

import math

import numpy as np
import pytest

from oodproto import (
    BadConfigError,
    ClassTokenTable,
    EmptyClassError,
    FrozenTextEncoder,
    NoLabelsError,
    PrecomputedTableEncoder,
    PrototypeSet,
    SynthConfig,
    compute_image_prototypes,
    generate_world,
    load_embedding_set,
    save_embedding_set,
    text_prototypes_zero_shot,
)

from conftest import make_set


def test_single_record_class():
    s = make_set([[1.0, 0.0]], labels=[0], class_names=("a",))
    protos = compute_image_prototypes(s, normalize_output=False)
    assert np.array_equal(protos.vectors, [[1.0, 0.0]])


def test_mean_and_normalized_mean():
    s = make_set([[1.0, 0.0], [0.0, 1.0]], labels=[0, 0], class_names=("a",))
    raw = compute_image_prototypes(s, normalize_output=False)
    # hand mean: ((1,0) + (0,1)) / 2
    assert np.array_equal(raw.vectors, [[0.5, 0.5]])
    unit = compute_image_prototypes(s, normalize_output=True)
    expected = 0.5 / math.sqrt(0.5 * 0.5 + 0.5 * 0.5)
    assert np.allclose(unit.vectors, [[expected, expected]], atol=1e-15)
    assert abs(unit.vectors[0, 0] - 0.70711) < 5e-6


def test_record_order_invariance():
    a = make_set([[1.0, 2.0], [3.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
                 labels=[0, 1, 0, 1])
    b = make_set([[0.0, 1.0], [1.0, 1.0], [1.0, 2.0], [3.0, 0.0]],
                 labels=[0, 1, 0, 1])
    pa = compute_image_prototypes(a, normalize_output=False)
    pb = compute_image_prototypes(b, normalize_output=False)
    assert np.allclose(pa.vectors, pb.vectors, atol=1e-15)


def test_identical_records_returned_exactly():
    s = make_set([[0.3, 0.4], [0.3, 0.4], [0.1, 0.9]], labels=[0, 0, 1])
    protos = compute_image_prototypes(s, normalize_output=False)
    assert np.array_equal(protos.vectors[0], [0.3, 0.4])


def test_unlabeled_rows_skipped():
    s = make_set([[1.0, 0.0], [9.0, 9.0], [5.0, 5.0]], labels=[0, None, 1])
    protos = compute_image_prototypes(s, normalize_output=False)
    assert np.array_equal(protos.vectors[0], [1.0, 0.0])


def test_empty_class_is_hard_error():
    s = make_set([[1.0, 0.0]], labels=[0], class_names=("a", "b"))
    with pytest.raises(EmptyClassError):
        compute_image_prototypes(s)


def test_no_labels_error():
    s = make_set([[1.0, 0.0]], labels=[None], class_names=("a",))
    with pytest.raises(NoLabelsError):
        compute_image_prototypes(s)


def test_text_modality_rejected():
    s = make_set([[1.0, 0.0]], labels=[0], class_names=("a",), modality="text")
    with pytest.raises(BadConfigError):
        compute_image_prototypes(s)


def test_prototypes_round_trip_as_oodemb(tmp_path):
    s = make_set([[1.0, 0.0], [0.0, 1.0]], labels=[0, 1])
    protos = compute_image_prototypes(s)
    path = tmp_path / "protos.oodemb"
    save_embedding_set(protos.to_embedding_set(), path)
    loaded = PrototypeSet.from_embedding_set(load_embedding_set(path))
    assert loaded.class_names == protos.class_names
    assert np.allclose(loaded.vectors, protos.vectors, atol=1e-7)  # binary32 disk


def test_own_class_mean_is_closest_statistically():
    # on assumption-satisfying generator data, a class's records sit closer
    # (in mean cosine) to their own mean than to any other class mean
    world = generate_world(SynthConfig(classes=8, dim=32, n_per_class_test=40, seed=3))
    protos = compute_image_prototypes(world.test, normalize_output=True)
    x = world.test.vectors
    y = world.test.labels
    cos = x @ protos.vectors.T
    wins = 0
    for c in range(8):
        per_class_mean = cos[y == c].mean(axis=0)
        wins += int(np.argmax(per_class_mean) == c)
    assert wins >= math.ceil(0.95 * 8)


def test_zero_shot_prototypes_deterministic():
    enc = FrozenTextEncoder(seed=4, n_lm=6, d_out=5)
    table = ClassTokenTable(seed=9, class_count=3, n_lm=6)
    template = np.zeros((2, 6))
    a = text_prototypes_zero_shot(enc, table.tokens, template)
    b = text_prototypes_zero_shot(enc, table.tokens, template)
    assert np.array_equal(a.vectors, b.vectors)
    assert a.modality == "text"


def test_zero_shot_class_order_permutes(rng):
    enc = FrozenTextEncoder(seed=4, n_lm=6, d_out=5)
    tokens = rng.standard_normal((3, 6))
    template = rng.standard_normal((2, 6))
    base = text_prototypes_zero_shot(enc, tokens, template)
    perm = [2, 0, 1]
    swapped = text_prototypes_zero_shot(enc, tokens[perm], template)
    assert np.array_equal(swapped.vectors, base.vectors[perm])


def test_zero_shot_with_precomputed_table(rng):
    tokens = rng.standard_normal((3, 6))
    outputs = rng.standard_normal((3, 4))
    enc = PrecomputedTableEncoder(tokens, outputs)
    protos = text_prototypes_zero_shot(enc, tokens, np.zeros((1, 6)),
                                       class_names=("x", "y", "z"))
    assert np.array_equal(protos.vectors, outputs)
