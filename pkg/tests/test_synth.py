"""Synthetic worlds and the Monte-Carlo separation verifier."""

from dataclasses import replace

import numpy as np
import pytest

from oodproto import (
    BadConfigError,
    ScoreConfig,
    SynthConfig,
    check_assumptions,
    generate_world,
    mcm_batch,
    mmp_batch,
    save_embedding_set,
    verify_theorem,
)

FAST = SynthConfig(classes=6, dim=16, n_per_class_train=8, n_per_class_test=50,
                   n_ood=300, seed=4)


def test_zero_gap_prototypes_identical():
    world = generate_world(replace(FAST, gap=0.0))
    assert np.array_equal(world.image_prototypes.vectors,
                          world.text_prototypes.vectors)


def test_tiny_noise_embeddings_near_prototypes():
    world = generate_world(replace(FAST, noise_scale=1e-9))
    protos = world.image_prototypes.vectors
    x = world.test.vectors
    y = world.test.labels
    assert np.max(np.abs(x - protos[y])) < 1e-7


def test_default_config_passes_assumptions():
    diag = check_assumptions(generate_world(SynthConfig()))
    assert diag.a2_pass and diag.a3_pass and diag.a4_pass


def test_zero_gap_a2_margin_is_zero():
    diag = check_assumptions(generate_world(replace(FAST, gap=0.0)))
    assert abs(diag.a2_margin) < 1e-9
    assert diag.a2_pass


def test_huge_noise_shrinks_intra_margin():
    base = check_assumptions(generate_world(FAST))
    noisy = check_assumptions(generate_world(replace(FAST, noise_scale=100.0)))
    assert noisy.a3_margin < base.a3_margin
    assert noisy.a3_margin < 0.05  # faithfully reported, near zero


def test_world_reproducible_bitwise(tmp_path):
    w1 = generate_world(FAST)
    w2 = generate_world(FAST)
    assert np.array_equal(w1.train.vectors, w2.train.vectors)
    assert np.array_equal(w1.ood.vectors, w2.ood.vectors)
    p1, p2 = tmp_path / "a.oodemb", tmp_path / "b.oodemb"
    save_embedding_set(w1.test, p1)
    save_embedding_set(w2.test, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_prototype_orthogonality_and_norms():
    world = generate_world(FAST)
    protos = world.image_prototypes.vectors
    gram = protos @ protos.T
    assert np.allclose(gram, np.eye(FAST.classes), atol=1e-10)
    assert np.allclose(np.linalg.norm(world.test.vectors, axis=1), 1.0, atol=1e-12)


def test_gap_zero_collapse_samplewise():
    world = generate_world(replace(FAST, gap=0.0))
    cfg = ScoreConfig(tau=1.0)
    for x in (world.test.vectors, world.ood.vectors):
        mcm = mcm_batch(x, world.text_prototypes, cfg)
        mmp = mmp_batch(x, world.text_prototypes, world.image_prototypes, cfg)
        assert np.max(np.abs(mmp - mcm)) <= 1e-12


def test_verify_theorem_zero_gap_deltas_equal():
    report = verify_theorem(replace(FAST, gap=0.0), trials=10)
    assert report.delta_mmp == report.delta_mcm
    assert report.passed


def test_verify_theorem_passes_on_fast_config():
    report = verify_theorem(FAST, trials=12)
    assert report.passed
    assert report.delta_mmp > report.delta_mcm
    assert report.assumptions_pass
    assert report.trials == 12


def test_gap_sweep_margin_nondecreasing():
    low = verify_theorem(replace(FAST, gap=0.2), trials=10)
    high = verify_theorem(replace(FAST, gap=0.6), trials=10)
    assert (high.delta_mmp - high.delta_mcm) >= (low.delta_mmp - low.delta_mcm)


def test_verification_passes_across_independent_runs():
    # on assumption-passing worlds the separation inequality holds in at
    # least 95% of independent verification runs
    passes = sum(
        verify_theorem(replace(FAST, seed=seed), trials=10).passed
        for seed in range(100, 110)
    )
    assert passes >= 10 * 0.95


def test_too_few_trials_rejected():
    with pytest.raises(BadConfigError):
        verify_theorem(FAST, trials=9)


def test_bad_configs_rejected():
    with pytest.raises(BadConfigError):
        SynthConfig(classes=10, dim=10)  # no room for the anchor
    with pytest.raises(BadConfigError):
        SynthConfig(gap=1.5)
    with pytest.raises(BadConfigError):
        SynthConfig(noise_scale=0.0)


def test_report_serialization():
    report = verify_theorem(replace(FAST, gap=0.0), trials=10)
    data = report.to_dict()
    assert data["pass"] is True
    assert set(data) >= {"delta_mmp", "delta_mcm", "stderr_mmp", "stderr_mcm",
                         "trials", "pass"}
