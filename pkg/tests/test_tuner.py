"""Few-shot tuner: losses, exact gradients, optimizer, training loop."""

import math

import numpy as np
import pytest

from oodproto import (
    BadConfigError,
    ClassTokenTable,
    EmptyClassError,
    FrozenTextEncoder,
    LossBreakdown,
    NonFiniteError,
    TrainConfig,
    TunerParams,
    build_idbp,
    forward_backward,
    load_model,
    loss_bias,
    loss_id,
    loss_inter,
    loss_intra,
    meta_net,
    sample_bias,
    save_model,
    sgd_step,
    train,
)
from oodproto.gradcheck import build_instance, finite_difference_grads, max_relative_error
from oodproto.synth import SynthConfig, generate_world
from oodproto.tuner import PARAM_FIELDS

from conftest import make_set


def small_params(d=4, n_lm=4, ell=2, zero_meta=False):
    params = TunerParams.initialize(d=d, n_lm=n_lm, context_length=ell, seed=3)
    if zero_meta:
        for name in ("m_w1", "m_w2"):
            getattr(params, name)[:] = 0.0
    return params


# --- sample_bias -----------------------------------------------------------

def test_sample_bias_zero_noise_recovers_mean():
    mu = np.array([0.2, -0.4])
    assert np.array_equal(sample_bias(mu, np.array([3.0, 1.0]), np.zeros(2)), mu)


def test_sample_bias_arithmetic():
    assert np.array_equal(sample_bias(np.array([1.0]), np.array([2.0]),
                                      np.array([0.5])), np.array([2.0]))


def test_sample_bias_zero_scale():
    mu = np.array([0.7, 0.1, -0.2])
    out = sample_bias(mu, np.zeros(3), np.array([5.0, -9.0, 2.0]))
    assert np.array_equal(out, mu)


# --- meta_net --------------------------------------------------------------

def test_meta_net_zero_weights():
    params = small_params(zero_meta=True)
    params.m_b2[:] = 0.0
    assert np.array_equal(meta_net(np.ones(4), params), np.zeros(4))


def test_meta_net_relu_kill():
    params = small_params()
    params.m_w1[:] = -1.0
    params.m_b1[:] = 0.0
    params.m_b2[:] = np.array([1.0, 2.0, 3.0, 4.0])
    # all pre-activations negative: output falls back to the final bias
    assert np.array_equal(meta_net(np.ones(4), params), params.m_b2)


def test_meta_net_matches_scalar_reference(rng):
    params = small_params()
    params.m_b1[:] = rng.standard_normal(params.m_b1.shape)
    params.m_b2[:] = rng.standard_normal(params.m_b2.shape)
    x = rng.standard_normal(4)
    hm = params.m_w1.shape[0]
    hidden = [max(0.0, sum(params.m_w1[i, j] * x[j] for j in range(4)) + params.m_b1[i])
              for i in range(hm)]
    expected = [sum(params.m_w2[k, i] * hidden[i] for i in range(hm)) + params.m_b2[k]
                for k in range(4)]
    assert np.allclose(meta_net(x, params), expected, atol=1e-14)


# --- build_idbp ------------------------------------------------------------

def test_build_idbp_zero_shift():
    v = np.array([[1.0, 2.0], [3.0, 4.0]])
    y = np.array([9.0, 9.0])
    tokens = build_idbp(v, np.zeros(2), np.zeros(2), y)
    assert np.array_equal(tokens, np.vstack([v, y]))


def test_build_idbp_arithmetic():
    tokens = build_idbp(np.array([[1.0, 2.0]]), np.array([0.5, 0.5]),
                        np.array([0.1, -0.1]), np.array([0.0, 0.0]))
    assert np.allclose(tokens[0], [1.6, 2.4], atol=1e-15)


def test_build_idbp_shift_symmetry(rng):
    v = rng.standard_normal((3, 5))
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    y = rng.standard_normal(5)
    assert np.array_equal(build_idbp(v, a, b, y), build_idbp(v, b, a, y))


# --- loss oracles ----------------------------------------------------------

def unit_rows_with_head(head_values, d=6):
    rows = []
    for i, h in enumerate(head_values):
        row = np.zeros(d)
        row[0] = h
        row[i + 1] = math.sqrt(1.0 - h * h)
        rows.append(row)
    return np.stack(rows)


def test_loss_id_oracle():
    x = np.zeros(6)
    x[0] = 1.0
    protos = unit_rows_with_head([0.8, 0.2])
    value = loss_id(x, protos, 0, tau=1.0)
    assert value == pytest.approx(math.log(1 + math.exp(-0.6)), abs=1e-12)
    assert value == pytest.approx(0.43749, abs=5e-6)


def test_loss_id_single_class_and_uniform():
    x = np.zeros(6)
    x[0] = 1.0
    assert loss_id(x, unit_rows_with_head([0.5]), 0, tau=1.0) == 0.0
    protos = unit_rows_with_head([0.3, 0.3, 0.3])
    assert loss_id(x, protos, 1, tau=1.0) == pytest.approx(math.log(3), abs=1e-12)


def test_loss_inter_oracle():
    x = np.zeros(6)
    x[0] = 1.0
    protos = np.stack([np.eye(6)[0], np.eye(6)[1]])
    value = loss_inter(x, protos, 0, np.eye(6), np.eye(6), tau=1.0)
    assert value == pytest.approx(2 * math.log(1 + math.exp(-1.0)), abs=1e-12)
    assert value == pytest.approx(0.62652, abs=5e-6)


def test_loss_inter_single_class():
    x = np.zeros(3)
    x[0] = 1.0
    assert loss_inter(x, np.eye(3)[:1], 0, np.eye(3), np.eye(3), tau=1.0) == 0.0


def test_loss_inter_non_true_class_permutation(rng):
    x = rng.standard_normal(5)
    protos = rng.standard_normal((4, 5))
    w_it = rng.standard_normal((5, 5))
    w_ti = rng.standard_normal((5, 5))
    base = loss_inter(x, protos, 0, w_it, w_ti, tau=0.7)
    perm = protos[[0, 3, 1, 2]]
    assert loss_inter(x, perm, 0, w_it, w_ti, tau=0.7) == pytest.approx(base, abs=1e-12)


def test_loss_intra_identity_maps():
    x = np.array([0.3, -0.9])
    protos = np.array([[1.0, 2.0], [0.5, -0.5]])
    assert loss_intra(x, protos, np.eye(2), np.eye(2)) == 0.0


def test_loss_intra_arithmetic():
    # diag maps: image residual (0.1, -0.1), class residual (0, 0.5)
    w_it = np.diag([0.9, 1.1])
    w_ti = np.eye(2)
    x = np.array([1.0, 1.0])
    protos = np.array([[0.0, -5.0]])
    value = loss_intra(x, protos, w_it, w_ti)
    assert value == pytest.approx(0.2 + 0.5, abs=1e-12)


def test_loss_intra_class_order_invariant(rng):
    x = rng.standard_normal(4)
    protos = rng.standard_normal((3, 4))
    w_it, w_ti = rng.standard_normal((4, 4)), rng.standard_normal((4, 4))
    assert loss_intra(x, protos, w_it, w_ti) == pytest.approx(
        loss_intra(x, protos[::-1], w_it, w_ti), abs=1e-12)


def test_loss_bias_oracle():
    m = np.array([1.0, 1.0])
    assert loss_bias(m, m, m) == 0.0
    assert loss_bias(np.zeros(2), np.array([0.5, 0.5]), m) == pytest.approx(3.0)
    # symmetric in mu and b
    mu, b = np.array([0.3, -0.2]), np.array([-0.1, 0.4])
    assert loss_bias(mu, b, m) == pytest.approx(loss_bias(b, mu, m), abs=1e-15)


# --- forward_backward ------------------------------------------------------

def test_gradients_match_finite_differences():
    worst, per_group = max_relative_error(build_instance())
    assert set(per_group) == set(PARAM_FIELDS)
    assert worst <= 1e-4


def test_gradients_id_only_when_weights_zero():
    inst = build_instance(alpha=0.0, beta=0.0)
    _, grads = forward_backward(inst.vectors, inst.labels, inst.params,
                                inst.encoder, inst.class_tokens, inst.cfg,
                                inst.noise)
    # the cross-modal maps only enter through the alpha terms
    assert np.array_equal(grads.w_it, np.zeros_like(grads.w_it))
    assert np.array_equal(grads.w_ti, np.zeros_like(grads.w_ti))
    fd = finite_difference_grads(inst)
    for name in ("v", "m_w1", "mu", "sigma"):
        a, f = getattr(grads, name), getattr(fd, name)
        assert np.max(np.abs(a - f) / np.maximum(np.abs(f), 1e-6)) <= 1e-4


def test_breakdown_total_recomputable(rng):
    inst = build_instance(seed=21)
    breakdown, _ = forward_backward(inst.vectors, inst.labels, inst.params,
                                    inst.encoder, inst.class_tokens, inst.cfg,
                                    inst.noise)
    recomputed = (breakdown.l_id + inst.cfg.alpha * (breakdown.l_intra + breakdown.l_inter)
                  + inst.cfg.beta * breakdown.l_bias)
    assert breakdown.total == pytest.approx(recomputed, abs=1e-12)
    for part in (breakdown.l_id, breakdown.l_inter, breakdown.l_intra,
                 breakdown.l_bias, breakdown.total):
        assert part >= 0.0


def test_intra_term_zero_at_identity_init():
    inst = build_instance(seed=5)
    inst.params.w_it[:] = np.eye(inst.params.d)
    inst.params.w_ti[:] = np.eye(inst.params.d)
    breakdown, _ = forward_backward(inst.vectors, inst.labels, inst.params,
                                    inst.encoder, inst.class_tokens, inst.cfg,
                                    inst.noise)
    assert breakdown.l_intra == 0.0


def test_batch_duplication_invariance():
    inst = build_instance(seed=13, batch=3)
    dup_vectors = np.vstack([inst.vectors, inst.vectors])
    dup_labels = np.concatenate([inst.labels, inst.labels])
    b1, g1 = forward_backward(inst.vectors, inst.labels, inst.params, inst.encoder,
                              inst.class_tokens, inst.cfg, inst.noise)
    b2, g2 = forward_backward(dup_vectors, dup_labels, inst.params, inst.encoder,
                              inst.class_tokens, inst.cfg, inst.noise)
    assert b1.total == pytest.approx(b2.total, abs=1e-12)
    for name in PARAM_FIELDS:
        assert np.allclose(getattr(g1, name), getattr(g2, name), atol=1e-12)


def test_forward_backward_matches_standalone_losses():
    # a batch of one image must reproduce the composition of the public ops
    inst = build_instance(seed=17, batch=1)
    x = inst.vectors[0]
    label = int(inst.labels[0])
    p = inst.params
    b = sample_bias(p.mu, p.sigma, inst.noise)
    m_i = meta_net(x, p)
    protos = np.stack([
        inst.encoder.encode(build_idbp(p.v, m_i, b, tok))
        for tok in inst.class_tokens
    ])
    expected_id = loss_id(x, protos, label, inst.cfg.tau)
    expected_inter = loss_inter(x, protos, label, p.w_it, p.w_ti, inst.cfg.tau)
    expected_intra = loss_intra(x, protos, p.w_it, p.w_ti)
    expected_bias = loss_bias(p.mu, b, m_i)
    breakdown, _ = forward_backward(inst.vectors, inst.labels, p, inst.encoder,
                                    inst.class_tokens, inst.cfg, inst.noise)
    assert breakdown.l_id == pytest.approx(expected_id, abs=1e-12)
    assert breakdown.l_inter == pytest.approx(expected_inter, abs=1e-12)
    assert breakdown.l_intra == pytest.approx(expected_intra, abs=1e-12)
    assert breakdown.l_bias == pytest.approx(expected_bias, abs=1e-12)


# --- optimizer -------------------------------------------------------------

def _single(value):
    params = TunerParams(
        v=np.array([[value]]), m_w1=np.zeros((1, 1)), m_b1=np.zeros(1),
        m_w2=np.zeros((1, 1)), m_b2=np.zeros(1), mu=np.zeros(1),
        sigma=np.zeros(1), w_it=np.zeros((1, 1)), w_ti=np.zeros((1, 1)),
    )
    return params


def test_sgd_zero_gradient_is_identity():
    p = _single(1.0)
    updated, velocity = sgd_step(p, p.zeros_like(), p.zeros_like(), lr=0.1,
                                 momentum=0.9)
    assert updated.v[0, 0] == 1.0
    assert velocity.v[0, 0] == 0.0


def test_sgd_two_step_recursion():
    # v <- 0.9 v + g ; p <- p - 0.1 v with g = 2 twice:
    # step 1: v=2,   p = 1 - 0.2  = 0.8
    # step 2: v=3.8, p = 0.8 - 0.38 = 0.42
    p = _single(1.0)
    g = _single(2.0)
    vel = p.zeros_like()
    p, vel = sgd_step(p, g, vel, lr=0.1, momentum=0.9)
    assert p.v[0, 0] == pytest.approx(0.8, abs=1e-15)
    assert vel.v[0, 0] == 2.0
    p, vel = sgd_step(p, g, vel, lr=0.1, momentum=0.9)
    assert vel.v[0, 0] == pytest.approx(3.8, abs=1e-15)
    assert p.v[0, 0] == pytest.approx(0.42, abs=1e-15)


def test_sgd_zero_momentum_is_plain_descent():
    p = _single(1.0)
    g = _single(0.5)
    updated, _ = sgd_step(p, g, p.zeros_like(), lr=0.2, momentum=0.0)
    assert updated.v[0, 0] == pytest.approx(1.0 - 0.2 * 0.5, abs=1e-15)


def test_sgd_non_finite_update_rejected():
    p = _single(1.0)
    g = _single(float("inf"))
    with pytest.raises(NonFiniteError):
        sgd_step(p, g, p.zeros_like(), lr=0.1, momentum=0.9)


# --- train -----------------------------------------------------------------

def tiny_task(seed=0):
    world = generate_world(SynthConfig(classes=3, dim=8, n_per_class_train=6,
                                       n_per_class_test=5, n_ood=5, seed=seed))
    encoder = FrozenTextEncoder(seed=seed, n_lm=8, d_out=8)
    tokens = ClassTokenTable(seed=seed, class_count=3, n_lm=8)
    return world, encoder, tokens


def test_train_zero_epochs_keeps_initialization():
    world, encoder, tokens = tiny_task()
    cfg = TrainConfig(epochs=0, context_length=4, seed=11)
    model, history = train(world.train, encoder, tokens, cfg)
    init = TunerParams.initialize(d=8, n_lm=8, context_length=4, seed=11)
    assert history == []
    for name in PARAM_FIELDS:
        assert np.array_equal(getattr(model.params, name), getattr(init, name))


def test_train_reduces_loss():
    world, encoder, tokens = tiny_task(seed=2)
    cfg = TrainConfig(epochs=25, batch_size=8, context_length=4, seed=2)
    model, history = train(world.train, encoder, tokens, cfg)
    assert history[-1].total < history[0].total


def test_train_deterministic_bitwise(tmp_path):
    world, encoder, tokens = tiny_task(seed=5)
    cfg = TrainConfig(epochs=4, batch_size=8, context_length=4, seed=5)
    p1, p2 = tmp_path / "m1.oodmod", tmp_path / "m2.oodmod"
    save_model(train(world.train, encoder, tokens, cfg)[0], p1)
    save_model(train(world.train, encoder, tokens, cfg)[0], p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_train_missing_class_errors():
    world, encoder, tokens = tiny_task()
    crippled = make_set(world.train.vectors[:6], labels=[0] * 6,
                        class_names=world.train.class_names, dim=8)
    with pytest.raises(EmptyClassError):
        train(crippled, encoder, tokens, TrainConfig(epochs=1, seed=0))


def test_model_round_trip(tmp_path):
    world, encoder, tokens = tiny_task(seed=7)
    cfg = TrainConfig(epochs=2, batch_size=8, context_length=4, seed=7)
    model, _ = train(world.train, encoder, tokens, cfg)
    path = tmp_path / "model.oodmod"
    save_model(model, path)
    loaded = load_model(path)
    for name in PARAM_FIELDS:
        assert np.array_equal(getattr(loaded.params, name), getattr(model.params, name))
    assert loaded.class_names == model.class_names
    assert loaded.cfg == model.cfg
    x = world.test.vectors[0]
    assert np.array_equal(loaded.conditioned_prototypes(x),
                          model.conditioned_prototypes(x))
    # save -> load -> save is byte identical
    path2 = tmp_path / "model2.oodmod"
    save_model(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


# --- inference -------------------------------------------------------------

def trained_tiny_model(seed=9):
    world, encoder, tokens = tiny_task(seed=seed)
    cfg = TrainConfig(epochs=3, batch_size=8, context_length=4, seed=seed)
    model, _ = train(world.train, encoder, tokens, cfg)
    return world, model


def test_infer_prototypes_ignore_sigma():
    world, model = trained_tiny_model()
    x = world.test.vectors[0]
    before = model.infer_prototypes(x)
    model.params.sigma[:] = 123.0  # inference uses b = mu, sigma is irrelevant
    after = model.infer_prototypes(x)
    assert np.array_equal(before.vectors, after.vectors)


def test_infer_prototypes_deterministic():
    world, model = trained_tiny_model()
    x = world.test.vectors[1]
    assert np.array_equal(model.infer_prototypes(x).vectors,
                          model.infer_prototypes(x).vectors)


def test_infer_prototypes_matches_pipeline_composition():
    world, model = trained_tiny_model(seed=4)
    x = world.test.vectors[2]
    p = model.params
    m_i = meta_net(x, p)
    expected = np.stack([
        model.encoder.encode(build_idbp(p.v, m_i, p.mu, tok))
        for tok in model.class_tokens
    ])
    protos = model.infer_prototypes(x)
    assert np.allclose(protos.vectors, expected, atol=1e-12)
    assert protos.modality == "text"


def test_map_image():
    world, model = trained_tiny_model(seed=6)
    model.params.w_it[:] = np.eye(8)
    x = world.test.vectors[0]
    assert np.array_equal(model.map_image(x), x)
    w = np.zeros((8, 8))
    w[0, 1] = 1.0
    w[1, 0] = 1.0
    model.params.w_it[:] = w
    out = model.map_image(np.r_[1.0, 2.0, np.zeros(6)])
    assert np.array_equal(out[:2], [2.0, 1.0])
    a, b = np.random.default_rng(0).standard_normal((2, 8))
    assert np.allclose(model.map_image(3.0 * a + b),
                       3.0 * model.map_image(a) + model.map_image(b), atol=1e-12)


def test_train_config_validation():
    with pytest.raises(BadConfigError):
        TrainConfig(epochs=-1)
    with pytest.raises(BadConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(BadConfigError):
        TrainConfig(tau=-0.5)


def test_loss_breakdown_mean():
    parts = [LossBreakdown(1.0, 2.0, 3.0, 4.0, 0.0),
             LossBreakdown(3.0, 0.0, 1.0, 0.0, 0.0)]
    merged = LossBreakdown.mean(parts, alpha=0.5, beta=2.0)
    assert merged.l_id == 2.0
    assert merged.total == pytest.approx(2.0 + 0.5 * (2.0 + 1.0) + 2.0 * 2.0)
