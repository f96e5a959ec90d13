"""Central finite-difference validation of the tuner's gradients.

Builds a seeded small instance with fully random parameters (keeping the
l1 and relu terms away from their kinks), then perturbs every component
of every parameter group and compares against the analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import ClassTokenTable, FrozenTextEncoder
from .rng import generator
from .tuner import PARAM_FIELDS, TrainConfig, TunerParams, forward_backward

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
REL_FLOOR = 1e-6


@dataclass
class GradCheckInstance:
    vectors: np.ndarray
    labels: np.ndarray
    params: TunerParams
    encoder: FrozenTextEncoder
    class_tokens: np.ndarray
    cfg: TrainConfig
    noise: np.ndarray


def build_instance(
    seed: int = 7,
    dim: int = 8,
    classes: int = 3,
    context_length: int = 2,
    n_lm: int = 8,
    batch: int = 4,
    alpha: float = 0.005,
    beta: float = 0.1,
    tau: float = 1.0,
) -> GradCheckInstance:
    """Random params (not the training warm start: identity maps put the
    reconstruction terms exactly on l1 kinks where subgradients and finite
    differences legitimately disagree)."""
    rng = generator(seed, "gradcheck")
    h_m = max(4, dim // 4)
    params = TunerParams(
        v=0.3 * rng.standard_normal((context_length, n_lm)),
        m_w1=rng.standard_normal((h_m, dim)) / np.sqrt(dim),
        m_b1=0.3 * rng.standard_normal(h_m),
        m_w2=rng.standard_normal((n_lm, h_m)) / np.sqrt(h_m),
        m_b2=0.3 * rng.standard_normal(n_lm),
        mu=0.3 * rng.standard_normal(n_lm),
        sigma=0.3 * rng.standard_normal(n_lm),
        w_it=np.eye(dim) + 0.2 * rng.standard_normal((dim, dim)),
        w_ti=np.eye(dim) + 0.2 * rng.standard_normal((dim, dim)),
    )
    vectors = rng.standard_normal((batch, dim))
    labels = rng.integers(0, classes, size=batch)
    noise = rng.standard_normal(n_lm)
    encoder = FrozenTextEncoder(seed=seed + 1, n_lm=n_lm, d_out=dim)
    tokens = ClassTokenTable(seed=seed + 2, class_count=classes, n_lm=n_lm).tokens
    cfg = TrainConfig(alpha=alpha, beta=beta, tau=tau, seed=seed)
    return GradCheckInstance(vectors, labels, params, encoder, tokens, cfg, noise)


def finite_difference_grads(inst: GradCheckInstance, step: float = DEFAULT_STEP) -> TunerParams:
    """Central differences of the batch total over every parameter entry."""

    def total(params: TunerParams) -> float:
        breakdown, _ = forward_backward(
            inst.vectors, inst.labels, params, inst.encoder,
            inst.class_tokens, inst.cfg, inst.noise,
        )
        return breakdown.total

    fd = inst.params.zeros_like()
    for name in PARAM_FIELDS:
        base = getattr(inst.params, name)
        out = getattr(fd, name)
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            bumped = inst.params.copy()
            getattr(bumped, name)[idx] += step
            plus = total(bumped)
            getattr(bumped, name)[idx] -= 2.0 * step
            minus = total(bumped)
            out[idx] = (plus - minus) / (2.0 * step)
    return fd


def max_relative_error(
    inst: GradCheckInstance, step: float = DEFAULT_STEP
) -> tuple[float, dict[str, float]]:
    """(worst relative error, per-parameter-group worst errors)."""
    _, analytic = forward_backward(
        inst.vectors, inst.labels, inst.params, inst.encoder,
        inst.class_tokens, inst.cfg, inst.noise,
    )
    fd = finite_difference_grads(inst, step=step)
    per_group = {}
    for name in PARAM_FIELDS:
        a = getattr(analytic, name)
        f = getattr(fd, name)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), REL_FLOOR)
        per_group[name] = float(np.max(np.abs(a - f) / denom))
    return max(per_group.values()), per_group
