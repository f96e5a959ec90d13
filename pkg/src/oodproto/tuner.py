"""Few-shot prompt tuning against a frozen text encoder.

Trainable state: L context tokens, a two-layer meta-net conditioning
prompts on the image embedding, a Gaussian image-domain bias (mean mu,
diagonal scale sigma, sampled as b = mu + sigma * noise), and two square
bias-free cross-modal maps w_it (image->text) and w_ti (text->image).

Per image, prompts are built as [V_1 + m(I) + b, ..., V_L + m(I) + b, y_c]
and encoded into per-image text prototypes, so prototypes are rebuilt for
every image in the batch. Four losses combine as

    total = l_id + alpha * (l_intra + l_inter) + beta * l_bias

and all gradients are exact reverse-mode derivatives written out by hand;
`gradcheck` validates every parameter group against central finite
differences. One bias draw is shared across a batch step. Training is a
single deterministic sequence of steps given (seed, config, data).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .encoder import ClassTokenTable, FrozenTextEncoder
from .errors import (
    BadClassError,
    BadConfigError,
    BadMagicError,
    DimMismatchError,
    EmptyClassError,
    NoLabelsError,
    NonFiniteError,
)
from .prototypes import PrototypeSet
from .rng import generator
from .scoring import ScoreConfig, _max_softmax, mcm_batch
from .store import EmbeddingSet

MODEL_MAGIC = b"OODMOD1\n"

PARAM_FIELDS = ("v", "m_w1", "m_b1", "m_w2", "m_b2", "mu", "sigma", "w_it", "w_ti")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.002
    batch_size: int = 32
    context_length: int = 16
    momentum: float = 0.9
    alpha: float = 0.005
    beta: float = 0.1
    tau: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.context_length < 1:
            raise BadConfigError("epochs must be >= 0, batch_size and context_length >= 1")
        if self.learning_rate <= 0 or self.tau <= 0:
            raise BadConfigError("learning_rate and tau must be positive")
        if self.momentum < 0 or self.alpha < 0 or self.beta < 0:
            raise BadConfigError("momentum, alpha, beta must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    l_id: float
    l_inter: float
    l_intra: float
    l_bias: float
    total: float

    @classmethod
    def combine(cls, l_id, l_inter, l_intra, l_bias, alpha, beta) -> "LossBreakdown":
        total = l_id + alpha * (l_intra + l_inter) + beta * l_bias
        return cls(float(l_id), float(l_inter), float(l_intra), float(l_bias), float(total))

    @classmethod
    def mean(cls, parts, alpha, beta) -> "LossBreakdown":
        return cls.combine(
            float(np.mean([p.l_id for p in parts])),
            float(np.mean([p.l_inter for p in parts])),
            float(np.mean([p.l_intra for p in parts])),
            float(np.mean([p.l_bias for p in parts])),
            alpha,
            beta,
        )


@dataclass
class TunerParams:
    """All trainable arrays; also reused as the shape for grads/velocity."""

    v: np.ndarray      # (L, n_lm) context tokens
    m_w1: np.ndarray   # (h_m, d)
    m_b1: np.ndarray   # (h_m,)
    m_w2: np.ndarray   # (n_lm, h_m)
    m_b2: np.ndarray   # (n_lm,)
    mu: np.ndarray     # (n_lm,)
    sigma: np.ndarray  # (n_lm,) diagonal scale of the bias covariance
    w_it: np.ndarray   # (d, d) image->text map, no bias
    w_ti: np.ndarray   # (d, d) text->image map, no bias

    @property
    def context_length(self) -> int:
        return self.v.shape[0]

    @property
    def n_lm(self) -> int:
        return self.v.shape[1]

    @property
    def d(self) -> int:
        return self.w_it.shape[0]

    def fields(self):
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def copy(self) -> "TunerParams":
        return TunerParams(**{k: a.copy() for k, a in self.fields().items()})

    def zeros_like(self) -> "TunerParams":
        return TunerParams(**{k: np.zeros_like(a) for k, a in self.fields().items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.fields().values())

    @classmethod
    def initialize(
        cls, d: int, n_lm: int, context_length: int, seed: int, m_hidden: int | None = None
    ) -> "TunerParams":
        """Warm start: identity cross-modal maps (l_intra starts at zero and
        the mapped input equals the input), zero bias mean, small scale."""
        h_m = max(4, d // 4) if m_hidden is None else int(m_hidden)
        return cls(
            v=generator(seed, "init-context").standard_normal((context_length, n_lm)) * 0.02,
            m_w1=generator(seed, "init-meta-w1").standard_normal((h_m, d)) / np.sqrt(d),
            m_b1=np.zeros(h_m),
            m_w2=generator(seed, "init-meta-w2").standard_normal((n_lm, h_m)) / np.sqrt(h_m),
            m_b2=np.zeros(n_lm),
            mu=np.zeros(n_lm),
            sigma=0.01 * np.ones(n_lm),
            w_it=np.eye(d),
            w_ti=np.eye(d),
        )


def sample_bias(mu: np.ndarray, sigma: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """b = mu + sigma * noise, componentwise (diagonal covariance factor)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if not mu.shape == sigma.shape == noise.shape:
        raise DimMismatchError(
            f"mu/sigma/noise shapes differ: {mu.shape}, {sigma.shape}, {noise.shape}"
        )
    return mu + sigma * noise


def meta_net(vector: np.ndarray, params: TunerParams) -> np.ndarray:
    """Two-layer MLP (Linear-ReLU-Linear) mapping an embedding to token space."""
    x = np.asarray(vector, dtype=np.float64)
    if x.shape != (params.m_w1.shape[1],):
        raise DimMismatchError(f"input shape {x.shape} != ({params.m_w1.shape[1]},)")
    hidden = np.maximum(params.m_w1 @ x + params.m_b1, 0.0)
    return params.m_w2 @ hidden + params.m_b2


def _meta_net_batch(x: np.ndarray, params: TunerParams):
    pre = x @ params.m_w1.T + params.m_b1
    hidden = np.maximum(pre, 0.0)
    return pre, hidden, hidden @ params.m_w2.T + params.m_b2


def build_idbp(v: np.ndarray, m_i: np.ndarray, b: np.ndarray, class_token: np.ndarray) -> np.ndarray:
    """Token sequence [V_1 + m(I) + b, ..., V_L + m(I) + b, class_token]."""
    v = np.asarray(v, dtype=np.float64)
    m_i = np.asarray(m_i, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    y = np.asarray(class_token, dtype=np.float64)
    if v.ndim != 2:
        raise DimMismatchError("v must be a (L, n_lm) matrix")
    n_lm = v.shape[1]
    if m_i.shape != (n_lm,) or b.shape != (n_lm,) or y.shape != (n_lm,):
        raise DimMismatchError("m(I), b and the class token must all have dim n_lm")
    return np.vstack([v + (m_i + b), y])


def _proto_matrix(protos) -> np.ndarray:
    if isinstance(protos, PrototypeSet):
        return protos.vectors
    mat = np.asarray(protos, dtype=np.float64)
    if mat.ndim != 2:
        raise DimMismatchError("prototypes must be a (C, d) matrix")
    return mat


def _cross_entropy(cosines: np.ndarray, true_class: int, tau: float) -> float:
    c = cosines.shape[0]
    if not 0 <= true_class < c:
        raise BadClassError(f"true class {true_class} outside 0..{c - 1}")
    logits = cosines / tau
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    return float(lse - logits[true_class])


def _cos_vec(x: np.ndarray, mat: np.ndarray) -> np.ndarray:
    nx = np.linalg.norm(x)
    nm = np.linalg.norm(mat, axis=1)
    return (mat @ x) / (nx * nm)


def loss_id(vector, prototypes, true_class: int, tau: float) -> float:
    """Cross-entropy of softmax(cos(I, P_c)/tau) at the true class."""
    x = np.asarray(vector, dtype=np.float64)
    return _cross_entropy(_cos_vec(x, _proto_matrix(prototypes)), true_class, tau)


def loss_inter(vector, prototypes, true_class: int, w_it, w_ti, tau: float) -> float:
    """Two cross-entropy terms: cos(I, w_ti P_j) and cos(w_it I, P_j)."""
    x = np.asarray(vector, dtype=np.float64)
    p = _proto_matrix(prototypes)
    term1 = _cross_entropy(_cos_vec(x, p @ np.asarray(w_ti).T), true_class, tau)
    term2 = _cross_entropy(_cos_vec(np.asarray(w_it) @ x, p), true_class, tau)
    return term1 + term2


def loss_intra(vector, prototypes, w_it, w_ti) -> float:
    """l1 reconstruction error through the two maps, image + every class."""
    x = np.asarray(vector, dtype=np.float64)
    p = _proto_matrix(prototypes)
    w_it = np.asarray(w_it, dtype=np.float64)
    w_ti = np.asarray(w_ti, dtype=np.float64)
    img_term = np.abs(x - w_ti @ (w_it @ x)).sum()
    txt_term = np.abs(p - (p @ w_ti.T) @ w_it.T).sum()
    return float(img_term + txt_term)


def loss_bias(mu, b, m_i) -> float:
    """l1 pull of the bias mean and the sampled bias toward m(I)."""
    mu = np.asarray(mu, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m_i = np.asarray(m_i, dtype=np.float64)
    if not mu.shape == b.shape == m_i.shape:
        raise DimMismatchError("mu, b and m(I) must share one shape")
    return float(np.abs(mu - m_i).sum() + np.abs(b - m_i).sum())


def _check_batch(vectors, labels, params, encoder, class_tokens):
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    tokens = class_tokens.tokens if isinstance(class_tokens, ClassTokenTable) else np.asarray(
        class_tokens, dtype=np.float64
    )
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimMismatchError("batch must be a non-empty (B, d) matrix")
    if y.shape != (x.shape[0],):
        raise DimMismatchError("labels must align with batch rows")
    if x.shape[1] != params.d:
        raise DimMismatchError(f"batch dim {x.shape[1]} != params dim {params.d}")
    if tokens.ndim != 2 or tokens.shape[1] != params.n_lm:
        raise DimMismatchError("class tokens must be (C, n_lm)")
    c = tokens.shape[0]
    if np.any(y < 0) or np.any(y >= c):
        raise BadClassError("batch labels must be valid class indices")
    if encoder.n_lm != params.n_lm or encoder.d_out != params.d:
        raise DimMismatchError(
            f"encoder dims ({encoder.n_lm}->{encoder.d_out}) incompatible with params "
            f"({params.n_lm}->{params.d})"
        )
    return x, y, tokens


def forward_backward(
    vectors,
    labels,
    params: TunerParams,
    encoder: FrozenTextEncoder,
    class_tokens,
    cfg: TrainConfig,
    noise: np.ndarray,
) -> tuple[LossBreakdown, TunerParams]:
    """Batch-averaged losses and exact gradients for every parameter.

    `noise` is the single standard-normal draw shared by the whole batch
    step; gradients through b = mu + sigma * noise use the
    reparameterization with the draw held constant.
    """
    x, y, tokens = _check_batch(vectors, labels, params, encoder, class_tokens)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (params.n_lm,):
        raise DimMismatchError(f"noise shape {noise.shape} != ({params.n_lm},)")

    b_sz, d = x.shape
    c = tokens.shape[0]
    ell = params.context_length
    tau, alpha, beta = cfg.tau, cfg.alpha, cfg.beta
    w = 1.0 / b_sz

    # ---- forward ----
    pre_meta, hidden, m_all = _meta_net_batch(x, params)          # (B,hm), (B,n_lm)
    bias = params.mu + params.sigma * noise                       # (n_lm,)
    shift = m_all + bias                                          # (B,n_lm)
    base = (params.v.sum(axis=0) + ell * shift) / (ell + 1.0)     # (B,n_lm)
    pooled = base[:, None, :] + tokens[None, :, :] / (ell + 1.0)  # (B,C,n_lm)

    act = pooled @ encoder.w1.T + encoder.b1                      # (B,C,h)
    z = np.tanh(act)
    protos = z @ encoder.w2.T                                     # (B,C,d)

    x_mapped = x @ params.w_it.T                                  # (B,d) w_it @ I
    p_mapped = protos @ params.w_ti.T                             # (B,C,d) w_ti @ P
    x_recon = x_mapped @ params.w_ti.T                            # (B,d) w_ti w_it I
    p_recon = p_mapped @ params.w_it.T                            # (B,C,d) w_it w_ti P

    nx = np.linalg.norm(x, axis=1)
    nxm = np.linalg.norm(x_mapped, axis=1)
    npr = np.linalg.norm(protos, axis=2)
    npm = np.linalg.norm(p_mapped, axis=2)

    cos_id = np.einsum("bd,bcd->bc", x, protos) / (nx[:, None] * npr)
    cos_t1 = np.einsum("bd,bcd->bc", x, p_mapped) / (nx[:, None] * npm)
    cos_t2 = np.einsum("bd,bcd->bc", x_mapped, protos) / (nxm[:, None] * npr)

    onehot = np.zeros((b_sz, c))
    onehot[np.arange(b_sz), y] = 1.0

    def ce(cosines):
        logits = cosines / tau
        m = logits.max(axis=1, keepdims=True)
        ex = np.exp(logits - m)
        total = ex.sum(axis=1)
        losses = (m[:, 0] + np.log(total)) - logits[np.arange(b_sz), y]
        return losses, ex / total[:, None]

    ce_id, q_id = ce(cos_id)
    ce_t1, q_t1 = ce(cos_t1)
    ce_t2, q_t2 = ce(cos_t2)

    res_img = x - x_recon                                         # (B,d)
    res_txt = protos - p_recon                                    # (B,C,d)
    intra_each = np.abs(res_img).sum(axis=1) + np.abs(res_txt).sum(axis=(1, 2))
    bias_each = np.abs(params.mu - m_all).sum(axis=1) + np.abs(bias - m_all).sum(axis=1)

    breakdown = LossBreakdown.combine(
        ce_id.mean(), (ce_t1 + ce_t2).mean(), intra_each.mean(), bias_each.mean(),
        alpha, beta,
    )

    # ---- backward (cotangent 1 on the batch-mean total) ----
    g_id = (q_id - onehot) * (w / tau)
    g_t1 = (q_t1 - onehot) * (alpha * w / tau)
    g_t2 = (q_t2 - onehot) * (alpha * w / tau)

    def cos_grad_right(g, cos, left, right, n_left, n_right):
        # d<g, cos(left_b, right_bc)>/d right
        a = g / (n_left[:, None] * n_right)
        bb = g * cos / (n_right * n_right)
        return a[:, :, None] * left[:, None, :] - bb[:, :, None] * right

    d_protos = cos_grad_right(g_id, cos_id, x, protos, nx, npr)
    d_pm = cos_grad_right(g_t1, cos_t1, x, p_mapped, nx, npm)
    d_protos += cos_grad_right(g_t2, cos_t2, x_mapped, protos, nxm, npr)
    # d/d x_mapped of the second inter term
    a2 = g_t2 / (nxm[:, None] * npr)
    d_xm = np.einsum("bc,bcd->bd", a2, protos)
    d_xm -= ((g_t2 * cos_t2).sum(axis=1) / (nxm * nxm))[:, None] * x_mapped

    sgn_txt = np.sign(res_txt) * (alpha * w)
    sgn_img = np.sign(res_img) * (alpha * w)
    d_protos += sgn_txt
    d_precon = -sgn_txt                                           # (B,C,d)
    d_xrecon = -sgn_img                                           # (B,d)

    grads = params.zeros_like()

    # reconstruction paths: p_recon = p_mapped @ w_it.T, x_recon = x_mapped @ w_ti.T
    grads.w_it += np.einsum("bcd,bce->de", d_precon, p_mapped)
    d_pm += d_precon @ params.w_it
    grads.w_ti += d_xrecon.T @ x_mapped
    d_xm += d_xrecon @ params.w_ti

    # mapped prototypes: p_mapped = protos @ w_ti.T
    grads.w_ti += np.einsum("bcd,bce->de", d_pm, protos)
    d_protos += d_pm @ params.w_ti

    # mapped input: x_mapped = x @ w_it.T
    grads.w_it += d_xm.T @ x

    # encoder backward into pooled prompt vectors
    d_z = d_protos @ encoder.w2
    d_act = d_z * (1.0 - z * z)
    d_pooled = d_act @ encoder.w1                                 # (B,C,n_lm)

    grads.v += np.tile(d_pooled.sum(axis=(0, 1)) / (ell + 1.0), (ell, 1))
    d_shift = d_pooled.sum(axis=1) * (ell / (ell + 1.0))          # (B,n_lm)

    d_m = d_shift.copy()
    d_bias = d_shift.sum(axis=0)

    # bias loss: |mu - m|_1 + |b - m|_1
    sgn_mu = np.sign(params.mu - m_all) * (beta * w)
    sgn_b = np.sign(bias - m_all) * (beta * w)
    grads.mu += sgn_mu.sum(axis=0)
    d_bias += sgn_b.sum(axis=0)
    d_m -= sgn_mu + sgn_b

    # b = mu + sigma * noise
    grads.mu += d_bias
    grads.sigma += d_bias * noise

    # meta-net backward
    grads.m_b2 += d_m.sum(axis=0)
    grads.m_w2 += d_m.T @ hidden
    d_hidden = d_m @ params.m_w2
    d_pre = d_hidden * (pre_meta > 0.0)
    grads.m_b1 += d_pre.sum(axis=0)
    grads.m_w1 += d_pre.T @ x

    return breakdown, grads


def sgd_step(
    params: TunerParams,
    grads: TunerParams,
    velocity: TunerParams,
    lr: float,
    momentum: float,
) -> tuple[TunerParams, TunerParams]:
    """Classical momentum: v <- momentum*v + g ; p <- p - lr*v."""
    new_v = {}
    new_p = {}
    for name in PARAM_FIELDS:
        nv = momentum * getattr(velocity, name) + getattr(grads, name)
        new_v[name] = nv
        new_p[name] = getattr(params, name) - lr * nv
    updated = TunerParams(**new_p)
    if not updated.all_finite():
        raise NonFiniteError("optimizer step produced NaN or Inf")
    return updated, TunerParams(**new_v)


@dataclass
class TrainedModel:
    """Frozen bundle of tuned parameters plus everything needed to score."""

    params: TunerParams
    cfg: TrainConfig
    encoder: FrozenTextEncoder
    class_tokens: np.ndarray  # (C, n_lm)
    class_names: tuple

    @property
    def class_count(self) -> int:
        return self.class_tokens.shape[0]

    def map_image(self, vector) -> np.ndarray:
        """I' = w_it @ I (image embedding mapped into the text domain)."""
        x = np.asarray(vector, dtype=np.float64)
        if x.shape[-1] != self.params.d:
            raise DimMismatchError(f"dim {x.shape[-1]} != {self.params.d}")
        return x @ self.params.w_it.T

    def conditioned_prototypes(self, vectors) -> np.ndarray:
        """Per-row text prototypes with b = mu (no sampling), (n, C, d)."""
        x = np.asarray(vectors, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x.reshape(1, -1)
        if x.shape[1] != self.params.d:
            raise DimMismatchError(f"dim {x.shape[1]} != {self.params.d}")
        p = self.params
        ell = p.context_length
        _, _, m_all = _meta_net_batch(x, p)
        shift = m_all + p.mu
        base = (p.v.sum(axis=0) + ell * shift) / (ell + 1.0)
        pooled = base[:, None, :] + self.class_tokens[None, :, :] / (ell + 1.0)
        protos = self.encoder.encode_pooled(pooled)
        return protos[0] if squeeze else protos

    def infer_prototypes(self, vector, class_tokens=None) -> PrototypeSet:
        """Text prototypes conditioned on one test embedding."""
        if class_tokens is not None:
            tokens = class_tokens.tokens if isinstance(class_tokens, ClassTokenTable) else np.asarray(class_tokens)
            model = replace_tokens(self, tokens)
            mat = model.conditioned_prototypes(vector)
        else:
            mat = self.conditioned_prototypes(vector)
        return PrototypeSet(
            modality="text",
            dim=self.params.d,
            class_names=self.class_names,
            vectors=mat,
            normalized=False,
        )


def replace_tokens(model: TrainedModel, tokens: np.ndarray) -> TrainedModel:
    return TrainedModel(
        params=model.params,
        cfg=model.cfg,
        encoder=model.encoder,
        class_tokens=np.asarray(tokens, dtype=np.float64),
        class_names=model.class_names,
    )


def _labeled_arrays(train_set: EmbeddingSet):
    mask = train_set.labeled_mask()
    if not np.any(mask):
        raise NoLabelsError("training set has no labeled records")
    x = train_set.vectors[mask]
    y = train_set.labels[mask]
    present = np.unique(y)
    if present.size != train_set.class_count:
        missing = sorted(set(range(train_set.class_count)) - set(present.tolist()))[0]
        raise EmptyClassError(
            f"class {missing} ({train_set.class_names[missing]!r}) has no labeled records"
        )
    return x, y


def train(
    train_set: EmbeddingSet,
    encoder: FrozenTextEncoder,
    class_tokens,
    cfg: TrainConfig,
) -> tuple[TrainedModel, list[LossBreakdown]]:
    """Seeded epochs of shuffled mini-batch steps; bit-deterministic."""
    x, y = _labeled_arrays(train_set)
    tokens = class_tokens.tokens if isinstance(class_tokens, ClassTokenTable) else np.asarray(
        class_tokens, dtype=np.float64
    )
    if tokens.shape[0] != train_set.class_count:
        raise BadConfigError(
            f"{tokens.shape[0]} class tokens for {train_set.class_count} classes"
        )

    params = TunerParams.initialize(
        d=train_set.dim, n_lm=encoder.n_lm, context_length=cfg.context_length, seed=cfg.seed
    )
    velocity = params.zeros_like()
    shuffle_rng = generator(cfg.seed, "train-shuffle")
    noise_rng = generator(cfg.seed, "train-bias-noise")

    history: list[LossBreakdown] = []
    n = x.shape[0]
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        epoch_parts = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            noise = noise_rng.standard_normal(encoder.n_lm)
            breakdown, grads = forward_backward(
                x[idx], y[idx], params, encoder, tokens, cfg, noise
            )
            params, velocity = sgd_step(
                params, grads, velocity, cfg.learning_rate, cfg.momentum
            )
            epoch_parts.append(breakdown)
        history.append(LossBreakdown.mean(epoch_parts, cfg.alpha, cfg.beta))

    model = TrainedModel(
        params=params,
        cfg=cfg,
        encoder=encoder,
        class_tokens=tokens,
        class_names=train_set.class_names,
    )
    return model, history


def evaluate_loss(
    vectors, labels, params, encoder, class_tokens, cfg: TrainConfig
) -> LossBreakdown:
    """Loss with the inference-time bias b = mu (noise held at zero)."""
    breakdown, _ = forward_backward(
        vectors, labels, params, encoder, class_tokens, cfg,
        np.zeros(encoder.n_lm),
    )
    return breakdown


# ---------------------------------------------------------------------------
# model-based batch scoring

def score_with_model(
    model: TrainedModel,
    vectors,
    kind: str,
    image_protos: PrototypeSet | None = None,
    score_cfg: ScoreConfig | None = None,
    conditioning_mean=None,
) -> tuple[np.ndarray, np.ndarray]:
    """(scores, predicted classes) for a batch under a trained model.

    Text prototypes are rebuilt per record (or once from
    `conditioning_mean` when given). mmp/gmp additionally need image
    prototypes; gmp also scores the mapped input.
    """
    cfg = score_cfg or ScoreConfig()
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatchError("vectors must be (n, d)")
    if conditioning_mean is not None:
        cond = np.asarray(conditioning_mean, dtype=np.float64)
        protos = np.broadcast_to(
            model.conditioned_prototypes(cond)[None, :, :],
            (x.shape[0], model.class_count, model.params.d),
        )
    else:
        protos = model.conditioned_prototypes(x)

    nx = np.linalg.norm(x, axis=1)
    npr = np.linalg.norm(protos, axis=2)
    cos_txt = np.einsum("bd,bcd->bc", x, protos) / (nx[:, None] * npr)
    predicted = np.argmax(cos_txt, axis=1)
    s_txt = _max_softmax(cos_txt, cfg.tau)

    if kind == "mcm":
        return s_txt, predicted
    if image_protos is None:
        raise BadConfigError(f"score kind {kind!r} requires image prototypes")
    if image_protos.class_count != model.class_count:
        raise BadConfigError("image prototype class count differs from the model")

    s_img = mcm_batch(x, image_protos, cfg)
    if kind == "mmp":
        return (s_img + s_txt) / 2.0, predicted
    if kind == "gmp":
        xm = model.map_image(x)
        nxm = np.linalg.norm(xm, axis=1)
        cos_txt_m = np.einsum("bd,bcd->bc", xm, protos) / (nxm[:, None] * npr)
        s_txt_m = _max_softmax(cos_txt_m, cfg.tau)
        s_img_m = mcm_batch(xm, image_protos, cfg)
        return ((s_txt + s_img) + (s_txt_m + s_img_m)) / 4.0, predicted
    raise BadConfigError(f"unknown score kind {kind!r}")


# ---------------------------------------------------------------------------
# persistence: magic + JSON manifest line + float64 little-endian blocks

def save_model(model: TrainedModel, path) -> None:
    p = model.params
    header = {
        "class_names": list(model.class_names),
        "config": {
            "epochs": model.cfg.epochs,
            "learning_rate": model.cfg.learning_rate,
            "batch_size": model.cfg.batch_size,
            "context_length": model.cfg.context_length,
            "momentum": model.cfg.momentum,
            "alpha": model.cfg.alpha,
            "beta": model.cfg.beta,
            "tau": model.cfg.tau,
            "seed": model.cfg.seed,
        },
        "dims": {
            "d": p.d,
            "n_lm": p.n_lm,
            "context_length": p.context_length,
            "m_hidden": p.m_w1.shape[0],
            "classes": model.class_count,
        },
        "encoder": {
            "seed": model.encoder.seed,
            "n_lm": model.encoder.n_lm,
            "d_out": model.encoder.d_out,
            "hidden": model.encoder.hidden,
        },
        "blocks": list(PARAM_FIELDS) + ["class_tokens"],
    }
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        for name in PARAM_FIELDS:
            f.write(getattr(p, name).astype("<f8").tobytes(order="C"))
        f.write(model.class_tokens.astype("<f8").tobytes(order="C"))


def load_model(path) -> TrainedModel:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(MODEL_MAGIC):
        raise BadMagicError(f"{path}: missing model magic bytes")
    nl = data.find(b"\n", len(MODEL_MAGIC))
    if nl < 0:
        raise BadMagicError(f"{path}: unterminated model header")
    try:
        header = json.loads(data[len(MODEL_MAGIC):nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BadMagicError(f"{path}: malformed model header: {e}") from e

    dims = header["dims"]
    d, n_lm = int(dims["d"]), int(dims["n_lm"])
    ell, h_m, c = int(dims["context_length"]), int(dims["m_hidden"]), int(dims["classes"])
    shapes = {
        "v": (ell, n_lm),
        "m_w1": (h_m, d),
        "m_b1": (h_m,),
        "m_w2": (n_lm, h_m),
        "m_b2": (n_lm,),
        "mu": (n_lm,),
        "sigma": (n_lm,),
        "w_it": (d, d),
        "w_ti": (d, d),
        "class_tokens": (c, n_lm),
    }
    order = list(PARAM_FIELDS) + ["class_tokens"]
    if header.get("blocks") != order:
        raise BadMagicError(f"{path}: unexpected parameter block order")

    offset = nl + 1
    arrays = {}
    for name in order:
        shape = shapes[name]
        nbytes = 8 * int(np.prod(shape))
        chunk = data[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise DimMismatchError(f"{path}: truncated block {name!r}")
        arrays[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(data):
        raise DimMismatchError(f"{path}: trailing bytes after parameter blocks")

    tokens = arrays.pop("class_tokens")
    params = TunerParams(**arrays)
    if not params.all_finite():
        raise NonFiniteError(f"{path}: parameter blocks contain NaN or Inf")
    enc = header["encoder"]
    cfg = TrainConfig(**header["config"])
    return TrainedModel(
        params=params,
        cfg=cfg,
        encoder=FrozenTextEncoder(
            seed=int(enc["seed"]), n_lm=int(enc["n_lm"]),
            d_out=int(enc["d_out"]), hidden=int(enc["hidden"]),
        ),
        class_tokens=tokens,
        class_names=tuple(header["class_names"]),
    )
