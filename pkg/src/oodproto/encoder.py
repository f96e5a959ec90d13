"""Frozen text encoder surrogate with exact input gradients.

The encoder maps a token sequence to an embedding:

    e = W2 @ tanh(W1 @ meanpool(tokens) + b1)

Weights are drawn once from a seeded counter-based stream and immutable
afterwards, so an encoder is fully reconstructed from
(seed, n_lm, hidden, d_out) — no weight files. Both ``encode`` and
``encode_vjp`` are pure functions and safe for concurrent use.

A second variant, PrecomputedTableEncoder, returns stored per-class
output vectors verbatim (keyed by the class token at the end of the
sequence). It carries real, externally computed text prototypes into the
zero-shot scoring path and supports no gradients.
"""

from __future__ import annotations

import numpy as np

from .errors import BadClassError, DimMismatchError
from .rng import generator


def _as_token_matrix(tokens, n_lm: int) -> np.ndarray:
    seq = np.asarray(tokens, dtype=np.float64)
    if seq.ndim == 1:
        seq = seq.reshape(1, -1)
    if seq.ndim != 2 or seq.shape[0] == 0 or seq.shape[1] != n_lm:
        raise DimMismatchError(
            f"token sequence shape {seq.shape} incompatible with n_lm={n_lm}"
        )
    return seq


class FrozenTextEncoder:
    """Deterministic meanpool -> affine -> tanh -> affine encoder."""

    def __init__(self, seed: int, n_lm: int = 64, d_out: int = 64, hidden: int | None = None):
        if n_lm <= 0 or d_out <= 0:
            raise DimMismatchError("n_lm and d_out must be positive")
        h = n_lm if hidden is None else int(hidden)
        if h <= 0:
            raise DimMismatchError("hidden width must be positive")
        self.seed = int(seed)
        self.n_lm = int(n_lm)
        self.d_out = int(d_out)
        self.hidden = h
        # std 1/sqrt(fan_in) keeps tanh inputs at unit scale
        self.w1 = generator(seed, "encoder-w1").standard_normal((h, n_lm)) / np.sqrt(n_lm)
        self.b1 = generator(seed, "encoder-b1").standard_normal(h) / np.sqrt(n_lm)
        self.w2 = generator(seed, "encoder-w2").standard_normal((d_out, h)) / np.sqrt(h)
        for a in (self.w1, self.b1, self.w2):
            a.setflags(write=False)

    def encode(self, tokens) -> np.ndarray:
        """Embed one token sequence (list/array of n_lm-vectors)."""
        seq = _as_token_matrix(tokens, self.n_lm)
        return self.encode_pooled(seq.mean(axis=0))

    def encode_vjp(self, tokens, cotangent) -> np.ndarray:
        """Gradient of <cotangent, encode(tokens)> w.r.t. each token.

        Returns a (T, n_lm) array; under mean pooling every token receives
        the pooled gradient divided by the token count.
        """
        seq = _as_token_matrix(tokens, self.n_lm)
        u = np.asarray(cotangent, dtype=np.float64)
        if u.shape != (self.d_out,):
            raise DimMismatchError(
                f"cotangent shape {u.shape} does not match d_out={self.d_out}"
            )
        pooled_grad = self.pooled_vjp(seq.mean(axis=0), u)
        count = seq.shape[0]
        return np.tile(pooled_grad / count, (count, 1))

    # pooled-space kernels; used directly by the tuner for batched work
    def encode_pooled(self, pooled: np.ndarray) -> np.ndarray:
        """encode() after pooling: accepts (..., n_lm), returns (..., d_out)."""
        z = np.tanh(pooled @ self.w1.T + self.b1)
        return z @ self.w2.T

    def pooled_vjp(self, pooled: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        z = np.tanh(pooled @ self.w1.T + self.b1)
        return ((cotangent @ self.w2) * (1.0 - z * z)) @ self.w1


class ClassTokenTable:
    """Frozen pseudo-random class tokens, one n_lm-vector per class.

    Stands in for a tokenizer + embedding of class names; deterministic
    per (seed, class index).
    """

    def __init__(self, seed: int, class_count: int, n_lm: int):
        if class_count <= 0:
            raise BadClassError("class_count must be positive")
        self.seed = int(seed)
        self.n_lm = int(n_lm)
        self.tokens = generator(seed, "class-tokens").standard_normal(
            (class_count, n_lm)
        ) / np.sqrt(n_lm)
        self.tokens.setflags(write=False)

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def token(self, class_index: int) -> np.ndarray:
        if not 0 <= class_index < len(self):
            raise BadClassError(f"class index {class_index} outside 0..{len(self) - 1}")
        return self.tokens[class_index]


class PrecomputedTableEncoder:
    """Encoder variant returning stored vectors verbatim.

    Matches the trailing (class) token of the input sequence against its
    token table and returns the corresponding stored output. Zero-shot
    scoring only: there is no gradient path through a lookup table.
    """

    def __init__(self, class_tokens: np.ndarray, outputs: np.ndarray):
        toks = np.asarray(class_tokens, dtype=np.float64)
        outs = np.asarray(outputs, dtype=np.float64)
        if toks.ndim != 2 or outs.ndim != 2 or toks.shape[0] != outs.shape[0]:
            raise DimMismatchError("class_tokens and outputs must pair up row-wise")
        self.class_tokens = toks
        self.outputs = outs
        self.n_lm = toks.shape[1]
        self.d_out = outs.shape[1]

    def encode(self, tokens) -> np.ndarray:
        seq = _as_token_matrix(tokens, self.n_lm)
        last = seq[-1]
        hits = np.nonzero(np.all(self.class_tokens == last, axis=1))[0]
        if hits.size == 0:
            raise BadClassError("sequence does not end in a known class token")
        return self.outputs[hits[0]].copy()
