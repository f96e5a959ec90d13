"""Synthetic embedding worlds and the Monte-Carlo score-separation check.

A world consists of C exactly-orthonormal unit class directions (image
prototypes), text prototypes pulled toward one shared anchor direction by
an interpolation weight `gap` (larger gap = larger modality gap), ID
samples as unit-normalized Gaussian perturbations of their class
prototype, and OOD samples as unit-normalized perturbations of the class
centroid direction, drawn antithetically (+g/-g) so their mean cosine to
every class prototype matches to within sampling noise.

The verifier estimates, over independently seeded worlds,

    delta_mmp = E[S_mmp(ID) - S_mmp(OOD)]
    delta_mcm = E[S_mcm(ID) - S_mcm(OOD)]

and passes when delta_mmp >= delta_mcm - 2 * combined standard error.
Softmax temperature defaults to 1 here, matching the separation argument
(stated without a temperature); it is configurable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import BadConfigError
from .prototypes import PrototypeSet
from .rng import generator, subseed
from .scoring import ScoreConfig, mcm_batch, mmp_batch
from .store import EmbeddingSet


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 10
    dim: int = 64
    n_per_class_train: int = 16
    n_per_class_test: int = 200
    n_ood: int = 2000
    noise_scale: float = 0.15
    gap: float = 0.5
    seed: int = 1

    def __post_init__(self):
        if self.classes < 1 or self.dim < self.classes + 1:
            raise BadConfigError(
                f"need dim >= classes + 1 for a shared anchor, got C={self.classes}, d={self.dim}"
            )
        if min(self.n_per_class_train, self.n_per_class_test, self.n_ood) < 1:
            raise BadConfigError("sample counts must be positive")
        if not self.noise_scale > 0:
            raise BadConfigError("noise_scale must be positive")
        if not 0.0 <= self.gap <= 1.0:
            raise BadConfigError(f"gap must lie in [0, 1], got {self.gap}")


@dataclass(frozen=True)
class World:
    image_prototypes: PrototypeSet
    text_prototypes: PrototypeSet
    train: EmbeddingSet
    test: EmbeddingSet
    ood: EmbeddingSet
    cfg: SynthConfig


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    return mat / np.linalg.norm(mat, axis=1)[:, None]


def generate_world(cfg: SynthConfig) -> World:
    """Deterministic world for one seed; gap=0 makes both prototype sets
    bitwise identical (interpolation endpoint)."""
    rng = generator(cfg.seed, "synth-world")
    c, d = cfg.classes, cfg.dim

    # orthonormal basis: C class directions plus one anchor, exactly orthogonal
    basis, _ = np.linalg.qr(rng.standard_normal((d, c + 1)))
    raw = basis[:, :c].T.copy()
    anchor = basis[:, c]
    img_protos = _normalize_rows(raw)
    # interpolate from the raw columns: gap=0 repeats the exact same
    # computation as img_protos, so both sets are bitwise identical
    txt_protos = _normalize_rows((1.0 - cfg.gap) * raw + cfg.gap * anchor[None, :])

    class_names = tuple(f"class_{i}" for i in range(c))

    def id_samples(per_class: int) -> tuple[np.ndarray, np.ndarray]:
        rows = []
        for ci in range(c):
            noise = rng.standard_normal((per_class, d))
            rows.append(_normalize_rows(img_protos[ci] + cfg.noise_scale * noise))
        labels = np.repeat(np.arange(c), per_class)
        return np.vstack(rows), labels

    train_x, train_y = id_samples(cfg.n_per_class_train)
    test_x, test_y = id_samples(cfg.n_per_class_test)

    centroid = img_protos.mean(axis=0)
    centroid = centroid / np.linalg.norm(centroid)
    half = (cfg.n_ood + 1) // 2
    g = rng.standard_normal((half, d))
    sym = np.vstack([g, -g])[: cfg.n_ood]  # antithetic: symmetric about the centroid ray
    ood_x = _normalize_rows(centroid + cfg.noise_scale * sym)

    def as_set(x, labels=None):
        return EmbeddingSet(
            dim=d, class_names=class_names, modality="image",
            normalized=True, vectors=x, labels=labels,
        )

    return World(
        image_prototypes=PrototypeSet(
            modality="image", dim=d, class_names=class_names,
            vectors=img_protos, normalized=True,
        ),
        text_prototypes=PrototypeSet(
            modality="text", dim=d, class_names=class_names,
            vectors=txt_protos, normalized=True,
        ),
        train=as_set(train_x, train_y),
        test=as_set(test_x, test_y),
        ood=as_set(ood_x),
        cfg=cfg,
    )


@dataclass(frozen=True)
class AssumptionReport:
    """Margins and pass flags for the distributional assumptions:

    a2: modality gap direction - ID samples sit closer to their own image
        prototype than to their own text prototype (strict when gap > 0);
    a3: mean intra-class cosine exceeds mean inter-class cosine;
    a4: mean OOD cosine is equal across class prototypes (spread <= tol).
    """

    a2_margin: float
    a3_margin: float
    a4_spread: float
    a2_pass: bool
    a3_pass: bool
    a4_pass: bool

    @property
    def all_pass(self) -> bool:
        return self.a2_pass and self.a3_pass and self.a4_pass

    def to_dict(self) -> dict:
        return {
            "a2_margin": self.a2_margin, "a2_pass": self.a2_pass,
            "a3_margin": self.a3_margin, "a3_pass": self.a3_pass,
            "a4_spread": self.a4_spread, "a4_pass": self.a4_pass,
        }


A4_SPREAD_TOL = 0.05


def check_assumptions(world: World) -> AssumptionReport:
    x = world.test.vectors
    y = world.test.labels
    img = world.image_prototypes.vectors
    txt = world.text_prototypes.vectors

    # a2: cos(ID, own image prototype) vs cos(ID, own text prototype)
    own_img = np.einsum("nd,nd->n", x, img[y]).mean()
    own_txt = np.einsum("nd,nd->n", x, txt[y]).mean()
    a2_margin = float(own_img - own_txt)
    a2_pass = a2_margin > 0.0 if world.cfg.gap > 0 else abs(a2_margin) < 1e-9

    # a3: intra- vs inter-class mean pairwise cosine over ID samples
    gram = x @ x.T
    same = y[:, None] == y[None, :]
    off_diag = ~np.eye(len(y), dtype=bool)
    intra = gram[same & off_diag].mean()
    inter = gram[~same].mean()
    a3_margin = float(intra - inter)

    # a4: per-class mean OOD cosine spread
    per_class = (world.ood.vectors @ img.T).mean(axis=0)
    a4_spread = float(per_class.max() - per_class.min())

    return AssumptionReport(
        a2_margin=a2_margin,
        a3_margin=a3_margin,
        a4_spread=a4_spread,
        a2_pass=a2_pass,
        a3_pass=a3_margin > 0.0,
        a4_pass=a4_spread <= A4_SPREAD_TOL,
    )


@dataclass(frozen=True)
class TheoremReport:
    delta_mmp: float
    delta_mcm: float
    stderr_mmp: float
    stderr_mcm: float
    trials: int
    passed: bool
    assumptions_pass: bool
    assumption_margins: dict

    def to_dict(self) -> dict:
        return {
            "delta_mmp": self.delta_mmp,
            "delta_mcm": self.delta_mcm,
            "stderr_mmp": self.stderr_mmp,
            "stderr_mcm": self.stderr_mcm,
            "trials": self.trials,
            "pass": self.passed,
            "assumptions_pass": self.assumptions_pass,
            "assumption_margins": self.assumption_margins,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def verify_theorem(cfg: SynthConfig, trials: int = 20, tau: float = 1.0) -> TheoremReport:
    """Monte-Carlo estimate of the mmp-vs-mcm separation inequality."""
    if trials < 10:
        raise BadConfigError(f"need at least 10 trials, got {trials}")
    score_cfg = ScoreConfig(tau=tau)

    d_mmp = np.empty(trials)
    d_mcm = np.empty(trials)
    diags = []
    for t in range(trials):
        world = generate_world(replace(cfg, seed=subseed(cfg.seed, f"theorem-trial-{t}")))
        diags.append(check_assumptions(world))
        id_x, ood_x = world.test.vectors, world.ood.vectors
        txt, img = world.text_prototypes, world.image_prototypes
        d_mcm[t] = mcm_batch(id_x, txt, score_cfg).mean() - mcm_batch(ood_x, txt, score_cfg).mean()
        d_mmp[t] = (
            mmp_batch(id_x, txt, img, score_cfg).mean()
            - mmp_batch(ood_x, txt, img, score_cfg).mean()
        )
    failing = [diag for diag in diags if not diag.all_pass]
    reported = failing[0] if failing else diags[0]

    se_mmp = float(d_mmp.std(ddof=1) / np.sqrt(trials))
    se_mcm = float(d_mcm.std(ddof=1) / np.sqrt(trials))
    combined = float(np.hypot(se_mmp, se_mcm))
    delta_mmp = float(d_mmp.mean())
    delta_mcm = float(d_mcm.mean())
    return TheoremReport(
        delta_mmp=delta_mmp,
        delta_mcm=delta_mcm,
        stderr_mmp=se_mmp,
        stderr_mcm=se_mcm,
        trials=trials,
        passed=delta_mmp >= delta_mcm - 2.0 * combined,
        assumptions_pass=not failing,
        assumption_margins=reported.to_dict(),
    )
