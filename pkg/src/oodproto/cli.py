"""Command-line interface.

Subcommands: gen, prototypes, score, eval, train, verify-theorem,
gradcheck, gap. A single JSON config file supplies defaults; flags win.
All randomness flows from one seed through named substreams (see rng).

Exit codes: 0 success/pass, 1 assertion fail (theorem or gradcheck),
2 usage/config error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .encoder import ClassTokenTable, FrozenTextEncoder
from .errors import BadConfigError, EngineError, MissingInputError
from .gradcheck import DEFAULT_TOL, build_instance, max_relative_error
from .metrics import ecdf_export, evaluate, modality_gap_norm, top1_accuracy
from .prototypes import PrototypeSet, compute_image_prototypes
from .scoring import (
    SCORE_KINDS,
    ScoreConfig,
    ScoreReport,
    gmp_batch,
    mcm_batch,
    mmp_batch,
    predict_batch,
    read_scores_csv,
    write_scores_csv,
)
from .store import load_embedding_set, save_embedding_set
from .synth import SynthConfig, generate_world, verify_theorem
from .tuner import (
    TrainConfig,
    load_model,
    save_model,
    score_with_model,
    train,
)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_IO = 3


@dataclass(frozen=True)
class EncoderConfig:
    n_lm: int = 64
    hidden: int | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    train: TrainConfig = TrainConfig()
    synth: SynthConfig = SynthConfig()
    score: ScoreConfig = ScoreConfig()
    encoder: EncoderConfig = EncoderConfig()


_SECTIONS = {"train": TrainConfig, "synth": SynthConfig, "score": ScoreConfig,
             "encoder": EncoderConfig}


def load_run_config(path: str | None, seed_override: int | None = None) -> RunConfig:
    """Parse the JSON config; unknown keys anywhere are rejected."""
    raw = {}
    if path is not None:
        with open(path) as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise BadConfigError(f"{path}: not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise BadConfigError(f"{path}: config must be a JSON object")

    known = set(_SECTIONS) | {"seed"}
    unknown = set(raw) - known
    if unknown:
        raise BadConfigError(f"unknown config keys: {sorted(unknown)}")

    seed = int(raw.get("seed", 0))
    if seed_override is not None:
        seed = seed_override

    sections = {}
    for name, cls in _SECTIONS.items():
        body = raw.get(name, {})
        if not isinstance(body, dict):
            raise BadConfigError(f"config section {name!r} must be an object")
        allowed = {f.name for f in fields(cls)} - {"seed"}
        bad = set(body) - allowed
        if bad:
            raise BadConfigError(f"unknown keys in config section {name!r}: {sorted(bad)}")
        kwargs = dict(body)
        if "seed" in {f.name for f in fields(cls)}:
            kwargs["seed"] = seed
        sections[name] = cls(**kwargs)
    return RunConfig(seed=seed, **sections)


def _require_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {path}")
    return p


def _load_protos(path: str, expected_modality: str | None = None) -> PrototypeSet:
    protos = PrototypeSet.from_embedding_set(load_embedding_set(path))
    if expected_modality and protos.modality != expected_modality:
        raise BadConfigError(
            f"{path}: expected {expected_modality} prototypes, got {protos.modality}"
        )
    return protos


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(args) -> int:
    run = load_run_config(args.config, args.seed)
    out = _require_dir(args.out_dir)
    world = generate_world(run.synth)
    outputs = {
        "train.oodemb": world.train,
        "test.oodemb": world.test,
        "ood.oodemb": world.ood,
        "prototypes_image.oodemb": world.image_prototypes.to_embedding_set(),
        "prototypes_text.oodemb": world.text_prototypes.to_embedding_set(),
    }
    for name, dataset in outputs.items():
        save_embedding_set(dataset, out / name)
    print(f"wrote {len(outputs)} files to {out} "
          f"(C={run.synth.classes}, d={run.synth.dim}, seed={run.synth.seed})")
    return EXIT_OK


def cmd_prototypes(args) -> int:
    base = load_embedding_set(args.embeddings)
    protos = compute_image_prototypes(base, normalize_output=not args.no_normalize)
    save_embedding_set(protos.to_embedding_set(), args.out)
    print(f"wrote {protos.class_count} prototypes to {args.out}")
    return EXIT_OK


def cmd_score(args) -> int:
    run = load_run_config(args.config, args.seed)
    tau = args.tau if args.tau is not None else run.score.tau
    cfg = ScoreConfig(tau=tau)
    emb = load_embedding_set(args.embeddings)
    kind = args.kind

    if args.model:
        model = load_model(args.model)
        image_protos = None
        if kind in ("mmp", "gmp"):
            if not args.image_protos:
                raise MissingInputError(f"score kind {kind!r} needs --image-protos")
            image_protos = _load_protos(args.image_protos, "image")
        conditioning = None
        if args.conditioning_mean:
            conditioning = load_embedding_set(args.conditioning_mean).vectors.mean(axis=0)
        scores, predicted = score_with_model(
            model, emb.vectors, kind, image_protos, cfg, conditioning
        )
    else:
        if not args.text_protos:
            raise MissingInputError("--text-protos is required without --model")
        txt = _load_protos(args.text_protos)
        if kind == "mcm":
            scores = mcm_batch(emb.vectors, txt, cfg)
        elif kind == "mmp":
            if not args.image_protos:
                raise MissingInputError("score kind 'mmp' needs --image-protos")
            img = _load_protos(args.image_protos, "image")
            scores = mmp_batch(emb.vectors, txt, img, cfg)
        elif kind == "gmp":
            if not args.image_protos:
                raise MissingInputError("score kind 'gmp' needs --image-protos")
            if not args.mapped:
                raise MissingInputError(
                    "score kind 'gmp' needs --model or an explicit --mapped embedding file"
                )
            img = _load_protos(args.image_protos, "image")
            mapped = load_embedding_set(args.mapped)
            if len(mapped) != len(emb):
                raise BadConfigError("--mapped must align row-wise with --embeddings")
            scores = gmp_batch(emb.vectors, mapped.vectors, txt, img, cfg)
        else:  # pragma: no cover - argparse restricts choices
            raise BadConfigError(f"unknown score kind {kind!r}")
        predicted = predict_batch(emb.vectors, txt)

    report = ScoreReport(kind=kind, ids=emb.ids, scores=scores, predicted=predicted)
    write_scores_csv(report, args.out)
    print(f"wrote {len(emb)} {kind} scores to {args.out}")
    return EXIT_OK


def _read_predictions(path) -> np.ndarray | None:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or "predicted_class" not in rows[0]:
        return None
    col = rows[0].index("predicted_class")
    return np.array([int(r[col]) for r in rows[1:] if r], dtype=np.int64)


def cmd_eval(args) -> int:
    out = _require_dir(args.out_dir)
    id_scores = read_scores_csv(args.id_scores)
    ood_scores = read_scores_csv(args.ood_scores)

    top1 = None
    if args.id_embeddings:
        predicted = _read_predictions(args.id_scores)
        if predicted is None:
            raise BadConfigError(
                f"{args.id_scores}: no predicted_class column, cannot compute top-1"
            )
        labels = load_embedding_set(args.id_embeddings).labels
        if labels.size != predicted.size:
            raise BadConfigError("--id-embeddings row count differs from id scores")
        top1 = top1_accuracy(predicted, labels)

    report = evaluate(id_scores, ood_scores, tpr_level=args.tpr)
    report.top1 = top1

    (out / "report.json").write_text(report.to_json())
    ecdf_export(id_scores, out / "ecdf_id.csv")
    ecdf_export(ood_scores, out / "ecdf_ood.csv")

    from .report import render_ecdf, render_roc

    render_ecdf(id_scores, ood_scores, report, out / "ecdf.png")
    render_roc(id_scores, ood_scores, report, out / "roc.png")

    sys.stdout.write(report.to_json())
    return EXIT_OK


def cmd_train(args) -> int:
    run = load_run_config(args.config, args.seed)
    out = _require_dir(args.out_dir)
    dataset = load_embedding_set(args.embeddings)
    encoder = FrozenTextEncoder(
        seed=run.seed, n_lm=run.encoder.n_lm, d_out=dataset.dim, hidden=run.encoder.hidden
    )
    tokens = ClassTokenTable(
        seed=run.seed, class_count=dataset.class_count, n_lm=run.encoder.n_lm
    )
    model, history = train(dataset, encoder, tokens, run.train)
    for i, h in enumerate(history):
        print(
            f"epoch {i + 1}/{run.train.epochs} "
            f"l_id={h.l_id:.6f} l_inter={h.l_inter:.6f} l_intra={h.l_intra:.6f} "
            f"l_bias={h.l_bias:.6f} total={h.total:.6f}"
        )

    save_model(model, out / "model.oodmod")
    with open(out / "loss_history.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "l_id", "l_inter", "l_intra", "l_bias", "total"])
        for i, h in enumerate(history):
            w.writerow([i + 1, repr(h.l_id), repr(h.l_inter), repr(h.l_intra),
                        repr(h.l_bias), repr(h.total)])

    from .report import render_loss_curves

    if history:
        render_loss_curves(history, out / "loss_curves.png")
    print(f"wrote model and loss history to {out}")
    return EXIT_OK


def cmd_verify_theorem(args) -> int:
    run = load_run_config(args.config, args.seed)
    report = verify_theorem(run.synth, trials=args.trials, tau=args.tau)
    payload = report.to_json()
    if args.out:
        Path(args.out).write_text(payload)
    sys.stdout.write(payload)
    return EXIT_OK if (report.passed and report.assumptions_pass) else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    inst = build_instance(
        seed=args.seed if args.seed is not None else 7,
        dim=args.dim,
        classes=args.classes,
        context_length=args.context_length,
        n_lm=args.n_lm,
        batch=args.batch,
    )
    worst, per_group = max_relative_error(inst)
    for name, err in sorted(per_group.items()):
        print(f"{name:8s} max relative error {err:.3e}")
    print(f"overall  max relative error {worst:.3e} (tolerance {args.tol:.1e})")
    return EXIT_OK if worst <= args.tol else EXIT_FAIL


def cmd_gap(args) -> int:
    a = load_embedding_set(args.file_a)
    b = load_embedding_set(args.file_b)
    gap = modality_gap_norm(a.vectors, b.vectors)
    payload = json.dumps({"gap_norm": gap}, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(payload)
    sys.stdout.write(payload)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodproto",
        description="Multi-modal prototype OOD detection over embedding vectors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON run config; flags override it")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("gen", help="generate a synthetic embedding world")
    add_common(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("prototypes", help="average labeled image embeddings per class")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-normalize", action="store_true",
                   help="keep raw class means instead of unit-normalizing them")
    p.set_defaults(func=cmd_prototypes)

    p = sub.add_parser("score", help="write per-record detection scores as CSV")
    add_common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--kind", required=True, choices=SCORE_KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("--text-protos")
    p.add_argument("--image-protos")
    p.add_argument("--model", help="trained model file; supplies text prototypes and the map")
    p.add_argument("--mapped", help="pre-mapped embeddings (gmp without a model)")
    p.add_argument("--conditioning-mean",
                   help="embedding file whose mean conditions the prompts for all records")
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="evaluate ID vs OOD score files")
    p.add_argument("--id-scores", required=True)
    p.add_argument("--ood-scores", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--id-embeddings", help="labeled set for top-1 accuracy")
    p.add_argument("--tpr", type=float, default=0.95)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="run few-shot prompt tuning")
    add_common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify-theorem", help="Monte-Carlo score-separation check")
    add_common(p)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--out", help="write the report JSON here as well")
    p.set_defaults(func=cmd_verify_theorem)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--context-length", type=int, default=2)
    p.add_argument("--n-lm", type=int, default=8)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gap", help="centroid distance between two embedding files")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EngineError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
