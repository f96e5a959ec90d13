"""Figure rendering for the CLI report paths.

Written next to the delimited outputs: an ECDF overlay with the KS gap,
a ROC curve with the operating point, and training loss curves. PNG
output is byte-deterministic (fixed metadata, no timestamps), which the
CLI determinism contract relies on.
"""

from __future__ import annotations

import numpy as np

from .metrics import EvalReport, ecdf

_SAVEFIG = dict(dpi=150, metadata={"Software": None})


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _step_xy(scores) -> tuple[np.ndarray, np.ndarray]:
    vals, fracs = ecdf(scores)
    # prepend a zero-mass point so the staircase starts on the axis
    x = np.concatenate(([vals[0]], vals))
    y = np.concatenate(([0.0], fracs))
    return x, y


def render_ecdf(id_scores, ood_scores, report: EvalReport, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    for scores, label, color in (
        (id_scores, "ID", "tab:blue"),
        (ood_scores, "OOD", "tab:red"),
    ):
        x, y = _step_xy(scores)
        ax.step(x, y, where="post", label=label, color=color)
    ax.axvline(report.threshold_used, color="gray", ls=":", lw=1,
               label=f"threshold {report.threshold_used:.4g}")
    ax.set_xlabel("score")
    ax.set_ylabel("empirical CDF")
    ax.set_title(f"KS = {report.ks:.4f}")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def render_roc(id_scores, ood_scores, report: EvalReport, path) -> None:
    ids = np.asarray(id_scores, dtype=np.float64)
    oods = np.asarray(ood_scores, dtype=np.float64)
    thresholds = np.unique(np.concatenate([ids, oods]))[::-1]
    tpr = [np.count_nonzero(ids >= t) / ids.size for t in thresholds]
    fpr = [np.count_nonzero(oods >= t) / oods.size for t in thresholds]
    tpr = np.concatenate(([0.0], tpr, [1.0]))
    fpr = np.concatenate(([0.0], fpr, [1.0]))

    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    ax.plot(fpr, tpr, color="tab:blue", lw=1.5)
    ax.plot([0, 1], [0, 1], color="gray", ls=":", lw=1)
    ax.plot([report.fpr95], [min(1.0, 0.95)], "o", color="tab:red", ms=5,
            label=f"FPR@95 = {report.fpr95:.4f}")
    ax.set_xlabel("false positive rate (OOD kept)")
    ax.set_ylabel("true positive rate (ID kept)")
    ax.set_title(f"AUROC = {report.auroc:.4f}")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def render_loss_curves(history, path) -> None:
    plt = _pyplot()
    epochs = np.arange(1, len(history) + 1)
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    series = (
        ("total", [h.total for h in history]),
        ("l_id", [h.l_id for h in history]),
        ("l_inter", [h.l_inter for h in history]),
        ("l_intra", [h.l_intra for h in history]),
        ("l_bias", [h.l_bias for h in history]),
    )
    for label, values in series:
        ax.plot(epochs, values, label=label, lw=1.3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="best", ncols=2, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)
