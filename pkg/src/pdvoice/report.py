"""Evaluation reports: JSON, delimited metrics table, and rendered figures.

The JSON block is byte-stable for a fixed pipeline seed (sorted keys, no
timestamps), so whole-recipe reruns can be compared with a plain diff.
Figures are written as PNG files next to the CSV.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import METRIC_NAMES, evaluate_predictions  # noqa: E402

REPORT_SCHEMA = "pdvoice-report-v1"


def build_report(pred_rows: list[dict], config_hash: str, seed: int) -> dict:
    body = evaluate_predictions(pred_rows)
    body.update({
        "schema": REPORT_SCHEMA,
        "config_hash": config_hash,
        "seed": seed,
        "n_predictions": len(pred_rows),
        "n_speakers": len({r["speaker_id"] for r in pred_rows}),
    })
    return body


def write_report_json(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")


def load_report_json(path: str | Path) -> dict:
    report = json.loads(Path(path).read_text())
    if report.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"{path}: not a {REPORT_SCHEMA} report")
    return report


def write_metrics_csv(report: dict, path: str | Path) -> None:
    """One row per (scope, level): folds, average, pooled x segment, person."""
    rows = []

    def add(scope, level, block):
        rows.append({
            "scope": scope, "level": level,
            "tp": block["tp"], "fp": block["fp"],
            "tn": block["tn"], "fn": block["fn"],
            **{m: ("" if block[m] is None else f"{block[m]:.6f}")
               for m in METRIC_NAMES},
        })

    for fold_block in report["folds"]:
        for level in ("per_segment", "per_person"):
            add(f"fold{fold_block['fold']}", level[4:], fold_block[level])
    for scope in ("average", "pooled"):
        for level in ("per_segment", "per_person"):
            add(scope, level[4:], report[scope][level])

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def render_figures(report: dict, out_dir: str | Path,
                   curves: dict[str, list[dict]] | None = None) -> list[Path]:
    """Render per-fold metric bars, the pooled confusion matrix, and any
    training-loss curves; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    # per-person metrics by fold
    folds = [b["fold"] for b in report["folds"]]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    width = 0.8 / len(METRIC_NAMES)
    for j, metric in enumerate(METRIC_NAMES):
        vals = [b["per_person"][metric] for b in report["folds"]]
        xs = [i + j * width for i in range(len(folds))]
        ax.bar(xs, [0.0 if v is None else v for v in vals], width=width,
               label=metric)
    ax.set_xticks([i + 0.4 for i in range(len(folds))])
    ax.set_xticklabels([f"fold {f}" for f in folds])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("per-person value")
    ax.set_title("Per-person metrics by fold")
    ax.legend(fontsize=8, ncol=5, loc="lower right")
    fig.tight_layout()
    p = out_dir / "metrics_per_person.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    # pooled person-level confusion matrix
    block = report["pooled"]["per_person"]
    mat = [[block["tp"], block["fn"]], [block["fp"], block["tn"]]]
    fig, ax = plt.subplots(figsize=(4, 3.5))
    im = ax.imshow(mat, cmap="Blues")
    for i in range(2):
        for j in range(2):
            ax.text(j, i, str(mat[i][j]), ha="center", va="center")
    ax.set_xticks([0, 1], ["pred PD", "pred HC"])
    ax.set_yticks([0, 1], ["true PD", "true HC"])
    ax.set_title("Pooled per-person confusion")
    fig.colorbar(im, shrink=0.8)
    fig.tight_layout()
    p = out_dir / "confusion_pooled.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    for name, curve in (curves or {}).items():
        rows = [r for r in curve if r.get("epoch") is not None]
        fig, ax = plt.subplots(figsize=(6, 4))
        plotted = False
        for key in ("train_loss", "holdout_loss", "l_pd", "l_domain", "l_dat"):
            series = [(r["epoch"], r[key]) for r in rows
                      if r.get(key) is not None]
            if series:
                ax.plot([s[0] for s in series], [s[1] for s in series],
                        marker="o", markersize=3, label=key)
                plotted = True
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title(name)
        if plotted:
            ax.legend(fontsize=8)
        fig.tight_layout()
        p = out_dir / f"curve_{name}.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)
    return written
