"""Speaker-disjoint stratified cross-validation and confusion metrics.

Speakers are the stratification unit: per class they are dealt round-robin
into folds (largest segment counts first, fold pointer continuing across
classes), so no speaker ever spans folds and per-fold class counts stay
within one of perfect balance. Metrics with a zero denominator are reported
as absent rather than silently zero. Vote and prediction ties resolve to PD.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .manifest import Manifest

METRIC_NAMES = ("f1", "accuracy", "sensitivity", "ppv", "specificity")


@dataclass
class FoldPlan:
    k: int
    assignment: dict[str, int]
    seed: int = 0

    def fold_of(self, speaker_id: str) -> int:
        return self.assignment[speaker_id]

    def speakers_in(self, fold: int) -> list[str]:
        return sorted(s for s, f in self.assignment.items() if f == fold)

    def save(self, path: str | Path) -> None:
        body = {"k": self.k, "seed": self.seed,
                "assignment": dict(sorted(self.assignment.items()))}
        Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FoldPlan":
        body = json.loads(Path(path).read_text())
        return cls(k=body["k"], assignment=body["assignment"], seed=body["seed"])


def make_folds(manifest: Manifest, k: int = 5, seed: int = 0) -> FoldPlan:
    """Assign every labeled speaker to exactly one of k folds."""
    labeled = manifest.labeled()
    seg_counts: dict[str, int] = {}
    speaker_class: dict[str, str] = {}
    for rec in labeled:
        seg_counts[rec.speaker_id] = seg_counts.get(rec.speaker_id, 0) + 1
        prev = speaker_class.setdefault(rec.speaker_id, rec.label)
        if prev != rec.label:
            raise ValueError(f"speaker {rec.speaker_id!r} has inconsistent labels")

    by_class: dict[str, list[str]] = {"PD": [], "HC": []}
    for spk, cls in speaker_class.items():
        by_class[cls].append(spk)
    for cls, spks in by_class.items():
        if len(spks) < k:
            raise ValueError(f"need at least {k} {cls} speakers, got {len(spks)}")

    rng = np.random.default_rng(seed)
    assignment: dict[str, int] = {}
    pointer = 0
    for cls in ("PD", "HC"):
        spks = sorted(by_class[cls])
        order = [spks[i] for i in rng.permutation(len(spks))]
        order.sort(key=lambda s: -seg_counts[s])  # stable: shuffle breaks ties
        for spk in order:
            assignment[spk] = pointer % k
            pointer += 1
    return FoldPlan(k=k, assignment=assignment, seed=seed)


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    f1: float | None
    accuracy: float | None
    sensitivity: float | None
    ppv: float | None
    specificity: float | None
    absent: list[str] = field(default_factory=list)
    fold: int | str = 0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "f1": self.f1, "accuracy": self.accuracy,
            "sensitivity": self.sensitivity, "ppv": self.ppv,
            "specificity": self.specificity,
            "absent": sorted(self.absent), "fold": self.fold,
        }


def confusion_and_metrics(preds, labels, fold: int | str = 0) -> MetricsReport:
    """Confusion counts and the five metrics; PD is the positive class."""
    preds = list(preds)
    labels = list(labels)
    if len(preds) != len(labels):
        raise ValueError("prediction/label length mismatch")
    tp = sum(1 for p, t in zip(preds, labels) if p == "PD" and t == "PD")
    fp = sum(1 for p, t in zip(preds, labels) if p == "PD" and t == "HC")
    tn = sum(1 for p, t in zip(preds, labels) if p == "HC" and t == "HC")
    fn = sum(1 for p, t in zip(preds, labels) if p == "HC" and t == "PD")

    absent = []

    def ratio(num, den, name):
        if den == 0:
            absent.append(name)
            return None
        return num / den

    se = ratio(tp, tp + fn, "sensitivity")
    sp = ratio(tn, tn + fp, "specificity")
    ppv = ratio(tp, tp + fp, "ppv")
    acc = ratio(tp + tn, tp + tn + fp + fn, "accuracy")
    f1 = ratio(2 * tp, 2 * tp + fp + fn, "f1")
    return MetricsReport(tp=tp, fp=fp, tn=tn, fn=fn, f1=f1, accuracy=acc,
                         sensitivity=se, ppv=ppv, specificity=sp,
                         absent=absent, fold=fold)


def majority_vote(segment_preds: dict[str, list[str]]) -> dict[str, str]:
    """Per-speaker modal class; exact ties resolve to PD."""
    out = {}
    for spk, preds in segment_preds.items():
        if not preds:
            raise ValueError(f"speaker {spk!r} has no segment predictions")
        n_pd = sum(1 for p in preds if p == "PD")
        out[spk] = "PD" if n_pd >= len(preds) - n_pd else "HC"
    return out


def aggregate_folds(reports: list[MetricsReport]) -> MetricsReport:
    """Unweighted mean of each metric across folds; a metric absent in some
    folds is averaged over the folds where it exists (count retained in
    absent as e.g. 'ppv:3of5'). Confusion counts are summed for reference."""
    if not reports:
        raise ValueError("no fold reports to aggregate")
    agg = {}
    absent = []
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if not vals:
            agg[name] = None
            absent.append(name)
        else:
            agg[name] = float(np.mean(vals))
            if len(vals) < len(reports):
                absent.append(f"{name}:{len(vals)}of{len(reports)}")
    return MetricsReport(
        tp=sum(r.tp for r in reports), fp=sum(r.fp for r in reports),
        tn=sum(r.tn for r in reports), fn=sum(r.fn for r in reports),
        f1=agg["f1"], accuracy=agg["accuracy"], sensitivity=agg["sensitivity"],
        ppv=agg["ppv"], specificity=agg["specificity"],
        absent=absent, fold="average",
    )


# -- Prediction files and full evaluation --------------------------------------

PREDICTION_FIELDS = ("utterance_id", "speaker_id", "true_label",
                     "predicted_label", "score", "fold")


def write_predictions(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps({k: r[k] for k in PREDICTION_FIELDS},
                                sort_keys=True) + "\n")


def read_predictions(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            r = json.loads(line)
            missing = [k for k in PREDICTION_FIELDS if k not in r]
            if missing:
                raise ValueError(f"{path}:{i + 1}: prediction row missing {missing}")
            rows.append(r)
    return rows


def evaluate_predictions(rows: list[dict]) -> dict:
    """Per-fold, averaged, and pooled metric blocks at segment and person
    level from prediction rows."""
    if not rows:
        raise ValueError("no predictions to evaluate")
    folds = sorted({r["fold"] for r in rows})
    per_fold = []
    seg_reports, person_reports = [], []
    for f in folds:
        frows = [r for r in rows if r["fold"] == f]
        seg = confusion_and_metrics([r["predicted_label"] for r in frows],
                                    [r["true_label"] for r in frows], fold=f)
        by_spk: dict[str, list[str]] = {}
        truth: dict[str, str] = {}
        for r in frows:
            by_spk.setdefault(r["speaker_id"], []).append(r["predicted_label"])
            truth[r["speaker_id"]] = r["true_label"]
        votes = majority_vote(by_spk)
        spks = sorted(votes)
        person = confusion_and_metrics([votes[s] for s in spks],
                                       [truth[s] for s in spks], fold=f)
        seg_reports.append(seg)
        person_reports.append(person)
        per_fold.append({"fold": f, "per_segment": seg.to_dict(),
                         "per_person": person.to_dict()})

    pooled_seg = confusion_and_metrics([r["predicted_label"] for r in rows],
                                       [r["true_label"] for r in rows], fold="pooled")
    by_spk_all: dict[str, list[str]] = {}
    truth_all: dict[str, str] = {}
    for r in rows:
        by_spk_all.setdefault(r["speaker_id"], []).append(r["predicted_label"])
        truth_all[r["speaker_id"]] = r["true_label"]
    votes_all = majority_vote(by_spk_all)
    spks_all = sorted(votes_all)
    pooled_person = confusion_and_metrics([votes_all[s] for s in spks_all],
                                          [truth_all[s] for s in spks_all],
                                          fold="pooled")
    return {
        "folds": per_fold,
        "average": {
            "per_segment": aggregate_folds(seg_reports).to_dict(),
            "per_person": aggregate_folds(person_reports).to_dict(),
        },
        "pooled": {
            "per_segment": pooled_seg.to_dict(),
            "per_person": pooled_person.to_dict(),
        },
    }
