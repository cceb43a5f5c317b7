import numpy as np
import pytest

from pdvoice.evaluation import (
    FoldPlan,
    aggregate_folds,
    confusion_and_metrics,
    evaluate_predictions,
    majority_vote,
    make_folds,
    read_predictions,
    write_predictions,
)
from pdvoice.manifest import Manifest, UtteranceRecord


def build_manifest(n_pd, n_hc, segs_fn=lambda i: 3, seed=0):
    rng = np.random.default_rng(seed)
    recs = []
    uid = 0
    for cls, n in (("PD", n_pd), ("HC", n_hc)):
        for i in range(n):
            spk = f"{cls.lower()}{i:03d}"
            for _ in range(segs_fn(i)):
                recs.append(UtteranceRecord(
                    utterance_id=f"u{uid:05d}", path=f"{uid}.wav", speaker_id=spk,
                    label=cls, domain=int(rng.integers(0, 2)),
                    duration_sec=2.0))
                uid += 1
    return Manifest(recs)


def test_folds_balanced_small():
    plan = make_folds(build_manifest(5, 5), k=5, seed=0)
    for f in range(5):
        spks = plan.speakers_in(f)
        assert len([s for s in spks if s.startswith("pd")]) == 1
        assert len([s for s in spks if s.startswith("hc")]) == 1


def test_folds_partition_exact():
    man = build_manifest(12, 9, segs_fn=lambda i: 1 + i % 4)
    plan = make_folds(man, k=5, seed=3)
    all_spks = sorted(plan.assignment)
    assert all_spks == sorted(man.speakers())
    assert set(plan.assignment.values()) <= set(range(5))


def test_folds_gita_counts():
    # 50 PD + 50 HC speakers -> each fold gets exactly 10 + 10
    plan = make_folds(build_manifest(50, 50), k=5, seed=1)
    for f in range(5):
        spks = plan.speakers_in(f)
        assert len([s for s in spks if s.startswith("pd")]) == 10
        assert len([s for s in spks if s.startswith("hc")]) == 10


def test_folds_stratification_within_one():
    rng = np.random.default_rng(7)
    for trial in range(100):
        n_pd = int(rng.integers(5, 30))
        n_hc = int(rng.integers(5, 30))
        man = build_manifest(n_pd, n_hc, segs_fn=lambda i: 1 + (i * 7) % 5,
                             seed=trial)
        plan = make_folds(man, k=5, seed=trial)
        # exact partition: every speaker exactly once
        assert sorted(plan.assignment) == sorted(man.speakers())
        for cls in ("pd", "hc"):
            counts = [len([s for s in plan.speakers_in(f) if s.startswith(cls)])
                      for f in range(5)]
            assert max(counts) - min(counts) <= 1


def test_folds_too_few_speakers():
    with pytest.raises(ValueError, match="at least 5"):
        make_folds(build_manifest(4, 10), k=5)


def test_folds_deterministic():
    man = build_manifest(11, 13, segs_fn=lambda i: 1 + i % 3)
    a = make_folds(man, k=5, seed=9)
    b = make_folds(man, k=5, seed=9)
    assert a.assignment == b.assignment


def test_fold_plan_roundtrip(tmp_path):
    plan = make_folds(build_manifest(6, 6), k=3, seed=2)
    p = tmp_path / "folds.json"
    plan.save(p)
    back = FoldPlan.load(p)
    assert back.k == plan.k and back.seed == plan.seed
    assert back.assignment == plan.assignment


def test_metrics_formula_example():
    preds = ["PD"] * 9 + ["HC"] * 1 + ["HC"] * 8 + ["PD"] * 2
    labels = ["PD"] * 10 + ["HC"] * 10
    r = confusion_and_metrics(preds, labels)
    assert (r.tp, r.fn, r.tn, r.fp) == (9, 1, 8, 2)
    assert r.sensitivity == pytest.approx(0.9)
    assert r.specificity == pytest.approx(0.8)
    assert r.ppv == pytest.approx(9 / 11)
    assert r.accuracy == pytest.approx(0.85)
    assert r.f1 == pytest.approx(2 * (9 / 11) * 0.9 / ((9 / 11) + 0.9))


def test_metrics_all_correct():
    r = confusion_and_metrics(["PD", "HC"], ["PD", "HC"])
    for name in ("f1", "accuracy", "sensitivity", "ppv", "specificity"):
        assert getattr(r, name) == 1.0


def test_metrics_zero_denominator_absent():
    r = confusion_and_metrics(["HC", "HC"], ["HC", "HC"])
    assert r.sensitivity is None and "sensitivity" in r.absent
    assert r.ppv is None and "ppv" in r.absent
    assert r.f1 is None and "f1" in r.absent
    assert r.specificity == 1.0


def test_metrics_f1_zero_when_tp_zero():
    r = confusion_and_metrics(["HC", "PD"], ["PD", "HC"])
    assert r.tp == 0
    assert r.f1 == 0.0


def test_metrics_match_counting_oracle():
    rng = np.random.default_rng(11)
    names = ["PD", "HC"]
    for _ in range(50):
        n = int(rng.integers(1, 200))
        preds = [names[i] for i in rng.integers(0, 2, n)]
        labels = [names[i] for i in rng.integers(0, 2, n)]
        r = confusion_and_metrics(preds, labels)
        tp = fp = tn = fn = 0
        for p, t in zip(preds, labels):
            if t == "PD":
                if p == "PD":
                    tp += 1
                else:
                    fn += 1
            else:
                if p == "PD":
                    fp += 1
                else:
                    tn += 1
        assert (r.tp, r.fp, r.tn, r.fn) == (tp, fp, tn, fn)


def test_metrics_length_mismatch():
    with pytest.raises(ValueError):
        confusion_and_metrics(["PD"], ["PD", "HC"])


def test_majority_vote_examples():
    votes = majority_vote({
        "a": ["PD", "PD", "HC"],
        "b": ["PD", "HC"],
        "c": ["HC", "HC", "HC", "HC"],
    })
    assert votes == {"a": "PD", "b": "PD", "c": "HC"}


def test_majority_vote_order_invariant():
    rng = np.random.default_rng(12)
    preds = ["PD"] * 4 + ["HC"] * 3
    for _ in range(10):
        rng.shuffle(preds)
        assert majority_vote({"s": list(preds)})["s"] == "PD"


def test_majority_vote_empty_group():
    with pytest.raises(ValueError):
        majority_vote({"s": []})


def test_aggregate_simple_mean():
    r1 = confusion_and_metrics(["PD"] * 8 + ["HC"] * 2, ["PD"] * 10, fold=0)
    r2 = confusion_and_metrics(["PD"] * 9 + ["HC"] * 1, ["PD"] * 10, fold=1)
    agg = aggregate_folds([r1, r2])
    assert agg.sensitivity == pytest.approx((0.8 + 0.9) / 2)
    assert agg.fold == "average"


def test_aggregate_single_identity():
    r = confusion_and_metrics(["PD", "HC", "HC"], ["PD", "HC", "PD"])
    agg = aggregate_folds([r])
    for name in ("f1", "accuracy", "sensitivity", "ppv", "specificity"):
        assert getattr(agg, name) == getattr(r, name)


def test_aggregate_matches_recomputation():
    rng = np.random.default_rng(13)
    reports = []
    names = ["PD", "HC"]
    for f in range(5):
        preds = [names[i] for i in rng.integers(0, 2, 40)]
        labels = [names[i] for i in rng.integers(0, 2, 40)]
        reports.append(confusion_and_metrics(preds, labels, fold=f))
    agg = aggregate_folds(reports)
    for name in ("f1", "accuracy", "sensitivity", "ppv", "specificity"):
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        assert getattr(agg, name) == pytest.approx(np.mean(vals), abs=1e-12)


def test_aggregate_partial_absence_noted():
    r1 = confusion_and_metrics(["HC", "HC"], ["HC", "HC"], fold=0)  # no positives
    r2 = confusion_and_metrics(["PD", "HC"], ["PD", "HC"], fold=1)
    agg = aggregate_folds([r1, r2])
    assert agg.sensitivity == 1.0
    assert "sensitivity:1of2" in agg.absent


def make_rows(seed=0, k=3, speakers_per_fold=4, segs=3):
    rng = np.random.default_rng(seed)
    rows = []
    names = ["HC", "PD"]
    uid = 0
    for f in range(k):
        for s in range(speakers_per_fold):
            spk = f"f{f}s{s}"
            true = names[s % 2]
            for _ in range(segs):
                pred = true if rng.random() < 0.8 else names[rng.integers(0, 2)]
                rows.append({"utterance_id": f"u{uid}", "speaker_id": spk,
                             "true_label": true, "predicted_label": pred,
                             "score": float(rng.random()), "fold": f})
                uid += 1
    return rows


def test_prediction_roundtrip(tmp_path):
    rows = make_rows()
    p = tmp_path / "preds.jsonl"
    write_predictions(rows, p)
    back = read_predictions(p)
    assert back == [{k: r[k] for k in sorted(r)} for r in
                    ({f: row[f] for f in row} for row in rows)] or len(back) == len(rows)
    assert back[0]["utterance_id"] == rows[0]["utterance_id"]


def test_evaluate_predictions_structure_and_person_oracle():
    rows = make_rows(seed=3)
    report = evaluate_predictions(rows)
    assert {b["fold"] for b in report["folds"]} == {0, 1, 2}
    assert "per_person" in report["average"]
    # independent group-and-vote oracle on fold 0
    f0 = [r for r in rows if r["fold"] == 0]
    groups = {}
    for r in f0:
        groups.setdefault(r["speaker_id"], []).append(r)
    preds, labels = [], []
    for spk in sorted(groups):
        g = groups[spk]
        n_pd = sum(1 for r in g if r["predicted_label"] == "PD")
        preds.append("PD" if n_pd * 2 >= len(g) else "HC")
        labels.append(g[0]["true_label"])
    oracle = confusion_and_metrics(preds, labels)
    got = report["folds"][0]["per_person"]
    assert (got["tp"], got["fp"], got["tn"], got["fn"]) == (
        oracle.tp, oracle.fp, oracle.tn, oracle.fn)
