"""Command-line pipeline driver.

Each subcommand reads the TOML config plus its input artifacts, writes its
output artifact with a provenance sidecar (config hash, seeds, input
checksums), and exits nonzero with a single machine-readable error line on
failure. Stages are files in a work directory, so any stage can be rerun or
inspected in isolation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .audio import AudioError, load_wav, remove_silence, resample, save_wav
from .baselines import Dictionary, lsrc_classify, svm_decision, svm_predict, svm_train
from .cluster import ClusterModel, kmeans_fit, refit_from_encoder
from .config import ConfigError
from .encoder import SpeechEncoder, dapt_train, load_encoder, save_encoder
from .evaluation import FoldPlan, make_folds, read_predictions, write_predictions
from .features import load_features, mfcc, mfcc_config_hash, save_features
from .heads import (
    LABEL_TO_ID,
    AdaptHeads,
    FinetuneExample,
    finetune,
    load_finetuned,
    predict_segments,
    save_finetuned,
)
from .manifest import Manifest, UtteranceRecord, file_sha256
from .report import build_report, load_report_json, render_figures, write_metrics_csv, write_report_json
from .synth import generate


class CliError(Exception):
    def __init__(self, error_class: str, message: str):
        super().__init__(message)
        self.error_class = error_class


def _work(args) -> Path:
    return Path(args.work or os.environ.get("PDVOICE_DATA_DIR", "work"))


def _resolve(args, attr: str, default: Path) -> Path:
    val = getattr(args, attr, None)
    return Path(val) if val else default


def _load_cfg(args) -> tuple[dict, str]:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise CliError("usage-error", f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    cfg = cfgmod.load_config(args.config, overrides)
    return cfg, cfgmod.config_hash(cfg)


def _sidecar(artifact: Path, cfg_hash: str, seed, inputs: list[Path],
             command: str, extra: dict | None = None) -> None:
    prov = {
        "command": command,
        "config_hash": cfg_hash,
        "seed": seed,
        "inputs": {str(p): file_sha256(p) for p in inputs if Path(p).is_file()},
    }
    prov.update(extra or {})
    Path(str(artifact) + ".prov.json").write_text(
        json.dumps(prov, sort_keys=True, indent=2) + "\n")


def _sidecar_hash(artifact: Path) -> str | None:
    p = Path(str(artifact) + ".prov.json")
    if not p.is_file():
        return None
    return json.loads(p.read_text()).get("config_hash")


def _load_manifest(path: Path) -> Manifest:
    if not Path(path).is_file():
        raise CliError("io-error", f"manifest not found: {path}")
    try:
        return Manifest.load(path)
    except ValueError as e:
        raise CliError("data-error", str(e)) from e


def _feature_values(manifest: Manifest, feat_dir: Path) -> dict[str, np.ndarray]:
    out = {}
    for rec in manifest:
        p = Path(feat_dir) / f"{rec.utterance_id}.feat"
        if not p.is_file():
            raise CliError("io-error", f"missing feature file {p}; run `mfcc` first")
        mat, _ = load_features(p)
        out[rec.utterance_id] = mat.values
    return out


def _examples(manifest: Manifest, feats: dict[str, np.ndarray],
              records=None) -> list[FinetuneExample]:
    out = []
    for rec in records if records is not None else manifest:
        out.append(FinetuneExample(
            feats=feats[rec.utterance_id], label=LABEL_TO_ID.get(rec.label, -1),
            domain=rec.domain, speaker_id=rec.speaker_id,
            utterance_id=rec.utterance_id))
    return out


# -- subcommand handlers -------------------------------------------------------

def cmd_synth(args) -> int:
    cfg, h = _load_cfg(args)
    out = _resolve(args, "out", _work(args) / "corpus")
    scfg = cfgmod.synth_config(cfg)
    manifest = generate(scfg, out)
    _sidecar(out / "manifest.jsonl", h, scfg.seed, [], "synth",
             {"rows": len(manifest)})
    print(f"synth: wrote {len(manifest)} utterances under {out}")
    return 0


def _prep_one(task):
    src, dst, silence_kwargs = task
    from .audio import SilenceConfig

    clip = load_wav(src)
    clip = resample(clip, 16000)
    res = remove_silence(clip, SilenceConfig(**silence_kwargs))
    if not res.fully_silent:
        save_wav(res.clip, dst)
    return len(res.clip.samples), res.fully_silent


def cmd_prep(args) -> int:
    cfg, h = _load_cfg(args)
    man = _load_manifest(_resolve(args, "manifest", _work(args) / "corpus" / "manifest.jsonl"))
    out = _resolve(args, "out", _work(args) / "prep")
    wav_dir = out / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    tasks = []
    for rec in man:
        tasks.append((rec.path, str(wav_dir / f"{rec.utterance_id}.wav"),
                      cfg["silence"]))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_prep_one, tasks))
    else:
        results = [_prep_one(t) for t in tasks]

    kept = Manifest()
    dropped = 0
    for rec, (n_samples, silent), task in zip(man, results, tasks):
        if silent:
            dropped += 1
            continue
        kept.append(UtteranceRecord(
            utterance_id=rec.utterance_id, path=task[1], speaker_id=rec.speaker_id,
            label=rec.label, domain=rec.domain, duration_sec=n_samples / 16000.0))
    kept.save(out / "manifest.jsonl")
    _sidecar(out / "manifest.jsonl", h, None, [], "prep",
             {"rows": len(kept), "dropped_fully_silent": dropped})
    print(f"prep: kept {len(kept)} utterances ({dropped} fully silent) under {out}")
    return 0


def cmd_mfcc(args) -> int:
    cfg, h = _load_cfg(args)
    man = _load_manifest(_resolve(args, "manifest", _work(args) / "prep" / "manifest.jsonl"))
    out = _resolve(args, "out", _work(args) / "features")
    out.mkdir(parents=True, exist_ok=True)
    mcfg = cfgmod.mfcc_config(cfg)
    fh = mfcc_config_hash(mcfg)
    for rec in man:
        clip = load_wav(rec.path)
        try:
            mat = mfcc(clip, mcfg)
        except ValueError as e:
            raise CliError("data-error", f"{rec.utterance_id}: {e}") from e
        save_features(mat, out / f"{rec.utterance_id}.feat", config_hash=fh)
    _sidecar(out / "manifest.jsonl", h, None, [], "mfcc", {"rows": len(man)})
    man.save(out / "manifest.jsonl")
    print(f"mfcc: wrote {len(man)} feature files under {out}")
    return 0


def cmd_pseudolabel(args) -> int:
    cfg, h = _load_cfg(args)
    man = _load_manifest(_resolve(args, "manifest", _work(args) / "prep" / "manifest.jsonl"))
    feat_dir = _resolve(args, "features", _work(args) / "features")
    feats = _feature_values(man, feat_dir)
    sub = cfg["cluster"]["frame_subsample"]
    seed = cfg["cluster"]["seed"]
    out = _resolve(args, "out",
                   _work(args) / "labels" / f"stage{args.stage}.cm")
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        if args.stage == 1:
            pool = np.concatenate([v[::sub] for v in feats.values()])
            model = kmeans_fit(pool, cfg["cluster"]["stage1_k"],
                               max_iters=cfg["cluster"]["max_iters"], seed=seed)
            model.feature_space = "mfcc"
        else:
            ckpt = _resolve(args, "checkpoint", _work(args) / "checkpoints" / "dapt.ckpt")
            if not ckpt.is_file():
                raise CliError("io-error", f"stage 2 needs an encoder checkpoint: {ckpt}")
            encoder, _ = load_encoder(ckpt)
            model = refit_from_encoder(
                encoder, list(feats.values()), layer=cfgmod.stage2_layer(cfg),
                k=cfg["cluster"]["stage2_k"], seed=seed,
                max_iters=cfg["cluster"]["max_iters"], frame_subsample=sub)
    except ValueError as e:
        raise CliError("data-error", str(e)) from e
    model.save(out)
    _sidecar(out, h, seed, [feat_dir / "manifest.jsonl"], "pseudolabel",
             {"stage": args.stage, "k": model.k})
    print(f"pseudolabel: stage {args.stage} model with k={model.k} -> {out}")
    return 0


def cmd_dapt(args) -> int:
    cfg, h = _load_cfg(args)
    man = _load_manifest(_resolve(args, "manifest", _work(args) / "prep" / "manifest.jsonl"))
    feats = _feature_values(man, _resolve(args, "features", _work(args) / "features"))
    labels_path = _resolve(args, "labels", _work(args) / "labels" / "stage1.cm")
    if not labels_path.is_file():
        raise CliError("io-error", f"cluster model not found: {labels_path}")
    cluster_model = ClusterModel.load(labels_path)

    ecfg = cfgmod.encoder_config(cfg)
    ecfg.num_clusters = cluster_model.k
    tcfg = cfgmod.train_config(cfg, "dapt")
    encoder = SpeechEncoder(ecfg, seed=tcfg.seed)
    mats = [feats[r.utterance_id] for r in man]
    try:
        curve = dapt_train(encoder, mats, cluster_model, tcfg,
                           spec=cfgmod.mask_spec(cfg),
                           holdout_fraction=cfg["train"]["dapt"]["holdout_fraction"],
                           progress=lambda row: print(
                               f"dapt epoch {row['epoch']}: train "
                               f"{row['train_loss']:.4f} holdout {row['holdout_loss']:.4f}"))
    except (ValueError, FloatingPointError) as e:
        raise CliError("data-error", str(e)) from e

    out = _resolve(args, "out", _work(args) / "checkpoints" / "dapt.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_encoder(out, encoder, {"phase": "dapt", "config_hash": h,
                                "train_seed": tcfg.seed})
    curve_path = _resolve(args, "curve", out.parent / "dapt_curve.json")
    curve_path.write_text(json.dumps(
        {"config_hash": h, "seed": tcfg.seed, "rows": curve},
        sort_keys=True, indent=2) + "\n")
    _sidecar(out, h, tcfg.seed, [labels_path], "dapt",
             {"epochs": tcfg.epochs, "final_holdout_loss": curve[-1]["holdout_loss"]})
    print(f"dapt: holdout loss {curve[0]['holdout_loss']:.4f} -> "
          f"{curve[-1]['holdout_loss']:.4f}; checkpoint {out}")
    return 0


def _fold_plan(args, cfg, man: Manifest, h: str) -> FoldPlan:
    folds_path = _resolve(args, "folds", _work(args) / "folds.json")
    if folds_path.is_file():
        return FoldPlan.load(folds_path)
    try:
        plan = make_folds(man, k=cfg["eval"]["folds"], seed=cfg["eval"]["seed"])
    except ValueError as e:
        raise CliError("data-error", str(e)) from e
    folds_path.parent.mkdir(parents=True, exist_ok=True)
    plan.save(folds_path)
    _sidecar(folds_path, h, cfg["eval"]["seed"], [], "folds",
             {"k": plan.k, "speakers": len(plan.assignment)})
    return plan


def cmd_folds(args) -> int:
    cfg, h = _load_cfg(args)
    man = _load_manifest(_resolve(args, "manifest", _work(args) / "prep" / "manifest.jsonl"))
    folds_path = _resolve(args, "out", _work(args) / "folds.json")
    if getattr(args, "k", None):
        cfg["eval"]["folds"] = args.k
    try:
        plan = make_folds(man.labeled(), k=cfg["eval"]["folds"], seed=cfg["eval"]["seed"])
    except ValueError as e:
        raise CliError("data-error", str(e)) from e
    folds_path.parent.mkdir(parents=True, exist_ok=True)
    plan.save(folds_path)
    _sidecar(folds_path, h, cfg["eval"]["seed"], [], "folds",
             {"k": plan.k, "speakers": len(plan.assignment)})
    print(f"folds: {plan.k} folds over {len(plan.assignment)} speakers -> {folds_path}")
    return 0


def cmd_finetune(args) -> int:
    cfg, h = _load_cfg(args)
    if args.grl_lambda is not None:
        cfg["grl"]["lam"] = args.grl_lambda
        h = cfgmod.config_hash(cfg)
    man = _load_manifest(_resolve(args, "manifest", _work(args) / "prep" / "manifest.jsonl")).labeled()
    if not len(man):
        raise CliError("data-error", "no labeled utterances in manifest")
    feats = _feature_values(man, _resolve(args, "features", _work(args) / "features"))
    plan = _fold_plan(args, cfg, man, h)
    grl = cfgmod.grl_config(cfg)
    tcfg = cfgmod.train_config(cfg, "finetune")

    init_ckpt = None
    if not args.random_init:
        p = _resolve(args, "init", _work(args) / "checkpoints" / "dapt.ckpt")
        if p.is_file():
            init_ckpt = p
        elif args.init:
            raise CliError("io-error", f"init checkpoint not found: {p}")

    folds = [args.fold] if args.fold is not None else list(range(plan.k))
    out_dir = _resolve(args, "out_dir", _work(args) / "checkpoints")
    out_dir.mkdir(parents=True, exist_ok=True)
    all_rows = []
    curves = {}
    for f in folds:
        train_recs = [r for r in man if plan.fold_of(r.speaker_id) != f]
        test_recs = [r for r in man if plan.fold_of(r.speaker_id) == f]
        if init_ckpt is not None:
            encoder, _ = load_encoder(init_ckpt)
        else:
            ecfg = cfgmod.encoder_config(cfg)
            encoder = SpeechEncoder(ecfg, seed=tcfg.seed + 17 * f)
        heads = AdaptHeads(encoder.cfg.dim, cfgmod.head_config(cfg),
                           seed=tcfg.seed + 500 + f)
        fold_cfg = cfgmod.train_config(cfg, "finetune")
        fold_cfg.seed = tcfg.seed + f
        try:
            curve = finetune(encoder, heads, _examples(man, feats, train_recs),
                             fold_cfg, grl, dat_enabled=args.dat,
                             freeze_encoder=args.freeze_encoder)
        except ValueError as e:
            raise CliError("data-error", str(e)) from e
        curves[f"fold{f}"] = curve
        ckpt = out_dir / f"finetune_fold{f}.ckpt"
        save_finetuned(ckpt, encoder, heads, {
            "phase": "finetune", "fold": f, "config_hash": h,
            "dat_enabled": args.dat, "grl_lambda": grl.lam,
            "freeze_encoder": args.freeze_encoder,
            "init": "dapt" if init_ckpt is not None else "random",
        })
        rows = predict_segments(encoder, heads, _examples(man, feats, test_recs))
        for r in rows:
            r["fold"] = f
        all_rows.extend(rows)
        last = curve[-1]
        dom = f" l_domain {last['l_domain']:.4f}" if last["l_domain"] is not None else ""
        print(f"finetune fold {f}: l_pd {last['l_pd']:.4f}{dom} "
              f"({len(train_recs)} train / {len(test_recs)} test segments)")

    pred_path = _resolve(args, "predictions", _work(args) / "predictions" / "neural.jsonl")
    pred_path.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(all_rows, pred_path)
    _sidecar(pred_path, h, tcfg.seed, [init_ckpt] if init_ckpt else [], "finetune",
             {"dat_enabled": args.dat, "grl_lambda": grl.lam,
              "freeze_encoder": args.freeze_encoder, "folds": folds})
    curve_path = _resolve(args, "curve", out_dir / "finetune_curve.json")
    curve_path.write_text(json.dumps(
        {"config_hash": h, "seed": tcfg.seed, "rows":
            [dict(row, fold=name) for name, curve in sorted(curves.items())
             for row in curve]},
        sort_keys=True, indent=2) + "\n")
    print(f"finetune: wrote {len(all_rows)} predictions -> {pred_path}")
    return 0


def cmd_predict(args) -> int:
    cfg, h = _load_cfg(args)
    ckpt = _resolve(args, "checkpoint", _work(args) / "checkpoints" / "finetune_fold0.ckpt")
    if not ckpt.is_file():
        raise CliError("io-error", f"checkpoint not found: {ckpt}")
    man = _load_manifest(_resolve(args, "manifest", _work(args) / "prep" / "manifest.jsonl")).labeled()
    feats = _feature_values(man, _resolve(args, "features", _work(args) / "features"))
    plan = _fold_plan(args, cfg, man, h)
    encoder, heads, _ = load_finetuned(ckpt)
    rows = predict_segments(encoder, heads, _examples(man, feats))
    for rec, row in zip(man, rows):
        row["fold"] = plan.assignment.get(rec.speaker_id, -1)
    out = _resolve(args, "out", _work(args) / "predictions" / "predict.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(rows, out)
    _sidecar(out, h, None, [ckpt], "predict", {"rows": len(rows)})
    print(f"predict: wrote {len(rows)} predictions -> {out}")
    return 0


def _pooled_vectors(man: Manifest, feats: dict[str, np.ndarray]):
    from .features import FeatureMatrix, pooled_vector

    vecs = {}
    for rec in man:
        vecs[rec.utterance_id] = pooled_vector(
            FeatureMatrix(feats[rec.utterance_id], 100.0))
    return vecs


def cmd_baseline(args) -> int:
    cfg, h = _load_cfg(args)
    man = _load_manifest(_resolve(args, "manifest", _work(args) / "prep" / "manifest.jsonl")).labeled()
    feats = _feature_values(man, _resolve(args, "features", _work(args) / "features"))
    plan = _fold_plan(args, cfg, man, h)
    vecs = _pooled_vectors(man, feats)
    rng = np.random.default_rng(cfg["baseline"]["seed"])
    grid = tuple(float(v) for v in np.logspace(-4, 0, 5))
    rows = []
    for f in range(plan.k):
        train_recs = [r for r in man if plan.fold_of(r.speaker_id) != f]
        test_recs = [r for r in man if plan.fold_of(r.speaker_id) == f]
        train_spk = sorted({r.speaker_id for r in train_recs})
        n_inner = max(1, int(round(cfg["baseline"]["inner_holdout"] * len(train_spk))))
        inner_spk = set(np.array(train_spk)[rng.permutation(len(train_spk))[:n_inner]])
        inner_recs = [r for r in train_recs if r.speaker_id in inner_spk]
        core_recs = [r for r in train_recs if r.speaker_id not in inner_spk]
        if not any(r.label == "PD" for r in core_recs) or \
           not any(r.label == "HC" for r in core_recs) or not inner_recs:
            core_recs, inner_recs = train_recs, train_recs

        def seg_acc(predict_fn, recs):
            return np.mean([predict_fn(vecs[r.utterance_id]) == r.label for r in recs])

        x_core = np.array([vecs[r.utterance_id] for r in core_recs])
        y_core = np.array([r.label for r in core_recs])
        try:
            if args.method in ("lsrc", "lsrc-cd"):
                mode = "joint" if args.method == "lsrc" else "per_class"
                d_core = Dictionary.from_training(x_core, y_core, mode=mode)
                best, best_acc = grid[0], -1.0
                for lam in grid:
                    acc = seg_acc(lambda v: lsrc_classify(d_core, v, lam)[0], inner_recs)
                    if acc > best_acc:
                        best, best_acc = lam, acc
                x_all = np.array([vecs[r.utterance_id] for r in train_recs])
                y_all = np.array([r.label for r in train_recs])
                d_full = Dictionary.from_training(x_all, y_all, mode=mode)
                for r in test_recs:
                    pred, res = lsrc_classify(d_full, vecs[r.utterance_id], best)
                    score = res["HC"] / (res["PD"] + res["HC"] + 1e-12)
                    rows.append({"utterance_id": r.utterance_id,
                                 "speaker_id": r.speaker_id, "true_label": r.label,
                                 "predicted_label": pred, "score": score, "fold": f})
            elif args.method == "svm":
                best, best_acc = grid[0], -1.0
                for c_reg in grid:
                    m = svm_train(x_core, y_core, c_reg,
                                  epochs=cfg["baseline"]["svm_epochs"],
                                  seed=cfg["baseline"]["seed"])
                    acc = seg_acc(lambda v: svm_predict(m, v), inner_recs)
                    if acc > best_acc:
                        best, best_acc = c_reg, acc
                x_all = np.array([vecs[r.utterance_id] for r in train_recs])
                y_all = np.array([r.label for r in train_recs])
                model = svm_train(x_all, y_all, best,
                                  epochs=cfg["baseline"]["svm_epochs"],
                                  seed=cfg["baseline"]["seed"])
                for r in test_recs:
                    v = vecs[r.utterance_id]
                    score = 1.0 / (1.0 + np.exp(-svm_decision(model, v)))
                    rows.append({"utterance_id": r.utterance_id,
                                 "speaker_id": r.speaker_id, "true_label": r.label,
                                 "predicted_label": svm_predict(model, v),
                                 "score": float(score), "fold": f})
            else:
                raise CliError("usage-error", f"unknown baseline method {args.method!r}")
        except ValueError as e:
            raise CliError("data-error", str(e)) from e
        print(f"baseline {args.method} fold {f}: selected {best:.4g} "
              f"(inner acc {best_acc:.3f})")

    out = _resolve(args, "out", _work(args) / "predictions" / f"{args.method}.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(rows, out)
    _sidecar(out, h, cfg["baseline"]["seed"], [], "baseline",
             {"method": args.method, "rows": len(rows)})
    print(f"baseline: wrote {len(rows)} predictions -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg, h = _load_cfg(args)
    pred_path = _resolve(args, "predictions", _work(args) / "predictions" / "neural.jsonl")
    if not pred_path.is_file():
        raise CliError("io-error", f"prediction file not found: {pred_path}")
    try:
        rows = read_predictions(pred_path)
    except ValueError as e:
        raise CliError("data-error", str(e)) from e
    if args.folds is not None:
        seen = {r["fold"] for r in rows}
        if len(seen) > args.folds:
            raise CliError("data-error",
                           f"prediction file has {len(seen)} folds, expected <= {args.folds}")
    src_hash = _sidecar_hash(pred_path) or h
    try:
        report = build_report(rows, config_hash=src_hash, seed=cfg["eval"]["seed"])
    except ValueError as e:
        raise CliError("data-error", str(e)) from e
    out = _resolve(args, "out", _work(args) / "reports" / "report.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out)
    _sidecar(out, src_hash, cfg["eval"]["seed"], [pred_path], "eval",
             {"n_predictions": len(rows)})
    pp = report["average"]["per_person"]
    print(f"eval: per-person avg acc "
          f"{pp['accuracy'] if pp['accuracy'] is not None else 'absent'}"
          f" -> {out}")
    return 0


def cmd_report(args) -> int:
    _, h = _load_cfg(args)
    report_path = _resolve(args, "report", _work(args) / "reports" / "report.json")
    if not report_path.is_file():
        raise CliError("io-error", f"report not found: {report_path}")
    try:
        report = load_report_json(report_path)
    except ValueError as e:
        raise CliError("data-error", str(e)) from e

    curves = {}
    hashes = {str(report_path): report["config_hash"]}
    for cpath in args.curves or []:
        cpath = Path(cpath)
        if not cpath.is_file():
            raise CliError("io-error", f"curve file not found: {cpath}")
        body = json.loads(cpath.read_text())
        curves[cpath.stem] = body.get("rows", [])
        hashes[str(cpath)] = body.get("config_hash")
    distinct = {v for v in hashes.values() if v}
    if len(distinct) > 1 and not args.force:
        detail = ", ".join(f"{Path(k).name}={v}" for k, v in sorted(hashes.items()))
        raise CliError("data-error",
                       f"artifact config hashes disagree ({detail}); rerun or pass --force")

    out_dir = _resolve(args, "out_dir", _work(args) / "reports")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report, out_dir / "metrics.csv")
    figures = render_figures(report, out_dir / "figures", curves)
    _sidecar(out_dir / "metrics.csv", report["config_hash"], report.get("seed"),
             [report_path], "report", {"figures": [str(p) for p in figures]})
    print(f"report: metrics.csv and {len(figures)} figures -> {out_dir}")
    return 0


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="pdvoice",
        description="Speech-based Parkinson's detection pipeline (desk scale): "
                    "synthetic corpora, preprocessing, masked-prediction "
                    "pretraining, domain-adversarial fine-tuning, baselines, "
                    "and speaker-disjoint evaluation.")
    parser.add_argument("--config", help="TOML config file (defaults used when omitted)")
    parser.add_argument("--work", help="work directory (default $PDVOICE_DATA_DIR or ./work)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. --set synth.seed=3")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", formatter_class=fmt,
                       help="generate the synthetic multi-domain corpus")
    p.add_argument("--out", help="corpus output directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("prep", formatter_class=fmt,
                       help="resample to 16 kHz and remove long silences "
                            "(window 481, threshold 0.0025, over 500 ms)")
    p.add_argument("--manifest", help="input manifest")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for per-file work")
    p.set_defaults(fn=cmd_prep)

    p = sub.add_parser("mfcc", formatter_class=fmt,
                       help="compute 39-dimensional MFCC features")
    p.add_argument("--manifest", help="prep manifest")
    p.add_argument("--out", help="feature cache directory")
    p.set_defaults(fn=cmd_mfcc)

    p = sub.add_parser("pseudolabel", formatter_class=fmt,
                       help="fit k-means pseudo-labels (stage 1: 100 clusters "
                            "on MFCC; stage 2: 500 on encoder states)")
    p.add_argument("--stage", type=int, choices=(1, 2), default=1)
    p.add_argument("--manifest", help="prep manifest")
    p.add_argument("--features", help="feature cache directory")
    p.add_argument("--checkpoint", help="encoder checkpoint (stage 2)")
    p.add_argument("--out", help="cluster model output")
    p.set_defaults(fn=cmd_pseudolabel)

    p = sub.add_parser("dapt", formatter_class=fmt,
                       help="masked-prediction pretraining (AdamW lr 3e-5, "
                            "batch 128, 80 epochs, clip 1.0, LayerDrop 0.1)")
    p.add_argument("--manifest", help="manifest of pretraining utterances")
    p.add_argument("--features", help="feature cache directory")
    p.add_argument("--labels", help="stage-1/2 cluster model file")
    p.add_argument("--out", help="encoder checkpoint output")
    p.add_argument("--curve", help="loss curve JSON output")
    p.set_defaults(fn=cmd_dapt)

    p = sub.add_parser("finetune", formatter_class=fmt,
                       help="fine-tune for PD detection (40 epochs default), "
                            "optionally with domain-adversarial training")
    p.add_argument("--manifest", help="labeled manifest")
    p.add_argument("--features", help="feature cache directory")
    p.add_argument("--folds", help="fold plan JSON (created if missing)")
    p.add_argument("--fold", type=int, help="train/test a single fold")
    p.add_argument("--init", help="initial encoder checkpoint (default dapt.ckpt)")
    p.add_argument("--random-init", action="store_true",
                   help="start from random encoder weights")
    p.add_argument("--dat", action=argparse.BooleanOptionalAction, default=True,
                   help="domain-adversarial training with gradient reversal")
    p.add_argument("--grl-lambda", type=float,
                   help="gradient reversal scale (default 0.1; grid "
                        "{0.01, 0.05, 0.1, 0.5, 1, 2})")
    p.add_argument("--freeze-encoder", action="store_true",
                   help="train only the classification heads")
    p.add_argument("--out-dir", help="checkpoint output directory")
    p.add_argument("--predictions", help="held-out prediction JSONL output")
    p.add_argument("--curve", help="loss curve JSON output")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("predict", formatter_class=fmt,
                       help="apply a fine-tuned checkpoint to a manifest")
    p.add_argument("--checkpoint", help="fine-tuned checkpoint")
    p.add_argument("--manifest", help="labeled manifest")
    p.add_argument("--features", help="feature cache directory")
    p.add_argument("--folds", help="fold plan JSON")
    p.add_argument("--out", help="prediction JSONL output")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("baseline", formatter_class=fmt,
                       help="sparse-representation and SVM baselines over "
                            "pooled MFCC vectors")
    p.add_argument("--method", choices=("lsrc", "lsrc-cd", "svm"), required=True,
                   help="lsrc: joint dictionary; lsrc-cd: class dictionaries; svm")
    p.add_argument("--manifest", help="labeled manifest")
    p.add_argument("--features", help="feature cache directory")
    p.add_argument("--folds", help="fold plan JSON")
    p.add_argument("--out", help="prediction JSONL output")
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("folds", formatter_class=fmt,
                       help="build the speaker-disjoint stratified fold plan")
    p.add_argument("--manifest", help="labeled manifest")
    p.add_argument("--k", type=int, help="fold count (default 5)")
    p.add_argument("--out", help="fold plan output")
    p.set_defaults(fn=cmd_folds)

    p = sub.add_parser("eval", formatter_class=fmt,
                       help="score a prediction file: per-fold, averaged, and "
                            "pooled metrics at segment and person level")
    p.add_argument("--predictions", help="prediction JSONL")
    p.add_argument("--folds", type=int, help="expected fold count")
    p.add_argument("--out", help="report JSON output")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", formatter_class=fmt,
                       help="render metrics.csv and figures from a report")
    p.add_argument("--report", help="report JSON")
    p.add_argument("--curves", nargs="*", help="loss curve JSON files to plot")
    p.add_argument("--force", action="store_true",
                   help="aggregate artifacts even if config hashes disagree")
    p.add_argument("--out-dir", help="output directory")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"{e.error_class}: {e}", file=sys.stderr)
        return 2
    except ConfigError as e:
        print(f"config-error: {e}", file=sys.stderr)
        return 2
    except AudioError as e:
        print(f"io-error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"io-error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"data-error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
