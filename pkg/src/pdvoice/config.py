"""Pipeline configuration: strict TOML with published defaults.

Every default matches the reference recipe constants (silence window 481,
threshold 0.0025, 500 ms; K = 100/500; lr 3e-5; batch 128; 80/40 epochs;
clip 1.0; LayerDrop 0.1; lambda 0.1; 5 folds). Unknown keys are rejected so
experiment files cannot silently drift. The config hash recorded in every
artifact is the SHA-256 of the fully resolved tree.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .audio import SilenceConfig
from .encoder import EncoderConfig, MaskSpec
from .features import MfccConfig
from .heads import GrlConfig, HeadConfig
from .nn import TrainConfig
from .synth import ClassFactors, SynthConfig


class ConfigError(Exception):
    pass


DEFAULTS: dict = {
    "silence": {"rms_window": 481, "rms_threshold": 0.0025, "min_silence_ms": 500.0},
    "mfcc": {"frame_ms": 25.0, "hop_ms": 10.0, "mel_filters": 26, "base_coeffs": 13,
             "delta": True, "delta_delta": True, "log_floor": 1e-10,
             "preemphasis": 0.97},
    "cluster": {"stage1_k": 100, "stage2_k": 500, "max_iters": 100, "seed": 0,
                "frame_subsample": 1, "stage2_layer": -1},
    "encoder": {"feat_dim": 39, "dim": 64, "layers": 4, "heads": 4, "ff_mult": 4,
                "frame_budget": 200},
    "heads": {"hidden": 256, "num_domains": 4},
    "mask": {"span_len": 10, "start_prob": 0.08},
    "train": {
        "dapt": {"learning_rate": 3e-5, "weight_decay": 0.01, "epochs": 80,
                 "batch_size": 128, "max_grad_norm": 1.0, "layerdrop_p": 0.1,
                 "warmup_fraction": 0.1, "seed": 0, "holdout_fraction": 0.1},
        "finetune": {"learning_rate": 3e-5, "weight_decay": 0.01, "epochs": 40,
                     "batch_size": 128, "max_grad_norm": 1.0, "layerdrop_p": 0.1,
                     "warmup_fraction": 0.1, "seed": 0},
    },
    "grl": {"lam": 0.1},
    "eval": {"folds": 5, "seed": 0},
    "baseline": {"svm_epochs": 60, "inner_holdout": 0.2, "seed": 0},
    "synth": {"num_domains": 2, "speakers_per_cell": 5, "utterances_per_speaker": 4,
              "utterance_seconds": 2.0, "seed": 0, "tilt_jitter": 0.0,
              "hc_tremor": 0.02, "hc_jitter": 0.15, "hc_pause_mult": 1.0,
              "pd_tremor": 0.55, "pd_jitter": 4.5, "pd_pause_mult": 3.2},
}


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    out = {}
    for key, dval in defaults.items():
        if isinstance(dval, dict):
            sub = user.get(key, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"section {path + key!r} must be a table")
            out[key] = _merge(dval, sub, path + key + ".")
        else:
            val = user.get(key, dval)
            if isinstance(dval, bool) != isinstance(val, bool) or not isinstance(
                    val, (type(dval), int) if isinstance(dval, float) else type(dval)):
                raise ConfigError(
                    f"key {path + key!r} expects {type(dval).__name__}, "
                    f"got {type(val).__name__}")
            out[key] = float(val) if isinstance(dval, float) else val
    for key in user:
        if key not in defaults:
            raise ConfigError(f"unknown key {path + key!r}")
    return out


def load_config(path: str | Path | None = None,
                overrides: dict[str, object] | None = None) -> dict:
    """Resolve defaults, an optional TOML file, and dotted-key overrides."""
    user: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"invalid TOML in {path}: {e}") from e
    cfg = _merge(DEFAULTS, user)
    for dotted, value in (overrides or {}).items():
        node = cfg
        parts = dotted.split(".")
        for p in parts[:-1]:
            if p not in node:
                raise ConfigError(f"unknown config section {dotted!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        old = node[parts[-1]]
        node[parts[-1]] = float(value) if isinstance(old, float) else \
            type(old)(value) if not isinstance(old, bool) else bool(value)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


# -- Typed views ---------------------------------------------------------------

def silence_config(cfg: dict) -> SilenceConfig:
    return SilenceConfig(**cfg["silence"])


def mfcc_config(cfg: dict) -> MfccConfig:
    return MfccConfig(**cfg["mfcc"])


def encoder_config(cfg: dict) -> EncoderConfig:
    e = cfg["encoder"]
    return EncoderConfig(feat_dim=e["feat_dim"], dim=e["dim"], layers=e["layers"],
                         heads=e["heads"], ff_mult=e["ff_mult"],
                         num_clusters=cfg["cluster"]["stage1_k"],
                         frame_budget=e["frame_budget"])


def head_config(cfg: dict) -> HeadConfig:
    return HeadConfig(**cfg["heads"])


def mask_spec(cfg: dict) -> MaskSpec:
    return MaskSpec(**cfg["mask"])


def grl_config(cfg: dict) -> GrlConfig:
    return GrlConfig(lam=cfg["grl"]["lam"])


def train_config(cfg: dict, phase: str) -> TrainConfig:
    t = dict(cfg["train"][phase])
    t.pop("holdout_fraction", None)
    return TrainConfig(**t)


def synth_config(cfg: dict) -> SynthConfig:
    s = cfg["synth"]
    return SynthConfig(
        num_domains=s["num_domains"], speakers_per_cell=s["speakers_per_cell"],
        utterances_per_speaker=s["utterances_per_speaker"],
        utterance_seconds=s["utterance_seconds"], seed=s["seed"],
        tilt_jitter=s["tilt_jitter"],
        hc=ClassFactors(s["hc_tremor"], s["hc_jitter"], s["hc_pause_mult"]),
        pd=ClassFactors(s["pd_tremor"], s["pd_jitter"], s["pd_pause_mult"]),
    )


def stage2_layer(cfg: dict) -> int:
    """Stage-2 feature layer; -1 means the middle of the stack."""
    val = cfg["cluster"]["stage2_layer"]
    return cfg["encoder"]["layers"] // 2 if val < 0 else val
