"""Miniature masked-prediction speech encoder.

Feature frames are projected to the model width, a random subset of frame
spans is replaced by a learned mask embedding, and a transformer stack
predicts the cluster id of each masked frame. Desk-scale default is 4 layers
of width 64; the 12x768 paper-scale shape is selectable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .cluster import ClusterModel, assign
from .nn import (
    LayerNorm,
    Linear,
    Module,
    TrainConfig,
    TransformerBlock,
    AdamW,
    clip_grad_norm,
    lr_at,
    softmax,
)


@dataclass
class EncoderConfig:
    feat_dim: int = 39
    dim: int = 64
    layers: int = 4
    heads: int = 4
    ff_mult: int = 4
    num_clusters: int = 100
    frame_budget: int = 200

    def __post_init__(self):
        if self.dim % 2 or self.dim % self.heads:
            raise ValueError("dim must be even and divisible by heads")

    @classmethod
    def paper_scale(cls, **kw) -> "EncoderConfig":
        return cls(dim=768, layers=12, heads=12, **kw)


@dataclass
class MaskSpec:
    span_len: int = 10
    start_prob: float = 0.08

    def __post_init__(self):
        if self.span_len < 1:
            raise ValueError("span_len must be >= 1")
        if not 0.0 <= self.start_prob <= 1.0:
            raise ValueError("start_prob must be in [0, 1]")


def mask_spans(t_len: int, spec: MaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of length t_len: union of span_len spans whose start
    positions are drawn independently per frame with start_prob."""
    mask = np.zeros(t_len, dtype=bool)
    starts = np.flatnonzero(rng.random(t_len) < spec.start_prob)
    for s in starts:
        mask[s: s + spec.span_len] = True
    return mask


def sinusoidal_positions(t_len: int, dim: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(t_len, dtype=np.float64)[:, None]
    idx = np.arange(dim // 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * idx / dim)
    pe = np.empty((t_len, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe.astype(dtype)


class SpeechEncoder(Module):
    def __init__(self, cfg: EncoderConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.proj = self.add_child("proj", Linear(cfg.feat_dim, cfg.dim, rng, dtype))
        self.mask_emb = self.add_param(
            "mask_emb", rng.normal(0, 0.1, cfg.dim).astype(dtype))
        self.blocks = [
            self.add_child(f"block{i}", TransformerBlock(cfg.dim, cfg.heads, rng,
                                                         cfg.ff_mult, dtype))
            for i in range(cfg.layers)
        ]
        self.final_ln = self.add_child("final_ln", LayerNorm(cfg.dim, dtype=dtype))
        self.head = self.add_child("head", Linear(cfg.dim, cfg.num_clusters, rng, dtype))
        self.layerdrop_draws = 0
        self.layerdrop_skips = 0

    def mask_frames(self, feats_proj: np.ndarray, spec: MaskSpec,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Corrupt projected frames (T, dim): masked rows become the mask
        embedding, everything else is untouched."""
        m = mask_spans(len(feats_proj), spec, rng)
        xhat = feats_proj.copy()
        xhat[m] = self.mask_emb
        return xhat, m

    def forward(self, feats: np.ndarray, key_mask: np.ndarray | None = None,
                frame_mask: np.ndarray | None = None, train: bool = False,
                rng: np.random.Generator | None = None,
                layerdrop_p: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Run (B, T, feat_dim) features through projection, masking,
        positions, and the block stack. Returns (hidden (B,T,dim),
        cluster logits (B,T,K)). LayerDrop only applies in train mode."""
        x = self.proj.forward(feats.astype(self.dtype, copy=False))
        self._frame_mask = frame_mask
        if frame_mask is not None:
            x = np.where(frame_mask[:, :, None], self.mask_emb, x)
        x = x + sinusoidal_positions(x.shape[1], self.cfg.dim, self.dtype)
        self._active: list[int] = []
        for i, blk in enumerate(self.blocks):
            if train and layerdrop_p > 0.0:
                self.layerdrop_draws += 1
                if rng.random() < layerdrop_p:
                    self.layerdrop_skips += 1
                    continue
            x = blk.forward(x, key_mask)
            self._active.append(i)
        hidden = self.final_ln.forward(x)
        logits = self.head.forward(hidden)
        return hidden, logits

    def backward(self, dhidden: np.ndarray | None = None,
                 dlogits: np.ndarray | None = None) -> None:
        """Accumulate parameter gradients from head and/or hidden-state
        gradients. Feature inputs carry no gradient."""
        d = None
        if dlogits is not None:
            d = self.head.backward(dlogits)
        if dhidden is not None:
            d = dhidden if d is None else d + dhidden
        d = self.final_ln.backward(d)
        for i in reversed(self._active):
            d = self.blocks[i].backward(d)
        fm = self._frame_mask
        if fm is not None:
            self._grads["mask_emb"] += d[fm].sum(axis=0)
            d = np.where(fm[:, :, None], 0.0, d)
        self.proj.backward(d)

    def layer_states(self, feats: np.ndarray, layer: int) -> np.ndarray:
        """Eval-mode hidden states (T, dim) after block `layer` for one
        utterance of raw features (T, feat_dim)."""
        if not 0 <= layer < len(self.blocks):
            raise ValueError(f"layer must be in [0, {len(self.blocks)}), got {layer}")
        x = self.proj.forward(feats[None].astype(self.dtype, copy=False))
        x = x + sinusoidal_positions(x.shape[1], self.cfg.dim, self.dtype)
        for i, blk in enumerate(self.blocks):
            x = blk.forward(x, None)
            if i == layer:
                return x[0].copy()
        raise AssertionError("unreachable")


def dapt_loss(logits: np.ndarray, labels: np.ndarray, frame_mask: np.ndarray,
              normalize: bool = True) -> tuple[float, np.ndarray, int]:
    """Masked-prediction cross entropy.

    Sums -log p(label) over masked, non-padded frames; by default the sum is
    divided by the masked-frame count to keep the scale batch-invariant
    (normalize=False restores the raw sum). Unmasked frames get exactly zero
    gradient. Returns (loss, dlogits, masked_count).
    """
    n_masked = int(frame_mask.sum())
    dlogits = np.zeros_like(logits)
    if n_masked == 0:
        return 0.0, dlogits, 0
    rows = logits[frame_mask]
    targets = np.asarray(labels)[frame_mask]
    k = rows.shape[1]
    if np.any(targets < 0) or np.any(targets >= k):
        raise ValueError(f"pseudo-labels must lie in [0, {k})")
    z = rows - rows.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    losses = logsumexp - z[np.arange(len(rows)), targets]
    grad = softmax(rows, axis=1)
    grad[np.arange(len(rows)), targets] -= 1.0
    scale = 1.0 / n_masked if normalize else 1.0
    dlogits[frame_mask] = grad * scale
    return float(losses.sum() * scale), dlogits, n_masked


def crop_or_pad(values: np.ndarray, labels: np.ndarray | None, budget: int,
                rng: np.random.Generator | None = None):
    """Fit one utterance into the frame budget: random crop in train mode
    (rng given), left-aligned crop otherwise, zero padding when short.
    Returns (frames, labels, valid_mask)."""
    t = len(values)
    if t > budget:
        start = int(rng.integers(0, t - budget + 1)) if rng is not None else 0
        v = values[start: start + budget]
        lab = labels[start: start + budget] if labels is not None else None
        valid = np.ones(budget, dtype=bool)
    else:
        v = np.zeros((budget, values.shape[1]), dtype=values.dtype)
        v[:t] = values
        lab = None
        if labels is not None:
            lab = np.zeros(budget, dtype=np.int64)
            lab[:t] = labels
        valid = np.zeros(budget, dtype=bool)
        valid[:t] = True
    return v, lab, valid


def _batches(order: np.ndarray, batch_size: int):
    for i in range(0, len(order), batch_size):
        yield order[i: i + batch_size]


def _dapt_eval(encoder: SpeechEncoder, items: list, spec: MaskSpec,
               budget: int, batch_size: int, seed: int) -> float:
    """Held-out masked-prediction loss with a fixed masking draw per call."""
    rng = np.random.default_rng(seed)
    total_loss = 0.0
    total_masked = 0
    for chunk in _batches(np.arange(len(items)), batch_size):
        feats, labs, valids, masks = [], [], [], []
        for idx in chunk:
            v, lab, valid = crop_or_pad(items[idx][0], items[idx][1], budget)
            m = mask_spans(budget, spec, rng) & valid
            feats.append(v)
            labs.append(lab)
            valids.append(valid)
            masks.append(m)
        _, logits = encoder.forward(np.stack(feats), np.stack(valids),
                                    np.stack(masks), train=False)
        loss, _, n = dapt_loss(logits, np.stack(labs), np.stack(masks),
                               normalize=False)
        total_loss += loss
        total_masked += n
    return total_loss / max(total_masked, 1)


def dapt_train(encoder: SpeechEncoder, feature_mats: list[np.ndarray],
               labels: ClusterModel | list[np.ndarray], cfg: TrainConfig,
               spec: MaskSpec | None = None, holdout_fraction: float = 0.1,
               normalize_loss: bool = True,
               progress=None) -> list[dict]:
    """Masked-prediction pretraining over a corpus of feature matrices.

    labels may be a ClusterModel (frames are assigned on the fly) or
    precomputed per-utterance label arrays. Returns the loss curve, one row
    per epoch plus an epoch-0 held-out baseline.
    """
    if not feature_mats:
        raise ValueError("empty corpus")
    spec = spec or MaskSpec()
    if isinstance(labels, ClusterModel):
        label_arrays = [assign(labels, m) for m in feature_mats]
    else:
        label_arrays = labels
    items = list(zip(feature_mats, label_arrays))
    for vals, labs in items:
        if len(vals) != len(labs):
            raise ValueError("pseudo-label length mismatch")

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(items))
    n_hold = max(1, int(round(holdout_fraction * len(items)))) if len(items) > 1 else 0
    hold_items = [items[i] for i in order[:n_hold]]
    train_items = [items[i] for i in order[n_hold:]]
    if not train_items:
        train_items = [items[i] for i in order]

    budget = encoder.cfg.frame_budget
    eval_seed = cfg.seed + 90001
    opt = AdamW(dict(encoder.named_params()), cfg)
    steps_per_epoch = (len(train_items) + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    curve = [{
        "epoch": 0,
        "train_loss": None,
        "holdout_loss": _dapt_eval(encoder, hold_items or train_items, spec,
                                   budget, cfg.batch_size, eval_seed),
        "empty_mask_batches": 0,
    }]
    global_step = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(train_items))
        epoch_loss = 0.0
        n_batches = 0
        empty_mask_batches = 0
        for chunk in _batches(perm, cfg.batch_size):
            feats, labs, valids, masks = [], [], [], []
            for idx in chunk:
                v, lab, valid = crop_or_pad(train_items[idx][0],
                                            train_items[idx][1], budget, rng)
                m = mask_spans(budget, spec, rng) & valid
                feats.append(v)
                labs.append(lab)
                valids.append(valid)
                masks.append(m)
            frame_mask = np.stack(masks)
            encoder.zero_grads()
            _, logits = encoder.forward(np.stack(feats), np.stack(valids),
                                        frame_mask, train=True, rng=rng,
                                        layerdrop_p=cfg.layerdrop_p)
            loss, dlogits, n_masked = dapt_loss(logits, np.stack(labs),
                                                frame_mask, normalize_loss)
            if n_masked == 0:
                empty_mask_batches += 1
            else:
                encoder.backward(dlogits=dlogits)
                grads = dict(encoder.named_grads())
                clip_grad_norm(grads, cfg.max_grad_norm)
                opt.step(grads, lr_at(global_step, max(total_steps, 1), cfg))
            epoch_loss += loss
            n_batches += 1
            global_step += 1
        row = {
            "epoch": epoch,
            "train_loss": epoch_loss / max(n_batches, 1),
            "holdout_loss": _dapt_eval(encoder, hold_items or train_items, spec,
                                       budget, cfg.batch_size, eval_seed),
            "empty_mask_batches": empty_mask_batches,
        }
        curve.append(row)
        if progress:
            progress(row)
    return curve


# -- Checkpoint container -----------------------------------------------------
# JSON header line with a tensor index, then float32 LE payloads in order.

SCHEMA_VERSION = 1


def save_checkpoint(path: str | Path, meta: dict,
                    named_tensors: list[tuple[str, np.ndarray]]) -> None:
    header = {
        "schema_version": SCHEMA_VERSION,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in named_tensors],
        **meta,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, t in named_tensors:
            fh.write(t.astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported checkpoint schema {header.get('schema_version')}")
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 4)
            tensors[entry["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return header, tensors


def save_encoder(path: str | Path, encoder: SpeechEncoder, meta: dict | None = None) -> None:
    m = {"encoder_config": asdict(encoder.cfg)}
    m.update(meta or {})
    save_checkpoint(path, m, [("encoder." + n, p) for n, p in encoder.named_params()])


def load_encoder(path: str | Path) -> tuple[SpeechEncoder, dict]:
    header, tensors = load_checkpoint(path)
    cfg = EncoderConfig(**header["encoder_config"])
    enc = SpeechEncoder(cfg, seed=0)
    for name, p in enc.named_params():
        key = "encoder." + name
        if key not in tensors:
            raise ValueError(f"checkpoint missing tensor {key!r}")
        if tensors[key].shape != p.shape:
            raise ValueError(f"shape mismatch for {key!r}")
        p[...] = tensors[key]
    return enc, header
