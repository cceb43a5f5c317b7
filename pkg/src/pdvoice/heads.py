"""Classification heads and domain-adversarial fine-tuning.

Both heads project frame states to a pooled vector (linear, then mean-pool
over non-padded frames) and classify it: 2 ways for PD/HC, num_domains ways
for the corpus-of-origin task. The domain head sits behind a gradient
reversal layer, so its loss trains the head normally while pushing the
encoder toward domain-invariant features, scaled by lambda.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoder import SpeechEncoder, crop_or_pad, save_checkpoint, load_checkpoint
from .nn import (
    AdamW,
    GradientReversal,
    Linear,
    MeanPool,
    Module,
    TrainConfig,
    clip_grad_norm,
    lr_at,
    softmax,
    softmax_cross_entropy,
)

LABEL_TO_ID = {"HC": 0, "PD": 1}
ID_TO_LABEL = {v: k for k, v in LABEL_TO_ID.items()}


@dataclass
class GrlConfig:
    lam: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


@dataclass
class HeadConfig:
    hidden: int = 256
    num_domains: int = 4


@dataclass
class LossReport:
    l_pd: float
    l_domain: float | None
    l_dat: float
    l_dapt: float | None = None


class TaskHead(Module):
    """linear (frame level) -> mean-pool -> linear -> logits."""

    def __init__(self, dim: int, hidden: int, n_out: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.lin1 = self.add_child("lin1", Linear(dim, hidden, rng, dtype))
        self.pool = MeanPool()
        self.lin2 = self.add_child("lin2", Linear(hidden, n_out, rng, dtype))

    def forward(self, hidden: np.ndarray, valid_mask: np.ndarray | None = None) -> np.ndarray:
        return self.lin2.forward(self.pool.forward(self.lin1.forward(hidden), valid_mask))

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        return self.lin1.backward(self.pool.backward(self.lin2.backward(dlogits)))


class AdaptHeads(Module):
    """PD head plus domain head with its gradient reversal."""

    def __init__(self, dim: int, cfg: HeadConfig | None = None, seed: int = 0,
                 dtype=np.float32):
        super().__init__()
        self.cfg = cfg or HeadConfig()
        rng = np.random.default_rng(seed)
        self.pd = self.add_child("pd", TaskHead(dim, self.cfg.hidden, 2, rng, dtype))
        self.dom = self.add_child("dom", TaskHead(dim, self.cfg.hidden,
                                                  self.cfg.num_domains, rng, dtype))

    def pd_forward(self, hidden: np.ndarray, valid_mask=None) -> np.ndarray:
        return self.pd.forward(hidden, valid_mask)

    def domain_forward(self, hidden: np.ndarray, grl: GrlConfig,
                       valid_mask=None) -> np.ndarray:
        self._grl = GradientReversal(grl.lam)
        return self.dom.forward(self._grl.forward(hidden), valid_mask)

    def domain_backward(self, dlogits: np.ndarray) -> np.ndarray:
        """Gradient into the encoder: reversed and scaled by lambda. The
        head's own parameters receive the unreversed gradient."""
        return self._grl.backward(self.dom.backward(dlogits))


def dat_losses(pd_logits: np.ndarray, y: np.ndarray,
               dom_logits: np.ndarray | None, d: np.ndarray | None,
               grl: GrlConfig) -> tuple[LossReport, np.ndarray, np.ndarray | None]:
    """Batch losses and logit gradients for the composed objective
    l_dat = l_pd + lambda * l_domain."""
    l_pd, dpd = softmax_cross_entropy(pd_logits, y)
    if dom_logits is None:
        return LossReport(l_pd=l_pd, l_domain=None, l_dat=l_pd), dpd, None
    l_dom, ddom = softmax_cross_entropy(dom_logits, d)
    return LossReport(l_pd=l_pd, l_domain=l_dom, l_dat=l_pd + grl.lam * l_dom), dpd, ddom


@dataclass
class FinetuneExample:
    feats: np.ndarray      # (T, feat_dim)
    label: int             # 0 = HC, 1 = PD
    domain: int
    speaker_id: str = ""
    utterance_id: str = ""


def _main_group(all_grads: dict, prefix_heads="heads.", frozen=False) -> dict:
    """Encoder (minus its pretraining head) plus PD-head gradients; the domain
    head is clipped as its own group so lambda = 0 runs match plain runs
    bit for bit."""
    out = {}
    for name, g in all_grads.items():
        if name.startswith("encoder.head."):
            continue
        if name.startswith("heads.dom."):
            continue
        if frozen and name.startswith("encoder."):
            continue
        out[name] = g
    return out


def finetune(encoder: SpeechEncoder, heads: AdaptHeads,
             examples: Sequence[FinetuneExample], cfg: TrainConfig,
             grl: GrlConfig | None = None, dat_enabled: bool = True,
             freeze_encoder: bool = False, progress=None) -> list[dict]:
    """Joint training of encoder and heads on labeled utterances.

    With dat_enabled, each batch optimizes l_pd + the reversed domain loss;
    otherwise only the PD path runs (the plain fine-tuning baseline). Returns
    a per-epoch loss curve.
    """
    grl = grl or GrlConfig()
    if not examples:
        raise ValueError("no training examples")
    classes = {e.label for e in examples}
    if len(classes) < 2:
        raise ValueError("training manifest must contain both PD and HC examples")
    if dat_enabled and len({e.domain for e in examples}) < 2:
        raise ValueError("domain-adversarial training needs at least two domains")
    domains = {e.domain for e in examples}
    if max(domains) >= heads.cfg.num_domains or min(domains) < 0:
        raise ValueError(f"domain ids must lie in [0, {heads.cfg.num_domains})")

    trainable: dict[str, np.ndarray] = {}
    for name, p in encoder.named_params():
        if freeze_encoder or name.startswith("head."):
            continue
        trainable["encoder." + name] = p
    for name, p in heads.named_params():
        trainable["heads." + name] = p
    opt = AdamW(trainable, cfg)

    rng = np.random.default_rng(cfg.seed)
    budget = encoder.cfg.frame_budget
    steps_per_epoch = (len(examples) + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    global_step = 0
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(examples))
        sums = {"l_pd": 0.0, "l_domain": 0.0, "l_dat": 0.0}
        n_batches = 0
        for i in range(0, len(perm), cfg.batch_size):
            chunk = perm[i: i + cfg.batch_size]
            feats, valids, ys, ds = [], [], [], []
            for idx in chunk:
                ex = examples[idx]
                v, _, valid = crop_or_pad(ex.feats, None, budget, rng)
                feats.append(v)
                valids.append(valid)
                ys.append(ex.label)
                ds.append(ex.domain)
            fb = np.stack(feats)
            vb = np.stack(valids)
            yb = np.array(ys)
            db = np.array(ds)

            encoder.zero_grads()
            heads.zero_grads()
            hid, _ = encoder.forward(fb, vb, train=not freeze_encoder, rng=rng,
                                     layerdrop_p=cfg.layerdrop_p)
            pd_logits = heads.pd_forward(hid, vb)
            dom_logits = heads.domain_forward(hid, grl, vb) if dat_enabled else None
            report, dpd, ddom = dat_losses(pd_logits, yb,
                                           dom_logits, db if dat_enabled else None, grl)
            dhid = heads.pd.backward(dpd)
            if dat_enabled:
                dhid = dhid + heads.domain_backward(ddom)
            if not freeze_encoder:
                encoder.backward(dhidden=dhid)

            all_grads = {}
            for name, g in encoder.named_grads():
                all_grads["encoder." + name] = g
            for name, g in heads.named_grads():
                all_grads["heads." + name] = g
            clip_grad_norm(_main_group(all_grads, frozen=freeze_encoder),
                           cfg.max_grad_norm)
            if dat_enabled:
                clip_grad_norm({n: g for n, g in all_grads.items()
                                if n.startswith("heads.dom.")}, cfg.max_grad_norm)
            opt.step({n: all_grads[n] for n in trainable},
                     lr_at(global_step, max(total_steps, 1), cfg))

            sums["l_pd"] += report.l_pd
            sums["l_domain"] += report.l_domain if report.l_domain is not None else 0.0
            sums["l_dat"] += report.l_dat
            n_batches += 1
            global_step += 1
        row = {
            "epoch": epoch,
            "l_pd": sums["l_pd"] / n_batches,
            "l_domain": sums["l_domain"] / n_batches if dat_enabled else None,
            "l_dat": sums["l_dat"] / n_batches,
        }
        curve.append(row)
        if progress:
            progress(row)
    return curve


def predict_segments(encoder: SpeechEncoder, heads: AdaptHeads,
                     examples: Sequence[FinetuneExample]) -> list[dict]:
    """Eval-mode per-utterance predictions: argmax of the PD head with the
    PD-favoring tie rule; score is the softmax PD probability."""
    out = []
    for ex in examples:
        hid, _ = encoder.forward(ex.feats[None], train=False)
        logits = heads.pd_forward(hid)
        p_pd = float(softmax(logits)[0, LABEL_TO_ID["PD"]])
        pred = "PD" if p_pd >= 0.5 else "HC"
        out.append({
            "utterance_id": ex.utterance_id,
            "speaker_id": ex.speaker_id,
            "true_label": ID_TO_LABEL.get(ex.label, "none"),
            "predicted_label": pred,
            "score": p_pd,
        })
    return out


# -- Checkpoints ---------------------------------------------------------------

def save_finetuned(path, encoder: SpeechEncoder, heads: AdaptHeads,
                   meta: dict | None = None) -> None:
    from dataclasses import asdict

    m = {
        "encoder_config": asdict(encoder.cfg),
        "head_config": asdict(heads.cfg),
    }
    m.update(meta or {})
    tensors = [("encoder." + n, p) for n, p in encoder.named_params()]
    tensors += [("heads." + n, p) for n, p in heads.named_params()]
    save_checkpoint(path, m, tensors)


def load_finetuned(path) -> tuple[SpeechEncoder, AdaptHeads, dict]:
    from .encoder import EncoderConfig

    header, tensors = load_checkpoint(path)
    enc = SpeechEncoder(EncoderConfig(**header["encoder_config"]), seed=0)
    heads = AdaptHeads(enc.cfg.dim, HeadConfig(**header["head_config"]), seed=0)
    for name, p in enc.named_params():
        p[...] = tensors["encoder." + name]
    for name, p in heads.named_params():
        p[...] = tensors["heads." + name]
    return enc, heads, header
