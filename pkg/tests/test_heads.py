import numpy as np
import pytest

from pdvoice.encoder import EncoderConfig, SpeechEncoder
from pdvoice.heads import (
    AdaptHeads,
    FinetuneExample,
    GrlConfig,
    HeadConfig,
    dat_losses,
    finetune,
    load_finetuned,
    predict_segments,
    save_finetuned,
)
from pdvoice.nn import TrainConfig, softmax_cross_entropy

RNG = np.random.default_rng(0)


def tiny_encoder(seed=0):
    return SpeechEncoder(EncoderConfig(feat_dim=6, dim=8, layers=1, heads=2,
                                       num_clusters=4, frame_budget=10), seed=seed)


def tiny_heads(seed=0, num_domains=2):
    return AdaptHeads(8, HeadConfig(hidden=6, num_domains=num_domains), seed=seed)


def make_examples(n_per_cell=4, num_domains=2, t=8, seed=0):
    rng = np.random.default_rng(seed)
    protos = {}
    out = []
    for d in range(num_domains):
        for label in (0, 1):
            protos[(d, label)] = rng.normal(0, 1, 6)
    i = 0
    for d in range(num_domains):
        for label in (0, 1):
            for _ in range(n_per_cell):
                feats = protos[(d, label)] + rng.normal(0, 0.2, (t, 6))
                out.append(FinetuneExample(feats, label, d,
                                           speaker_id=f"s{i}", utterance_id=f"u{i}"))
                i += 1
    return out


def test_grl_constant_through_training_forward():
    heads = tiny_heads()
    hid = RNG.normal(0, 1, (2, 5, 8)).astype(np.float32)
    a = heads.domain_forward(hid, GrlConfig(0.1))
    b = heads.domain_forward(hid, GrlConfig(2.0))
    assert np.array_equal(a, b)  # lambda only affects gradients


def test_pd_head_paper_scale_dims():
    heads = AdaptHeads(768, HeadConfig(hidden=256, num_domains=4), seed=0)
    hid = RNG.normal(0, 1, (1, 3, 768)).astype(np.float32)
    assert heads.pd_forward(hid).shape == (1, 2)
    assert heads.domain_forward(hid, GrlConfig()).shape == (1, 4)
    assert heads.pd.lin1.w.shape == (768, 256)
    assert heads.pd.lin2.w.shape == (256, 2)


def test_pd_head_constant_frames_equal_single():
    heads = tiny_heads()
    frame = RNG.normal(0, 1, 8).astype(np.float32)
    hid = np.tile(frame, (1, 7, 1))
    pooled = heads.pd_forward(hid)
    single = heads.pd_forward(frame[None, None, :])
    assert np.allclose(pooled, single, atol=1e-6)


def test_pd_head_permutation_invariant():
    heads = tiny_heads()
    hid = RNG.normal(0, 1, (1, 9, 8)).astype(np.float32)
    a = heads.pd_forward(hid)
    b = heads.pd_forward(hid[:, ::-1])
    assert np.allclose(a, b, atol=1e-6)


def test_domain_gradient_sign_flip():
    """Encoder-side gradient from the domain loss flips sign, equal magnitude,
    when reversal is toggled at lambda = 1."""
    heads = tiny_heads()
    hid = RNG.normal(0, 1, (2, 5, 8)).astype(np.float64)
    d = np.array([0, 1])

    logits = heads.domain_forward(hid, GrlConfig(1.0))
    _, dd = softmax_cross_entropy(logits, d)
    heads.zero_grads()
    g_rev = heads.domain_backward(dd.copy())

    logits2 = heads.dom.forward(hid)  # no reversal
    assert np.array_equal(logits, logits2)
    heads.zero_grads()
    g_plain = heads.dom.backward(dd.copy())
    assert np.allclose(g_rev, -g_plain, atol=1e-12)


def test_dat_losses_formula():
    rep, _, _ = dat_losses(np.array([[2.0, 0.0]]), np.array([0]),
                           np.array([[1.0, 1.0]]), np.array([1]), GrlConfig(0.1))
    assert abs(rep.l_dat - (rep.l_pd + 0.1 * rep.l_domain)) < 1e-12
    rep0, _, _ = dat_losses(np.array([[2.0, 0.0]]), np.array([0]),
                            np.array([[1.0, 1.0]]), np.array([1]), GrlConfig(0.0))
    assert rep0.l_dat == rep0.l_pd


def test_dat_losses_hand_computed_batch():
    pd_logits = np.array([[1.0, -1.0], [0.5, 0.5], [-2.0, 2.0], [0.0, 0.0]])
    y = np.array([0, 1, 1, 0])
    dom_logits = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                           [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
    d = np.array([0, 1, 2, 0])
    rep, _, _ = dat_losses(pd_logits, y, dom_logits, d, GrlConfig(0.5))

    def ce_row(logits, t):
        e = np.exp(logits - logits.max())
        return -np.log(e[t] / e.sum())

    l_pd = np.mean([ce_row(pd_logits[i], y[i]) for i in range(4)])
    l_dom = np.mean([ce_row(dom_logits[i], d[i]) for i in range(4)])
    assert abs(rep.l_pd - l_pd) < 1e-12
    assert abs(rep.l_domain - l_dom) < 1e-12
    assert abs(rep.l_dat - (l_pd + 0.5 * l_dom)) < 1e-12


def test_dat_losses_without_domain():
    rep, dpd, ddom = dat_losses(np.array([[1.0, 0.0]]), np.array([0]),
                                None, None, GrlConfig())
    assert rep.l_domain is None and ddom is None
    assert rep.l_dat == rep.l_pd


def test_finetune_requires_two_classes():
    ex = [FinetuneExample(np.zeros((5, 6)), 1, 0), FinetuneExample(np.zeros((5, 6)), 1, 1)]
    with pytest.raises(ValueError, match="PD and HC"):
        finetune(tiny_encoder(), tiny_heads(), ex, TrainConfig(epochs=1, batch_size=2))


def test_finetune_requires_two_domains_for_dat():
    ex = [FinetuneExample(np.zeros((5, 6)), 0, 0), FinetuneExample(np.zeros((5, 6)), 1, 0)]
    with pytest.raises(ValueError, match="two domains"):
        finetune(tiny_encoder(), tiny_heads(), ex,
                 TrainConfig(epochs=1, batch_size=2), dat_enabled=True)
    finetune(tiny_encoder(), tiny_heads(), ex,
             TrainConfig(epochs=1, batch_size=2, learning_rate=1e-4), dat_enabled=False)


def test_finetune_freeze_contract():
    enc = tiny_encoder(seed=1)
    heads = tiny_heads(seed=2)
    before = {n: p.copy() for n, p in enc.named_params()}
    head_before = {n: p.copy() for n, p in heads.named_params()}
    finetune(enc, heads, make_examples(), TrainConfig(epochs=2, batch_size=4,
                                                      learning_rate=1e-3, seed=3),
             freeze_encoder=True)
    for n, p in enc.named_params():
        assert np.array_equal(before[n], p), f"encoder tensor {n} moved while frozen"
    changed = any(not np.array_equal(head_before[n], p) for n, p in heads.named_params())
    assert changed


def test_finetune_lambda_zero_matches_plain_run():
    cfg = TrainConfig(epochs=2, batch_size=4, learning_rate=1e-3, seed=5)
    ex = make_examples()

    enc_a, heads_a = tiny_encoder(seed=1), tiny_heads(seed=2)
    finetune(enc_a, heads_a, ex, cfg, GrlConfig(0.0), dat_enabled=True)

    enc_b, heads_b = tiny_encoder(seed=1), tiny_heads(seed=2)
    finetune(enc_b, heads_b, ex, cfg, dat_enabled=False)

    for (na, pa), (nb, pb) in zip(enc_a.named_params(), enc_b.named_params()):
        assert na == nb
        assert np.array_equal(pa, pb), f"encoder tensor {na} diverged"
    pd_a = {n: p for n, p in heads_a.named_params() if n.startswith("pd.")}
    pd_b = {n: p for n, p in heads_b.named_params() if n.startswith("pd.")}
    for n in pd_a:
        assert np.array_equal(pd_a[n], pd_b[n]), f"pd tensor {n} diverged"


def test_finetune_pretraining_head_untouched():
    enc = tiny_encoder(seed=1)
    pre_head = {n: p.copy() for n, p in enc.head.named_params()}
    finetune(enc, tiny_heads(seed=2), make_examples(),
             TrainConfig(epochs=1, batch_size=4, learning_rate=1e-3, seed=3))
    for n, p in enc.head.named_params():
        assert np.array_equal(pre_head[n], p)


def test_finetune_learns_separable_task():
    enc, heads = tiny_encoder(seed=1), tiny_heads(seed=2)
    ex = make_examples(n_per_cell=6)
    curve = finetune(enc, heads, ex,
                     TrainConfig(epochs=15, batch_size=8, learning_rate=2e-3,
                                 seed=4, layerdrop_p=0.0))
    assert curve[-1]["l_pd"] < curve[0]["l_pd"]
    preds = predict_segments(enc, heads, ex)
    acc = np.mean([p["predicted_label"] == p["true_label"] for p in preds])
    assert acc >= 0.9


def test_predict_segment_fields():
    enc, heads = tiny_encoder(), tiny_heads()
    ex = [FinetuneExample(np.zeros((5, 6)), 1, 0, "spk", "utt")]
    (row,) = predict_segments(enc, heads, ex)
    assert row["utterance_id"] == "utt"
    assert row["speaker_id"] == "spk"
    assert row["true_label"] == "PD"
    assert row["predicted_label"] in ("PD", "HC")
    assert 0.0 <= row["score"] <= 1.0


def test_finetuned_checkpoint_roundtrip(tmp_path):
    enc, heads = tiny_encoder(seed=3), tiny_heads(seed=4)
    p = tmp_path / "ft.ckpt"
    save_finetuned(p, enc, heads, {"dat_enabled": True, "grl_lambda": 0.1})
    enc2, heads2, header = load_finetuned(p)
    assert header["dat_enabled"] is True
    assert header["grl_lambda"] == 0.1
    x = RNG.normal(0, 1, (1, 6, 6))
    h1, _ = enc.forward(x)
    h2, _ = enc2.forward(x)
    assert np.array_equal(h1, h2)
    assert np.array_equal(heads.pd_forward(h1), heads2.pd_forward(h2))
