import pytest

from pdvoice.config import (
    ConfigError,
    config_hash,
    encoder_config,
    grl_config,
    load_config,
    mask_spec,
    mfcc_config,
    silence_config,
    stage2_layer,
    synth_config,
    train_config,
)


def test_defaults_match_published_recipe():
    cfg = load_config()
    assert cfg["silence"]["rms_window"] == 481
    assert cfg["silence"]["rms_threshold"] == 0.0025
    assert cfg["silence"]["min_silence_ms"] == 500.0
    assert cfg["cluster"]["stage1_k"] == 100
    assert cfg["cluster"]["stage2_k"] == 500
    assert cfg["train"]["dapt"]["learning_rate"] == 3e-5
    assert cfg["train"]["dapt"]["batch_size"] == 128
    assert cfg["train"]["dapt"]["epochs"] == 80
    assert cfg["train"]["finetune"]["epochs"] == 40
    assert cfg["train"]["dapt"]["max_grad_norm"] == 1.0
    assert cfg["train"]["dapt"]["layerdrop_p"] == 0.1
    assert cfg["grl"]["lam"] == 0.1
    assert cfg["eval"]["folds"] == 5
    assert cfg["heads"]["hidden"] == 256
    assert cfg["heads"]["num_domains"] == 4
    assert cfg["mask"]["span_len"] == 10
    assert cfg["mask"]["start_prob"] == 0.08


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[silence]\nrms_windw = 400\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(p)


def test_unknown_section_rejected(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[nonsense]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        load_config(p)


def test_type_mismatch_rejected(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('[silence]\nrms_window = "wide"\n')
    with pytest.raises(ConfigError, match="expects int"):
        load_config(p)


def test_override_and_hash_stability(tmp_path):
    base = load_config()
    same = load_config()
    assert config_hash(base) == config_hash(same)
    tweaked = load_config(overrides={"grl.lam": "0.5"})
    assert tweaked["grl"]["lam"] == 0.5
    assert config_hash(tweaked) != config_hash(base)


def test_override_unknown_key():
    with pytest.raises(ConfigError):
        load_config(overrides={"grl.nope": "1"})


def test_typed_views_roundtrip(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(
        "[encoder]\ndim = 32\nlayers = 2\nheads = 2\n"
        "[cluster]\nstage1_k = 12\n[synth]\nnum_domains = 2\n")
    cfg = load_config(p)
    assert silence_config(cfg).rms_window == 481
    assert mfcc_config(cfg).dim == 39
    ecfg = encoder_config(cfg)
    assert ecfg.dim == 32 and ecfg.num_clusters == 12
    assert mask_spec(cfg).span_len == 10
    assert grl_config(cfg).lam == 0.1
    assert train_config(cfg, "dapt").epochs == 80
    assert train_config(cfg, "finetune").epochs == 40
    assert synth_config(cfg).num_domains == 2
    assert stage2_layer(cfg) == 1  # middle of a 2-layer stack


def test_stage2_layer_explicit():
    cfg = load_config(overrides={"cluster.stage2_layer": "3"})
    assert stage2_layer(cfg) == 3
