import struct

import numpy as np
import pytest

from pdvoice.audio import (
    AudioClip,
    AudioError,
    SilenceConfig,
    load_wav,
    remove_silence,
    resample,
    rms_series,
    save_wav,
)


def wav_bytes(fmt_code, channels, rate, bits, payload):
    hdr = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    hdr += b"fmt " + struct.pack(
        "<IHHIIHH", 16, fmt_code, channels, rate,
        rate * channels * bits // 8, channels * bits // 8, bits)
    hdr += b"data" + struct.pack("<I", len(payload))
    return hdr + payload


def tone(freq, seconds, rate=16000, amp=0.1):
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def fft_peak_hz(x, rate):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return np.argmax(spec) * rate / len(x)


# -- load_wav ----------------------------------------------------------------

def test_pcm16_scaling(tmp_path):
    payload = np.array([16384, -16384, 0, 32767], dtype="<i2").tobytes()
    p = tmp_path / "a.wav"
    p.write_bytes(wav_bytes(1, 1, 16000, 16, payload))
    clip = load_wav(p)
    assert clip.sample_rate == 16000
    assert clip.samples[0] == 0.5
    assert clip.samples[1] == -0.5
    assert clip.samples[2] == 0.0


def test_stereo_downmix_is_channel_mean(tmp_path):
    frames = np.array([8192, 16384, -8192, 8192], dtype="<i2").tobytes()  # two stereo frames
    p = tmp_path / "st.wav"
    p.write_bytes(wav_bytes(1, 2, 16000, 16, frames))
    clip = load_wav(p)
    assert np.allclose(clip.samples, [0.375, 0.0])


def test_float32_stereo(tmp_path):
    frames = np.array([0.2, 0.4], dtype="<f4").tobytes()
    p = tmp_path / "f.wav"
    p.write_bytes(wav_bytes(3, 2, 48000, 32, frames))
    clip = load_wav(p)
    assert clip.sample_rate == 48000
    assert abs(clip.samples[0] - 0.3) < 1e-7


def test_pcm24_scaling(tmp_path):
    val = 1 << 22  # half of full scale
    payload = struct.pack("<i", val)[:3] + struct.pack("<i", -(1 << 22))[:3]
    p = tmp_path / "b24.wav"
    p.write_bytes(wav_bytes(1, 1, 16000, 24, payload))
    clip = load_wav(p)
    assert np.allclose(clip.samples, [0.5, -0.5])


def test_pcm8_scaling(tmp_path):
    payload = bytes([192, 64, 128])
    p = tmp_path / "b8.wav"
    p.write_bytes(wav_bytes(1, 1, 8000, 8, payload))
    clip = load_wav(p)
    assert np.allclose(clip.samples, [0.5, -0.5, 0.0])


def test_mulaw_rejected_with_path(tmp_path):
    p = tmp_path / "mu.wav"
    p.write_bytes(wav_bytes(7, 1, 8000, 8, b"\x00\x01"))
    with pytest.raises(AudioError, match="unsupported encoding"):
        load_wav(p)
    with pytest.raises(AudioError, match="mu.wav"):
        load_wav(p)


def test_nonexistent_and_garbage(tmp_path):
    with pytest.raises(AudioError):
        load_wav(tmp_path / "missing.wav")
    p = tmp_path / "junk.wav"
    p.write_bytes(b"not a wav file at all")
    with pytest.raises(AudioError):
        load_wav(p)


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.9, 0.9, 2000)
    clip = AudioClip(x, 16000)
    p = tmp_path / "rt.wav"
    save_wav(clip, p)
    back = load_wav(p)
    assert back.sample_rate == 16000
    assert np.max(np.abs(back.samples - x)) <= 1.0 / 32768


# -- resample ----------------------------------------------------------------

def test_resample_3to1_length():
    clip = AudioClip(np.zeros(48000), 48000)
    out = resample(clip, 16000)
    assert out.sample_rate == 16000
    assert len(out.samples) == 16000


def test_resample_identity_path():
    x = np.linspace(-0.5, 0.5, 100)
    out = resample(AudioClip(x, 16000), 16000)
    assert np.array_equal(out.samples, x)


def test_resample_constant_preserved():
    out = resample(AudioClip(np.full(9600, 0.25), 48000), 16000)
    mid = out.samples[100:-100]
    assert np.max(np.abs(mid - 0.25)) < 1e-6


def test_resample_sine_fft_peak():
    x = tone(440.0, 1.0, rate=48000, amp=0.5)
    out = resample(AudioClip(x, 48000), 16000)
    bin_hz = 16000 / len(out.samples)
    assert abs(fft_peak_hz(out.samples, 16000) - 440.0) <= bin_hz


def test_resample_roundtrip_preserves_tone_bin():
    rng = np.random.default_rng(7)
    for freq in rng.uniform(100, 4000, 5):
        x = tone(freq, 0.5, rate=16000, amp=0.4)
        up = resample(AudioClip(x, 16000), 48000)
        back = resample(up, 16000)
        assert len(back.samples) == len(x)
        peak_orig = fft_peak_hz(x, 16000)
        peak_back = fft_peak_hz(back.samples, 16000)
        assert abs(peak_orig - peak_back) <= 16000 / len(x) + 1e-9


def test_resample_rejects_bad_rate():
    with pytest.raises(ValueError):
        resample(AudioClip(np.zeros(10), 16000), 0)


# -- rms_series ----------------------------------------------------------------

def test_rms_constant():
    clip = AudioClip(np.full(1000, 0.5), 16000)
    assert np.allclose(rms_series(clip, 481), 0.5)


def test_rms_zeros_and_alternating():
    assert np.allclose(rms_series(AudioClip(np.zeros(962), 16000), 481), 0.0)
    alt = np.tile([0.3, -0.3], 500)
    assert np.allclose(rms_series(AudioClip(alt, 16000), 481), 0.3)


def test_rms_partial_window_own_length():
    x = np.concatenate([np.full(481, 0.5), np.full(100, 0.2)])
    r = rms_series(AudioClip(x, 16000), 481)
    assert len(r) == 2
    assert np.allclose(r, [0.5, 0.2])


def test_rms_empty():
    assert len(rms_series(AudioClip(np.zeros(0), 16000), 481)) == 0


def test_rms_bounded_by_peak():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, 5000)
    r = rms_series(AudioClip(x, 16000), 481)
    assert np.all(r >= 0)
    assert np.all(r <= np.max(np.abs(x)) + 1e-12)


# -- remove_silence ----------------------------------------------------------

def reference_keep_mask(x, window, threshold, min_ms, rate=16000):
    """Brute-force loop implementation of the silence-removal rule."""
    n = len(x)
    keep = np.ones(n, dtype=bool)
    n_win = (n + window - 1) // window
    silent = []
    for w in range(n_win):
        seg = x[w * window: min((w + 1) * window, n)]
        silent.append(np.sqrt(np.mean(seg ** 2)) < threshold)
    w = 0
    while w < n_win:
        if silent[w]:
            j = w
            while j < n_win and silent[j]:
                j += 1
            lo, hi = w * window, min(j * window, n)
            if (hi - lo) / rate * 1000.0 > min_ms:
                keep[lo:hi] = False
            w = j
        else:
            w += 1
    return keep


def test_silence_long_gap_removed():
    x = np.concatenate([tone(220, 0.5), np.zeros(16000), tone(220, 0.5)])
    res = remove_silence(AudioClip(x, 16000))
    keep = reference_keep_mask(x, 481, 0.0025, 500.0)
    assert np.array_equal(res.clip.samples, x[keep])
    assert not res.fully_silent
    # every tone sample survives; only interior zeros are deleted
    assert len(res.clip.samples) < len(x)
    assert 0.98 <= res.clip.duration_sec <= 1.1
    assert np.sum(np.abs(res.clip.samples) > 0) == np.sum(np.abs(x) > 0)
    assert len(res.removed_spans) == 1
    lo, hi = res.removed_spans[0]
    assert (hi - lo) / 16000 > 0.5
    assert np.all(x[lo:hi] == 0)


def test_silence_short_pause_kept():
    x = np.concatenate([tone(220, 0.5), np.zeros(4800), tone(220, 0.5)])
    res = remove_silence(AudioClip(x, 16000))
    assert np.array_equal(res.clip.samples, x)
    assert res.removed_spans == []


def test_silence_fully_silent():
    res = remove_silence(AudioClip(np.zeros(32000), 16000))
    assert res.fully_silent
    assert len(res.clip.samples) == 0


def random_clip(rng):
    parts = []
    for _ in range(rng.integers(2, 8)):
        kind = rng.integers(0, 3)
        dur = rng.uniform(0.05, 1.2)
        n = int(dur * 16000)
        if kind == 0:
            parts.append(np.zeros(n))
        elif kind == 1:
            parts.append(tone(rng.uniform(100, 500), dur, amp=rng.uniform(0.05, 0.5))[:n])
        else:
            parts.append(rng.normal(0, 0.0005, n))  # sub-threshold hiss
    return np.concatenate(parts)


def test_silence_matches_reference_and_idempotent():
    rng = np.random.default_rng(11)
    cfg = SilenceConfig()
    for _ in range(25):
        x = random_clip(rng)
        res = remove_silence(AudioClip(x, 16000), cfg)
        keep = reference_keep_mask(x, cfg.rms_window, cfg.rms_threshold, cfg.min_silence_ms)
        assert np.array_equal(res.clip.samples, x[keep])
        again = remove_silence(res.clip, cfg)
        assert np.array_equal(again.clip.samples, res.clip.samples)
        assert res.clip.duration_sec <= len(x) / 16000 + 1e-12


def test_silence_requires_work_rate():
    with pytest.raises(ValueError):
        remove_silence(AudioClip(np.zeros(100), 8000))


def test_silence_config_validation():
    with pytest.raises(ValueError):
        SilenceConfig(rms_window=0)
    with pytest.raises(ValueError):
        SilenceConfig(rms_threshold=-1)
