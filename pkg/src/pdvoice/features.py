"""39-dimensional MFCC features and pooled per-utterance vectors.

Recipe: pre-emphasis 0.97, 25 ms Hamming frames at 10 ms hop, power spectrum,
26 triangular mel filters, log with floor, orthonormal DCT-II to 13 cepstra,
then delta and delta-delta via +/-2-frame regression. Column layout is
[c0..c12, d0..d12, dd0..dd12].
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioClip


@dataclass
class MfccConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    mel_filters: int = 26
    base_coeffs: int = 13
    delta: bool = True
    delta_delta: bool = True
    log_floor: float = 1e-10
    preemphasis: float = 0.97

    def __post_init__(self):
        if self.base_coeffs > self.mel_filters:
            raise ValueError("base_coeffs must be <= mel_filters")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def dim(self) -> int:
        return self.base_coeffs * (1 + self.delta + self.delta_delta)


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (frames, dim), time order
    frame_rate: float   # frames per second

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix must be finite")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, nfft: int, rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Triangular mel filterbank over rfft bins.

    Returns (filters, centers_hz) with filters of shape (n_filters, nfft//2+1).
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2.0), n_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * rate / nfft
    fb = np.zeros((n_filters, len(freqs)))
    for j in range(n_filters):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[j] = np.maximum(0.0, np.minimum(rising, falling))
    return fb, edges[1:-1]


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II, rows = output coefficients."""
    n = np.arange(n_in)
    k = np.arange(n_out)[:, None]
    m = np.cos(np.pi * (2 * n[None, :] + 1) * k / (2.0 * n_in))
    m *= np.sqrt(2.0 / n_in)
    m[0] /= np.sqrt(2.0)
    return m


def _deltas(c: np.ndarray) -> np.ndarray:
    """+/-2-frame regression deltas with edge replication."""
    pad = np.concatenate([c[:1], c[:1], c, c[-1:], c[-1:]], axis=0)
    return (pad[3:-1] - pad[1:-3] + 2.0 * (pad[4:] - pad[:-4])) / 10.0


def mfcc(clip: AudioClip, cfg: MfccConfig | None = None) -> FeatureMatrix:
    """Compute the MFCC matrix for one clip (16 kHz expected)."""
    cfg = cfg or MfccConfig()
    rate = clip.sample_rate
    frame_len = int(round(cfg.frame_ms / 1000.0 * rate))
    hop = int(round(cfg.hop_ms / 1000.0 * rate))
    x = clip.samples
    if len(x) < frame_len:
        raise ValueError(f"clip shorter than one frame ({len(x)} < {frame_len} samples)")

    emph = np.concatenate([x[:1], x[1:] - cfg.preemphasis * x[:-1]])
    n_frames = 1 + (len(x) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = emph[idx] * np.hamming(frame_len)[None, :]

    nfft = 1
    while nfft < frame_len:
        nfft *= 2
    power = np.abs(np.fft.rfft(frames, nfft, axis=1)) ** 2 / nfft
    fb, _ = mel_filterbank(cfg.mel_filters, nfft, rate)
    logmel = np.log(np.maximum(power @ fb.T, cfg.log_floor))
    cep = logmel @ dct_matrix(cfg.base_coeffs, cfg.mel_filters).T

    cols = [cep]
    if cfg.delta:
        d = _deltas(cep)
        cols.append(d)
        if cfg.delta_delta:
            cols.append(_deltas(d))
    return FeatureMatrix(np.concatenate(cols, axis=1), frame_rate=rate / hop)


def pooled_vector(m: FeatureMatrix) -> np.ndarray:
    """Per-utterance exemplar: per-column mean concatenated with per-column
    population standard deviation."""
    if m.num_frames < 1:
        raise ValueError("cannot pool an empty feature matrix")
    return np.concatenate([m.values.mean(axis=0), m.values.std(axis=0)])


# -- Feature cache -----------------------------------------------------------
# One file per utterance: a JSON header line, then row-major float32 LE values.

def save_features(m: FeatureMatrix, path: str | Path, config_hash: str = "") -> None:
    header = {
        "frames": m.num_frames,
        "dim": m.dim,
        "frame_rate": m.frame_rate,
        "dtype": "f4le",
        "config_hash": config_hash,
    }
    payload = m.values.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)


def load_features(path: str | Path) -> tuple[FeatureMatrix, str]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = fh.read()
    values = np.frombuffer(payload, dtype="<f4").reshape(header["frames"], header["dim"])
    return FeatureMatrix(values.astype(np.float64), header["frame_rate"]), header.get("config_hash", "")


def mfcc_config_hash(cfg: MfccConfig) -> str:
    blob = json.dumps(vars(cfg), sort_keys=True).encode("utf-8")
    return base64.b16encode(hashlib.sha256(blob).digest()[:8]).decode("ascii").lower()
