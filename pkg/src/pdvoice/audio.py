"""Audio ingestion and preprocessing.

Loads RIFF WAV files, resamples to the 16 kHz working rate with a polyphase
Kaiser-windowed sinc filter, and removes long silent regions by thresholding
windowed RMS energy. All functions are pure; clips carry float64 samples in
[-1, 1).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WORK_RATE = 16000


class AudioError(Exception):
    """Unreadable or unsupported audio input."""


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("AudioClip samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("AudioClip samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration_sec(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class SilenceConfig:
    rms_window: int = 481
    rms_threshold: float = 0.0025
    min_silence_ms: float = 500.0

    def __post_init__(self):
        if self.rms_window < 1:
            raise ValueError("rms_window must be >= 1")
        if self.rms_threshold < 0:
            raise ValueError("rms_threshold must be >= 0")
        if self.min_silence_ms < 0:
            raise ValueError("min_silence_ms must be >= 0")


@dataclass
class SilenceResult:
    clip: AudioClip
    removed_spans: list[tuple[int, int]] = field(default_factory=list)
    fully_silent: bool = False


# -- WAV I/O ---------------------------------------------------------------

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE

_FORMAT_NAMES = {
    2: "ADPCM",
    6: "A-law",
    7: "mu-law",
    0x55: "MP3",
}


def load_wav(path: str | Path) -> AudioClip:
    """Read a PCM or IEEE-float WAV file as a mono clip scaled to [-1, 1).

    Stereo and multichannel files are downmixed by channel mean. Compressed
    encodings (mu-law, ADPCM, ...) are rejected.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise AudioError(f"{path}: cannot read file: {e}") from e
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioError(f"{path}: not a RIFF WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (csize,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        body = raw[pos + 8:pos + 8 + csize]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + csize + (csize & 1)  # chunks are word-aligned
    if fmt is None or len(fmt) < 16:
        raise AudioError(f"{path}: missing fmt chunk")
    if data is None:
        raise AudioError(f"{path}: missing data chunk")

    code, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if code == _WAVE_FORMAT_EXTENSIBLE and len(fmt) >= 26:
        (code,) = struct.unpack("<H", fmt[24:26])
    if code not in (_WAVE_FORMAT_PCM, _WAVE_FORMAT_IEEE_FLOAT):
        name = _FORMAT_NAMES.get(code, f"format code {code}")
        raise AudioError(f"{path}: unsupported encoding ({name}); only PCM and IEEE float WAV are readable")
    if channels < 1:
        raise AudioError(f"{path}: invalid channel count {channels}")
    if rate <= 0:
        raise AudioError(f"{path}: invalid sample rate {rate}")

    if code == _WAVE_FORMAT_PCM:
        if bits == 8:
            x = np.frombuffer(data, dtype=np.uint8).astype(np.float64)
            x = (x - 128.0) / 128.0
        elif bits == 16:
            x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
        elif bits == 24:
            b = np.frombuffer(data[: (len(data) // 3) * 3], dtype=np.uint8).reshape(-1, 3)
            x = (
                b[:, 0].astype(np.int32)
                | (b[:, 1].astype(np.int32) << 8)
                | (b[:, 2].astype(np.int32) << 16)
            )
            x = np.where(x >= 1 << 23, x - (1 << 24), x).astype(np.float64) / float(1 << 23)
        else:
            raise AudioError(f"{path}: unsupported PCM bit depth {bits}")
    else:
        if bits == 32:
            x = np.frombuffer(data, dtype="<f4").astype(np.float64)
        elif bits == 64:
            x = np.frombuffer(data, dtype="<f8").astype(np.float64)
        else:
            raise AudioError(f"{path}: unsupported float bit depth {bits}")
        if not np.all(np.isfinite(x)):
            raise AudioError(f"{path}: non-finite samples in float WAV")

    if channels > 1:
        x = x[: (len(x) // channels) * channels].reshape(-1, channels).mean(axis=1)
    x = np.clip(x, -1.0, np.nextafter(1.0, 0.0))
    return AudioClip(samples=x, sample_rate=rate, source_id=str(path))


def save_wav(clip: AudioClip, path: str | Path) -> None:
    """Write a clip as mono 16-bit PCM WAV."""
    x = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    data = x.tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, clip.sample_rate,
                                 clip.sample_rate * 2, 2, 16)
    hdr += b"data" + struct.pack("<I", len(data))
    Path(path).write_bytes(hdr + data)


# -- Resampling ------------------------------------------------------------

_TAPS_PER_PHASE = 64
_KAISER_BETA = 8.6
_filter_cache: dict[tuple[int, int], np.ndarray] = {}


def _polyphase_filter(l_up: int, m_down: int) -> np.ndarray:
    """Kaiser-windowed sinc low-pass, 64 taps per phase, odd length."""
    key = (l_up, m_down)
    if key not in _filter_cache:
        cutoff = 0.5 / max(l_up, m_down)  # cycles per sample at the upsampled rate
        length = _TAPS_PER_PHASE * l_up + 1
        n = np.arange(length) - (length - 1) / 2.0
        h = 2.0 * cutoff * np.sinc(2.0 * cutoff * n)
        h *= np.kaiser(length, _KAISER_BETA)
        _filter_cache[key] = h
    return _filter_cache[key]


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Resample to target_rate; identity when rates already match."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if len(clip.samples) == 0:
        raise ValueError("cannot resample an empty clip")
    if clip.sample_rate == target_rate:
        return AudioClip(clip.samples.copy(), target_rate, clip.source_id)

    g = math.gcd(clip.sample_rate, target_rate)
    l_up, m_down = target_rate // g, clip.sample_rate // g
    h = _polyphase_filter(l_up, m_down)
    delay = (len(h) - 1) // 2  # = 32 * l_up, integer group delay
    taps = _TAPS_PER_PHASE + 1
    h_pad = np.zeros(taps * l_up)
    h_pad[: len(h)] = h
    # Per-phase DC normalization so constants survive resampling exactly.
    phase_gain = h_pad.reshape(taps, l_up).sum(axis=0)

    x = clip.samples
    n_in = len(x)
    n_out = int(round(n_in * l_up / m_down))
    x_padded = np.concatenate([np.zeros(taps), x, np.zeros(taps)])
    y = np.empty(n_out)
    t = np.arange(taps)
    block = 1 << 16
    for start in range(0, n_out, block):
        n = np.arange(start, min(start + block, n_out))
        pos = n * m_down + delay
        base = pos // l_up
        phase = pos % l_up
        coeffs = h_pad[phase[:, None] + t[None, :] * l_up]
        src = base[:, None] - t[None, :]
        gathered = x_padded[np.clip(src, -taps, n_in - 1) + taps]
        gathered[(src < 0) | (src >= n_in)] = 0.0
        y[n] = (coeffs * gathered).sum(axis=1) / phase_gain[phase]
    return AudioClip(y, target_rate, clip.source_id)


# -- Silence removal -------------------------------------------------------

def rms_series(clip: AudioClip, window: int) -> np.ndarray:
    """RMS per consecutive non-overlapping window; the final partial window
    is normalized by its own length."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = clip.samples
    n = len(x)
    if n == 0:
        return np.zeros(0)
    n_full = n // window
    sq = x * x
    out = []
    if n_full:
        out.append(np.sqrt(sq[: n_full * window].reshape(n_full, window).mean(axis=1)))
    if n % window:
        out.append(np.sqrt(np.atleast_1d(sq[n_full * window:].mean())))
    return np.concatenate(out)


def remove_silence(clip: AudioClip, cfg: SilenceConfig | None = None) -> SilenceResult:
    """Delete maximal runs of sub-threshold RMS windows longer than
    cfg.min_silence_ms; shorter pauses are kept (they carry pace information).

    Run length is measured in samples covered by the windows. Output samples
    are an order-preserving, sample-exact subsequence of the input.
    """
    cfg = cfg or SilenceConfig()
    if clip.sample_rate != WORK_RATE:
        raise ValueError(f"remove_silence expects {WORK_RATE} Hz audio, got {clip.sample_rate}")
    x = clip.samples
    n = len(x)
    if n == 0:
        return SilenceResult(AudioClip(x.copy(), clip.sample_rate, clip.source_id),
                             fully_silent=True)

    rms = rms_series(clip, cfg.rms_window)
    silent = rms < cfg.rms_threshold
    min_span = cfg.min_silence_ms / 1000.0 * clip.sample_rate

    keep = np.ones(n, dtype=bool)
    removed: list[tuple[int, int]] = []
    i = 0
    while i < len(silent):
        if not silent[i]:
            i += 1
            continue
        j = i
        while j < len(silent) and silent[j]:
            j += 1
        start = i * cfg.rms_window
        stop = min(j * cfg.rms_window, n)
        if stop - start > min_span:
            keep[start:stop] = False
            removed.append((start, stop))
        i = j

    out = AudioClip(x[keep], clip.sample_rate, clip.source_id)
    return SilenceResult(out, removed_spans=removed, fully_silent=len(out.samples) == 0)
