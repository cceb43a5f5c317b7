"""Deterministic synthetic multi-domain speech-like corpus.

Utterances are sums of jittered glottal harmonics shaped by per-speaker
formant resonances, assembled as syllables separated by pauses. Domains
differ in spectral tilt and base pitch offset (microphone/language surrogate);
the PD class adds amplitude tremor, cycle-length jitter, and longer pauses.
Not a clinical simulator: factors exist to create controlled, recoverable
structure for pipeline verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, save_wav
from .manifest import Manifest, UtteranceRecord

RATE = 16000


@dataclass
class ClassFactors:
    tremor_depth: float
    jitter_pct: float
    pause_mult: float


@dataclass
class SynthConfig:
    num_domains: int = 2
    speakers_per_cell: int = 5      # per (domain x class) cell
    utterances_per_speaker: int = 4
    utterance_seconds: float = 2.0
    seed: int = 0
    # per-domain surrogate recording/language factors; tilt_jitter adds
    # per-utterance slope noise so domain clouds overlap instead of sitting
    # at point masses
    tilt_db_per_oct: tuple = (-10.0, 10.0, -3.0, 16.0)
    f0_offset_hz: tuple = (0.0, 80.0, -30.0, 120.0)
    tilt_jitter: float = 0.0
    # class factors (PD voice alterations vs controls), calibrated so the
    # leave-one-speaker-out pooled-MFCC probe recovers the class and a
    # held-out-speaker probe recovers the domain (see probe.py oracles)
    hc: ClassFactors = field(default_factory=lambda: ClassFactors(0.02, 0.15, 1.0))
    pd: ClassFactors = field(default_factory=lambda: ClassFactors(0.55, 4.5, 3.2))
    noise_floor: float = 1e-4

    def __post_init__(self):
        if not 1 <= self.num_domains <= len(self.tilt_db_per_oct):
            raise ValueError(f"num_domains must be in [1, {len(self.tilt_db_per_oct)}]")
        if self.speakers_per_cell < 1 or self.utterances_per_speaker < 1:
            raise ValueError("speakers_per_cell and utterances_per_speaker must be >= 1")


@dataclass
class SpeakerVoice:
    f0: float
    formants: np.ndarray      # (3,) Hz
    bandwidths: np.ndarray    # (3,) Hz
    tremor_hz: float
    factors: ClassFactors
    tilt: float


def _speaker_voice(cfg: SynthConfig, domain: int, label: str, idx: int) -> SpeakerVoice:
    rng = np.random.default_rng([cfg.seed, 7, domain, 0 if label == "HC" else 1, idx])
    fac = cfg.pd if label == "PD" else cfg.hc
    return SpeakerVoice(
        f0=rng.uniform(105.0, 185.0) + cfg.f0_offset_hz[domain],
        formants=np.array([rng.uniform(500, 900), rng.uniform(1150, 1750),
                           rng.uniform(2350, 2950)]),
        bandwidths=np.array([rng.uniform(80, 140), rng.uniform(90, 160),
                             rng.uniform(110, 190)]),
        tremor_hz=rng.uniform(4.0, 7.0),
        factors=fac,
        tilt=cfg.tilt_db_per_oct[domain],
    )


def _formant_gain(freqs: np.ndarray, voice: SpeakerVoice) -> np.ndarray:
    gains = np.zeros_like(freqs)
    for amp, f_c, bw in zip((1.0, 0.63, 0.35), voice.formants, voice.bandwidths):
        gains += amp * bw ** 2 / ((freqs - f_c) ** 2 + bw ** 2)
    return gains


def _tilt_gain(freqs: np.ndarray, tilt_db_per_oct: float) -> np.ndarray:
    octaves = np.log2(np.maximum(freqs, 60.0) / 200.0)
    return 10.0 ** (tilt_db_per_oct * octaves / 20.0)


def _syllable(voice: SpeakerVoice, seconds: float, rng: np.random.Generator,
              tilt: float | None = None) -> np.ndarray:
    """One voiced segment: harmonics of a jittered pulse train through the
    speaker's formant envelope and the domain tilt."""
    tilt = voice.tilt if tilt is None else tilt
    n = int(round(seconds * RATE))
    f0 = voice.f0 * rng.uniform(0.94, 1.06)
    # per-cycle lengths with multiplicative jitter
    jitter = voice.factors.jitter_pct / 100.0
    periods = []
    total = 0
    while total < n:
        p = RATE / (f0 * max(rng.normal(1.0, jitter), 0.5))
        periods.append(p)
        total += p
    # continuous phase: 2*pi per glottal cycle
    bounds = np.concatenate([[0.0], np.cumsum(periods)])
    t = np.arange(n, dtype=np.float64)
    cycle = np.searchsorted(bounds, t, side="right") - 1
    frac = (t - bounds[cycle]) / np.asarray(periods)[cycle]
    phase = 2.0 * np.pi * (cycle + frac)

    n_harm = max(int(7600.0 / f0), 1)
    k = np.arange(1, n_harm + 1, dtype=np.float64)
    freqs = k * f0
    amps = _formant_gain(freqs, voice) * _tilt_gain(freqs, tilt) / k
    sig = (np.sin(np.outer(k, phase)) * amps[:, None]).sum(axis=0)

    # raised-cosine attack and decay, 20 ms
    edge = min(int(0.02 * RATE), n // 2)
    env = np.ones(n)
    ramp = 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi, edge)))
    env[:edge] = ramp
    env[-edge:] = ramp[::-1]
    peak = np.max(np.abs(sig))
    return sig * env / (peak if peak > 0 else 1.0)


def synth_utterance(cfg: SynthConfig, voice: SpeakerVoice,
                    rng: np.random.Generator) -> np.ndarray:
    n_total = int(round(cfg.utterance_seconds * RATE))
    tilt = voice.tilt + rng.uniform(-cfg.tilt_jitter, cfg.tilt_jitter)
    parts = [np.zeros(int(rng.uniform(0.02, 0.05) * RATE))]
    produced = sum(len(p) for p in parts)
    while produced < n_total:
        syl = _syllable(voice, rng.uniform(0.12, 0.30), rng, tilt)
        gap_s = rng.uniform(0.04, 0.10) * voice.factors.pause_mult
        if rng.random() < 0.05:
            gap_s = rng.uniform(0.55, 0.8)  # occasional long silence for prep to remove
        parts.append(syl)
        parts.append(np.zeros(int(gap_s * RATE)))
        produced += len(syl) + int(gap_s * RATE)
    x = np.concatenate(parts)[:n_total]
    x = 0.35 * x
    x *= 1.0 + voice.factors.tremor_depth * np.sin(
        2.0 * np.pi * voice.tremor_hz * np.arange(len(x)) / RATE
        + rng.uniform(0, 2 * np.pi))
    # noise floor shaped by the domain tilt (recording-chain coloration)
    noise = rng.normal(0.0, 1.0, len(x))
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(len(x), 1.0 / RATE)
    spec *= _tilt_gain(np.maximum(freqs, 60.0), tilt)
    noise = np.fft.irfft(spec, len(x))
    x += cfg.noise_floor * noise / max(np.std(noise), 1e-12)
    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.99 / peak
    return x


def generate(cfg: SynthConfig, out_dir: str | Path) -> Manifest:
    """Write WAV files and the corpus manifest; byte-identical for one seed."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        wav_dir = out_dir / "wav"
        wav_dir.mkdir(exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create corpus directory {out_dir}: {e}") from e

    manifest = Manifest()
    for domain in range(cfg.num_domains):
        for c_idx, label in enumerate(("HC", "PD")):
            for s in range(cfg.speakers_per_cell):
                voice = _speaker_voice(cfg, domain, label, s)
                speaker_id = f"d{domain}{label.lower()}{s:03d}"
                for u in range(cfg.utterances_per_speaker):
                    rng = np.random.default_rng([cfg.seed, domain, c_idx, s, u])
                    x = synth_utterance(cfg, voice, rng)
                    uid = f"{speaker_id}_u{u:02d}"
                    path = wav_dir / f"{uid}.wav"
                    save_wav(AudioClip(x, RATE, uid), path)
                    manifest.append(UtteranceRecord(
                        utterance_id=uid, path=str(path), speaker_id=speaker_id,
                        label=label, domain=domain,
                        duration_sec=len(x) / RATE))
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


def split_unlabeled(manifest: Manifest, fraction: float,
                    seed: int = 0) -> tuple[Manifest, Manifest]:
    """Speaker-disjoint split into (unlabeled pretraining side, labeled side).

    The unlabeled side gets round(fraction * n_speakers) speakers, allocated
    across (domain, class) cells by largest remainder, and its labels erased.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    by_speaker = manifest.by_speaker()
    speakers = sorted(by_speaker)
    cells: dict[tuple[int, str], list[str]] = {}
    for spk in speakers:
        rec = by_speaker[spk][0]
        cells.setdefault((rec.domain, rec.label), []).append(spk)

    n_unlabeled = int(round(fraction * len(speakers)))
    quotas = {key: fraction * len(spks) for key, spks in cells.items()}
    take = {key: int(np.floor(q)) for key, q in quotas.items()}
    short = n_unlabeled - sum(take.values())
    for key in sorted(cells, key=lambda k: (-(quotas[k] - np.floor(quotas[k])), k)):
        if short <= 0:
            break
        if take[key] < len(cells[key]):
            take[key] += 1
            short -= 1

    rng = np.random.default_rng(seed)
    unlabeled_speakers = set()
    for key in sorted(cells):
        spks = cells[key]
        order = [spks[i] for i in rng.permutation(len(spks))]
        unlabeled_speakers.update(order[: take[key]])

    unlabeled, labeled = Manifest(), Manifest()
    for rec in manifest:
        if rec.speaker_id in unlabeled_speakers:
            unlabeled.append(UtteranceRecord(
                utterance_id=rec.utterance_id, path=rec.path,
                speaker_id=rec.speaker_id, label="none", domain=rec.domain,
                duration_sec=rec.duration_sec))
        else:
            labeled.append(rec)
    remaining = {r.label for r in labeled}
    if not {"PD", "HC"} <= remaining:
        raise ValueError("split would leave the labeled side without both classes")
    return unlabeled, labeled
