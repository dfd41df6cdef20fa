"""Synthetic stand-ins for speech corpora.

Each artificial speaker emits noise confined to its own frequency band, so
speakers are acoustically distinct while no real recordings are needed.
Used by the test suite and for smoke-testing the command line pipeline.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import Waveform, hz_to_mel, mel_to_hz, write_wav
from .simulation import CorpusPools


def band_noise(n: int, low: float, high: float, rng: np.random.Generator,
               sample_rate: int = 8000) -> np.ndarray:
    """White noise restricted to ``[low, high]`` Hz by an FFT mask, unit RMS."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(freqs < low) | (freqs > high)] = 0.0
    x = np.fft.irfft(spec, n)
    rms = np.sqrt(np.mean(x * x))
    return x / rms if rms > 0 else x


def speaker_bands(n_speakers: int, rng: np.random.Generator, low: float = 150.0,
                  high: float = 3600.0) -> list[tuple[float, float]]:
    """Non-overlapping mel-spaced bands, shuffled so band order is unrelated to index."""
    edges = mel_to_hz(np.linspace(hz_to_mel(low), hz_to_mel(high), n_speakers + 1))
    bands = [(edges[i], edges[i + 1]) for i in range(n_speakers)]
    return [bands[i] for i in rng.permutation(n_speakers)]


def random_bands(n_speakers: int, rng: np.random.Generator, low: float = 150.0,
                 high: float = 3600.0, width: float = 0.25) -> list[tuple[float, float]]:
    """Bands spanning `width` of the mel range at random positions (may overlap)."""
    lo, hi = hz_to_mel(low), hz_to_mel(high)
    span = width * (hi - lo)
    starts = rng.uniform(lo, hi - span, n_speakers)
    return [(float(mel_to_hz(a)), float(mel_to_hz(a + span))) for a in starts]


def make_utterance(n: int, band, rng, sample_rate=8000, fade=0.01) -> np.ndarray:
    x = band_noise(n, band[0], band[1], rng, sample_rate)
    gain = 0.1 * 10 ** (rng.uniform(-3, 3) / 20)
    k = min(int(fade * sample_rate), n // 2)
    if k > 0:
        ramp = np.linspace(0.0, 1.0, k)
        x[:k] *= ramp
        x[-k:] *= ramp[::-1]
    return gain * x


def make_rir(rng, sample_rate=8000, length=0.1, decay=0.03) -> np.ndarray:
    n = int(length * sample_rate)
    t = np.arange(n) / sample_rate
    rir = 0.2 * rng.standard_normal(n) * np.exp(-t / decay)
    rir[0] = 1.0
    return rir


def make_synthetic_pools(n_speakers: int = 16, utterances_per_speaker: int = 12,
                         min_duration: float = 0.8, max_duration: float = 2.5,
                         n_noises: int = 3, n_rirs: int = 4, noise_duration: float = 3.0,
                         sample_rate: int = 8000, seed: int = 0,
                         band_layout: str = "partition") -> CorpusPools:
    """In-memory pools of band-limited speakers, pink-ish noises and decaying RIRs.

    ``band_layout="partition"`` gives every speaker a disjoint band, which
    caps the population at a few dozen; ``"random"`` draws a band per speaker
    independently and scales to any number of speakers.
    """
    rng = np.random.default_rng(seed)
    if band_layout == "partition":
        bands = speaker_bands(n_speakers, rng)
    elif band_layout == "random":
        bands = random_bands(n_speakers, rng)
    else:
        raise ValueError(f"unknown band_layout {band_layout!r}")
    speakers = {}
    for s, band in enumerate(bands):
        utts = []
        for _ in range(utterances_per_speaker):
            n = int(rng.uniform(min_duration, max_duration) * sample_rate)
            utts.append(Waveform(make_utterance(n, band, rng, sample_rate), sample_rate))
        speakers[f"spk{s:03d}"] = utts
    noises = []
    for _ in range(n_noises):
        n = int(noise_duration * sample_rate)
        spec = np.fft.rfft(rng.standard_normal(n))
        spec /= np.sqrt(np.maximum(np.arange(len(spec)), 1))
        x = np.fft.irfft(spec, n)
        noises.append(Waveform(0.05 * x / np.sqrt(np.mean(x * x)), sample_rate))
    rirs = [Waveform(make_rir(rng, sample_rate), sample_rate) for _ in range(n_rirs)]
    return CorpusPools.from_waveforms(speakers, noises, rirs)


def write_synthetic_corpus(out_dir, **kwargs) -> dict[str, Path]:
    """Write a synthetic pool as WAV files plus the three manifests."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pools = make_synthetic_pools(**kwargs)
    spk_lines = []
    for spk, ids in pools.speakers.items():
        for uid in ids:
            path = out_dir / (uid.replace("/", "_") + ".wav")
            write_wav(path, pools.audio[uid])
            spk_lines.append(f"{spk}\t{path}\n")
    manifests = {}
    for name, ids in (("noises", pools.noises), ("rirs", pools.rirs)):
        lines = []
        for uid in ids:
            path = out_dir / (uid.replace("/", "_") + ".wav")
            w = pools.audio[uid]
            if name == "rirs":
                # 16-bit storage needs |x| < 1; rescaling a RIR only changes overall gain.
                w = Waveform(w.samples / (1.01 * np.max(np.abs(w.samples))), w.sample_rate)
            write_wav(path, w)
            lines.append(f"{path}\n")
        manifests[name] = out_dir / f"{name}.list"
        manifests[name].write_text("".join(lines))
    manifests["speakers"] = out_dir / "speakers.list"
    manifests["speakers"].write_text("".join(spk_lines))
    return manifests
