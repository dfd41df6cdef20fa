"""Audio I/O and signal primitives.

Everything here is a pure function of its inputs. Waveforms are mono
float64 arrays; 16-bit PCM WAV is the only on-disk format.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .exceptions import (
    ConfigurationError,
    DegenerateSignalError,
    EmptyInputError,
    FormatError,
    UnsupportedFormatError,
)

SAMPLE_RATE = 8000
FRAME_LENGTH = 0.025
FRAME_SHIFT = 0.010
FFT_SIZE = 256
NUM_MEL_BINS = 23
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ConfigurationError(f"waveform must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ConfigurationError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ConfigurationError(f"invalid sample rate {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV file, scaling samples to [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as f:
            n_channels = f.getnchannels()
            width = f.getsampwidth()
            rate = f.getframerate()
            raw = f.readframes(f.getnframes())
    except wave.Error as exc:
        if "unknown format" in str(exc):
            raise UnsupportedFormatError(f"{path}: {exc}") from exc
        raise FormatError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if n_channels != 1:
        raise UnsupportedFormatError(f"{path}: {n_channels} channels, only mono is supported")
    if width != 2:
        raise UnsupportedFormatError(f"{path}: {8 * width}-bit samples, only 16-bit is supported")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    """Write `w` as 16-bit PCM, clipping to the representable range."""
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(w.sample_rate))
        f.writeframes(pcm.tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    """Triangular HTK-mel filters over the one-sided FFT spectrum."""

    num_bins: int = NUM_MEL_BINS
    fft_size: int = FFT_SIZE
    sample_rate: int = SAMPLE_RATE
    low_freq: float = 0.0
    high_freq: float | None = None
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        high = self.sample_rate / 2 if self.high_freq is None else self.high_freq
        if not 0 <= self.low_freq < high <= self.sample_rate / 2:
            raise ConfigurationError(f"invalid mel range [{self.low_freq}, {high}]")
        edges = np.linspace(hz_to_mel(self.low_freq), hz_to_mel(high), self.num_bins + 2)
        bin_mel = hz_to_mel(np.arange(self.fft_size // 2 + 1) * self.sample_rate / self.fft_size)
        left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
        rising = (bin_mel - left) / (center - left)
        falling = (right - bin_mel) / (right - center)
        weights = np.maximum(0.0, np.minimum(rising, falling))
        if np.any(weights.sum(axis=1) <= 0):
            raise ConfigurationError("FFT resolution too coarse for the requested mel bins")
        object.__setattr__(self, "weights", weights)

    @property
    def center_frequencies(self) -> np.ndarray:
        high = self.sample_rate / 2 if self.high_freq is None else self.high_freq
        edges = np.linspace(hz_to_mel(self.low_freq), hz_to_mel(high), self.num_bins + 2)
        return mel_to_hz(edges[1:-1])


def num_frames(n_samples: int, frame_len: int, frame_shift: int) -> int:
    if n_samples < frame_len:
        return 0
    return 1 + (n_samples - frame_len) // frame_shift


def frame_signal(samples: np.ndarray, frame_len: int, frame_shift: int) -> np.ndarray:
    n = num_frames(len(samples), frame_len, frame_shift)
    if n == 0:
        raise EmptyInputError(
            f"signal of {len(samples)} samples is shorter than one frame ({frame_len})"
        )
    windows = np.lib.stride_tricks.sliding_window_view(samples, frame_len)
    return windows[: (n - 1) * frame_shift + 1 : frame_shift]


def stft_logmel(
    w: Waveform,
    frame_length: float = FRAME_LENGTH,
    frame_shift: float = FRAME_SHIFT,
    fb: MelFilterbank | None = None,
    floor: float = LOG_FLOOR,
) -> np.ndarray:
    """Log mel-filterbank energies, one row per 25 ms Hamming frame.

    Returns an array of shape ``(1 + (L - frame_len) // shift, fb.num_bins)``.
    """
    if fb is None:
        fb = MelFilterbank(sample_rate=w.sample_rate)
    if fb.sample_rate != w.sample_rate:
        raise ConfigurationError(
            f"filterbank rate {fb.sample_rate} Hz != waveform rate {w.sample_rate} Hz"
        )
    frame_len = int(round(frame_length * w.sample_rate))
    shift = int(round(frame_shift * w.sample_rate))
    if frame_len > fb.fft_size:
        raise ConfigurationError(f"frame of {frame_len} samples exceeds FFT size {fb.fft_size}")
    frames = frame_signal(w.samples, frame_len, shift) * np.hamming(frame_len)
    power = np.abs(np.fft.rfft(frames, n=fb.fft_size, axis=1)) ** 2
    return np.log(np.maximum(power @ fb.weights.T, floor))


def convolve_full(u: Waveform, rir: Waveform) -> Waveform:
    """Full linear convolution, output length ``len(u) + len(rir) - 1``."""
    if u.sample_rate != rir.sample_rate:
        raise ConfigurationError(
            f"sample rate mismatch: {u.sample_rate} Hz vs {rir.sample_rate} Hz"
        )
    if len(rir) == 0 or len(u) == 0:
        raise ConfigurationError("cannot convolve with an empty signal")
    return Waveform(sps.convolve(u.samples, rir.samples, mode="full"), u.sample_rate)


def mean_power(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x)) if x.size else 0.0


def mix_scale(signal_power: float, noise_power: float, snr_db: float) -> float:
    """Noise gain ``p`` such that ``signal_power / (p**2 * noise_power)`` hits `snr_db`."""
    if signal_power <= 0 or noise_power <= 0:
        raise DegenerateSignalError(
            f"powers must be positive (signal={signal_power}, noise={noise_power})"
        )
    return float(np.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0))))


def snr_db(signal, noise) -> float:
    return float(10.0 * np.log10(mean_power(signal) / mean_power(noise)))
