"""Waveform container and the log-mel feature frontend.

The frontend is deliberately plain: hann-windowed magnitude STFT through a
triangular mel filterbank, floored before the log so silence stays finite.
Frame count is a pure function of sample count, which downstream length laws
rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 16_000
DEFAULT_WIN_LENGTH = 400  # 25 ms at 16 kHz
DEFAULT_HOP_LENGTH = 160  # 10 ms at 16 kHz
_LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class Waveform:
    """Mono real-valued audio tagged with its sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be mono (1-D), got shape {samples.shape}")
        object.__setattr__(self, "samples", samples)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.shape[0]


def load_waveform(path: str | Path, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Read a mono waveform stored as a 1-D .npy array."""
    arr = np.load(Path(path))
    return Waveform(samples=arr, sample_rate=sample_rate)


def save_waveform(path: str | Path, wave: Waveform) -> None:
    np.save(Path(path), wave.samples)


def num_frames(n_samples: int, win_length: int = DEFAULT_WIN_LENGTH, hop_length: int = DEFAULT_HOP_LENGTH) -> int:
    """Frame count law shared by every feature consumer."""
    if n_samples < win_length:
        return 0
    return 1 + (n_samples - win_length) // hop_length


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filterbank, (n_mels, n_fft//2 + 1)."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    n_bins = n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bank = np.zeros((n_mels, n_bins), dtype=np.float64)
    for i in range(n_mels):
        left, center, right = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        up = (fft_freqs - left) / max(center - left, 1e-12)
        down = (right - fft_freqs) / max(right - center, 1e-12)
        bank[i] = np.maximum(0.0, np.minimum(up, down))
    return bank


def log_mel(
    wave: Waveform,
    n_mels: int = 80,
    win_length: int = DEFAULT_WIN_LENGTH,
    hop_length: int = DEFAULT_HOP_LENGTH,
) -> np.ndarray:
    """Log mel spectrogram, time-major (T, n_mels).

    Raises on empty input and on audio shorter than one analysis window; a
    zero waveform maps to the (finite) log floor everywhere.
    """
    if len(wave) == 0:
        raise ValueError("cannot extract features from empty audio")
    t = num_frames(len(wave), win_length, hop_length)
    if t < 1:
        raise ValueError(
            f"audio too short for one analysis window ({len(wave)} < {win_length} samples)"
        )
    window = np.hanning(win_length)
    starts = np.arange(t) * hop_length
    frames = wave.samples[starts[:, None] + np.arange(win_length)[None, :]] * window
    spectrum = np.abs(np.fft.rfft(frames, n=win_length, axis=1)) ** 2
    bank = mel_filterbank(n_mels, win_length, wave.sample_rate)
    mel = spectrum @ bank.T
    return np.log(np.maximum(mel, _LOG_FLOOR))
