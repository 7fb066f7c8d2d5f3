"""Spectral primitives: magnitude STFT, mel projection, A-weighting.

The framing helpers here are shared with the differentiable STFT in the
autodiff module so both paths produce identical values.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio_io import Waveform
from .errors import ArgumentError


@dataclass
class MagnitudeSpectrogram:
    values: np.ndarray  # [frames, bins], nonnegative
    fft_size: int
    hop: int
    sample_rate_hz: int

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1


@lru_cache(maxsize=32)
def hann_window(n: int) -> np.ndarray:
    # Periodic Hann, the standard STFT analysis window.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def num_frames(length: int, hop: int) -> int:
    return -(-length // hop)


@lru_cache(maxsize=64)
def _frame_index_map(length: int, fft_size: int, hop: int) -> np.ndarray:
    """Sample index of every (frame, tap) position for a centered STFT.

    Centered framing with reflect padding; frame count is ceil(length / hop).
    Returned map indexes into the unpadded signal.
    """
    frames = num_frames(length, hop)
    pad_left = fft_size // 2
    pad_right = max(0, (frames - 1) * hop + fft_size - pad_left - length)
    padded = np.pad(np.arange(length), (pad_left, pad_right), mode="reflect")
    starts = np.arange(frames) * hop
    return padded[starts[:, None] + np.arange(fft_size)[None, :]]


def frame_signal(x: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    """Centered, reflect-padded frames [frames, fft_size] (unwindowed)."""
    if len(x) == 0:
        return np.zeros((0, fft_size), dtype=x.dtype)
    return x[_frame_index_map(len(x), fft_size, hop)]


def stft_magnitude_array(x: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    """Hann-windowed magnitude STFT over a plain array; [frames, bins]."""
    if fft_size < 2 or fft_size & (fft_size - 1):
        raise ArgumentError(f"fft_size must be a power of two, got {fft_size}")
    if not 0 < hop <= fft_size:
        raise ArgumentError(f"hop must satisfy 0 < hop <= fft_size, got {hop}")
    frames = frame_signal(x, fft_size, hop) * hann_window(fft_size)
    return np.abs(np.fft.rfft(frames, axis=1))


def stft_magnitude(w: Waveform, fft_size: int, hop: int) -> MagnitudeSpectrogram:
    """Magnitude STFT of a Waveform; frames = ceil(len / hop)."""
    values = stft_magnitude_array(w.samples, fft_size, hop)
    return MagnitudeSpectrogram(values, fft_size, hop, w.sample_rate_hz)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filter_weights(fft_size: int, sample_rate_hz: int, n_mels: int,
                       fmin: float, fmax: float) -> np.ndarray:
    """Triangular mel filterbank matrix [bins, n_mels]."""
    if n_mels < 1:
        raise ArgumentError(f"n_mels must be >= 1, got {n_mels}")
    if not 0 <= fmin < fmax <= sample_rate_hz / 2:
        raise ArgumentError(
            f"need 0 <= fmin < fmax <= nyquist; got fmin={fmin}, fmax={fmax}, "
            f"rate={sample_rate_hz}")
    bins = fft_size // 2 + 1
    bin_freqs = np.arange(bins) * sample_rate_hz / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    weights = np.zeros((bins, n_mels))
    for j in range(n_mels):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        up = (bin_freqs - lo) / max(mid - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - mid, 1e-12)
        weights[:, j] = np.clip(np.minimum(up, down), 0.0, None)
    return weights


def mel_filterbank(spec: MagnitudeSpectrogram, n_mels: int,
                   fmin: float, fmax: float) -> np.ndarray:
    """Project a magnitude spectrogram onto triangular mel filters."""
    weights = mel_filter_weights(spec.fft_size, spec.sample_rate_hz, n_mels, fmin, fmax)
    return spec.values @ weights


# IEC 61672 analog A-weighting pole frequencies (Hz).
_F1, _F2, _F3, _F4 = 20.598997, 107.65265, 737.86223, 12194.217


def _a_response(freq: np.ndarray) -> np.ndarray:
    f2 = freq * freq
    num = _F4 * _F4 * f2 * f2
    den = ((f2 + _F1 * _F1)
           * np.sqrt((f2 + _F2 * _F2) * (f2 + _F3 * _F3))
           * (f2 + _F4 * _F4))
    return num / den


_A_REF_1KHZ = _a_response(np.array(1000.0))


def a_weight_gain_db(freq) -> np.ndarray:
    """A-weighting gain in dB, exactly 0 dB at 1 kHz."""
    freq = np.asarray(freq, dtype=np.float64)
    if np.any(freq <= 0):
        raise ArgumentError("A-weighting is defined for positive frequencies only")
    return 20.0 * np.log10(_a_response(freq) / _A_REF_1KHZ)


def a_weight_linear(freq) -> np.ndarray:
    """A-weighting as linear magnitude gain (1.0 at 1 kHz); 0 at DC."""
    freq = np.asarray(freq, dtype=np.float64)
    out = np.zeros_like(freq)
    pos = freq > 0
    out[pos] = _a_response(freq[pos]) / _A_REF_1KHZ
    return out
