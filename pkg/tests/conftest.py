"""Shared synthetic-signal helpers and fixtures."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.io.wavfile
import scipy.signal

from usrcodec.dsp import AudioClip

SR = 44100


def white_noise(seed: int, n: int) -> np.ndarray:
    """Full-band white noise with peak 0.8."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    return 0.8 * x / np.max(np.abs(x))


def noise_clip(seed: int = 0, seconds: float = 1.0, sr: int = SR) -> AudioClip:
    return AudioClip(samples=white_noise(seed, int(seconds * sr)), sample_rate=sr)


def lowpass_fir(cutoff_hz: float, sr: int = SR, taps: int = 2049) -> np.ndarray:
    # Kaiser beta 8.6 gives ~-90 dB stopband; Hamming's -53 dB would leak
    # above the -60 dB detection threshold used by the bandwidth filter.
    return scipy.signal.firwin(taps, cutoff_hz, fs=sr, window=("kaiser", 8.6))


def lowpass_noise_clip(
    seed: int, cutoff_hz: float, seconds: float = 1.0, sr: int = SR
) -> AudioClip:
    taps = lowpass_fir(cutoff_hz, sr)
    n = int(seconds * sr)
    # Keep only fully-filtered samples; truncated convolution edges would
    # inject broadband clicks above the stopband floor.
    x = white_noise(seed, n + taps.size - 1)
    y = scipy.signal.fftconvolve(x, taps, mode="valid")
    y = 0.8 * y / np.max(np.abs(y))
    return AudioClip(samples=y, sample_rate=sr)


def sine_clip(freq_hz: float, seconds: float = 1.0, sr: int = SR, amp: float = 1.0) -> AudioClip:
    t = np.arange(int(seconds * sr)) / sr
    return AudioClip(samples=amp * np.sin(2 * np.pi * freq_hz * t), sample_rate=sr)


def chirp_clip(seed: int, seconds: float = 1.0, sr: int = SR) -> AudioClip:
    """Deterministic multi-component clip; varied enough to exercise codebooks."""
    rng = np.random.default_rng(seed)
    n = int(seconds * sr)
    t = np.arange(n) / sr
    f0, f1 = rng.uniform(100, 2000), rng.uniform(4000, 16000)
    x = scipy.signal.chirp(t, f0, t[-1], f1)
    x = x + 0.5 * np.sin(2 * np.pi * rng.uniform(200, 1000) * t)
    x = x * (0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(1, 6) * t))
    x = x + 0.1 * rng.standard_normal(n)
    return AudioClip(samples=0.8 * x / np.max(np.abs(x)), sample_rate=sr)


def write_wav(path, samples: np.ndarray, sr: int = SR, dtype=np.int16):
    x = np.asarray(samples, dtype=np.float64)
    if dtype == np.int16:
        data = np.round(np.clip(x, -1, 1) * 32767).astype(np.int16)
    elif dtype == np.int32:
        data = np.round(np.clip(x, -1, 1) * 2147483647).astype(np.int32)
    elif dtype == np.float32:
        data = x.astype(np.float32)
    else:
        raise ValueError(dtype)
    scipy.io.wavfile.write(str(path), sr, data)
    return path


@pytest.fixture
def tone_wav(tmp_path):
    clip = sine_clip(440.0, 1.0)
    return write_wav(tmp_path / "tone.wav", clip.samples, SR)
