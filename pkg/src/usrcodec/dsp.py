"""Audio I/O, STFT/Mel analysis, sub-band splitting, and the bandwidth filter.

Everything here is numpy float64. The torch side of the codec converts to
float32 at its own boundary.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import (
    AudioIOError,
    ConfigError,
    EmptyInputError,
    InsufficientInputError,
    NumericError,
    ShapeError,
)

DEFAULT_SAMPLE_RATE = 44100

# Slaney mel-scale constants (linear below 1 kHz, log above).
_MEL_F_SP = 200.0 / 3.0
_MEL_MIN_LOG_HZ = 1000.0
_MEL_MIN_LOG_MEL = _MEL_MIN_LOG_HZ / _MEL_F_SP
_MEL_LOGSTEP = np.log(6.4) / 27.0


@dataclasses.dataclass(frozen=True)
class SpectralConfig:
    """STFT/Mel analysis settings. Window is always Hann (periodic)."""

    sample_rate: int = DEFAULT_SAMPLE_RATE
    n_fft: int = 2048
    hop: int = 512
    win_length: int = 2048
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-5

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if not (0 < self.hop <= self.win_length <= self.n_fft):
            raise ConfigError(
                f"need 0 < hop <= win_length <= n_fft, got "
                f"hop={self.hop} win_length={self.win_length} n_fft={self.n_fft}"
            )
        if self.n_mels < 2:
            raise ConfigError(f"n_mels must be >= 2, got {self.n_mels}")
        if not (0 <= self.fmin < self.fmax_hz <= self.sample_rate / 2):
            raise ConfigError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got "
                f"fmin={self.fmin} fmax={self.fmax_hz} sample_rate={self.sample_rate}"
            )
        if self.log_floor <= 0:
            raise ConfigError(f"log_floor must be positive, got {self.log_floor}")

    @property
    def fmax_hz(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fmax"] = self.fmax_hz
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralConfig":
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls) if f.name in d})


@dataclasses.dataclass
class AudioClip:
    """Mono waveform. Samples are float64 and expected to lie in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError(f"AudioClip samples must be 1-D, got shape {self.samples.shape}")
        if self.samples.size == 0:
            raise EmptyInputError("AudioClip must contain at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise NumericError("AudioClip contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    @property
    def channels(self) -> int:
        return 1

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclasses.dataclass
class MelSpectrogram:
    """Natural-log Mel amplitude grid of shape [n_mels, n_frames]."""

    values: np.ndarray
    config: SpectralConfig

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"MelSpectrogram values must be 2-D, got shape {self.values.shape}")
        if self.values.shape[0] != self.config.n_mels:
            raise ShapeError(
                f"row count {self.values.shape[0]} != n_mels {self.config.n_mels}"
            )
        if self.values.shape[1] < 1:
            raise ShapeError("MelSpectrogram must have at least one frame")
        if not np.all(np.isfinite(self.values)):
            raise NumericError("MelSpectrogram contains non-finite values")

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclasses.dataclass
class SubBandPair:
    """Low/high halves of a Mel grid split along the frequency axis."""

    low: np.ndarray
    high: np.ndarray

    def restack(self) -> np.ndarray:
        """Stack high over low, reproducing the source grid."""
        return np.concatenate([self.low, self.high], axis=0)


def hz_to_mel(hz):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    hz = np.asarray(hz, dtype=np.float64)
    mel = hz / _MEL_F_SP
    log_region = hz >= _MEL_MIN_LOG_HZ
    mel = np.where(
        log_region,
        _MEL_MIN_LOG_MEL + np.log(np.maximum(hz, _MEL_MIN_LOG_HZ) / _MEL_MIN_LOG_HZ) / _MEL_LOGSTEP,
        mel,
    )
    return mel


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    hz = mel * _MEL_F_SP
    log_region = mel >= _MEL_MIN_LOG_MEL
    hz = np.where(
        log_region,
        _MEL_MIN_LOG_HZ * np.exp(_MEL_LOGSTEP * (mel - _MEL_MIN_LOG_MEL)),
        hz,
    )
    return hz


def _mel_edge_freqs(cfg: SpectralConfig) -> np.ndarray:
    """n_mels + 2 triangle corner frequencies, equally spaced on the mel scale."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    return mel_to_hz(mels)


def mel_band_centers(cfg: SpectralConfig) -> np.ndarray:
    """Center (peak) frequency in Hz for each triangular Mel band."""
    return _mel_edge_freqs(cfg)[1:-1]


def mel_filter_bank(cfg: SpectralConfig) -> np.ndarray:
    """Slaney-normalized triangular filterbank of shape [n_mels, n_fft//2 + 1]."""
    fft_freqs = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate)
    edges = _mel_edge_freqs(cfg)
    fdiff = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    # Slaney normalization: each triangle integrates to ~constant energy.
    enorm = 2.0 / (edges[2:] - edges[:-2])
    return weights * enorm[:, None]


def _hann_periodic(win_length: int) -> np.ndarray:
    n = np.arange(win_length, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win_length)


def _padded_window(cfg: SpectralConfig) -> np.ndarray:
    """Hann window of win_length, centered inside an n_fft-long buffer."""
    win = _hann_periodic(cfg.win_length)
    if cfg.win_length == cfg.n_fft:
        return win
    pad = cfg.n_fft - cfg.win_length
    left = pad // 2
    return np.pad(win, (left, pad - left))


def n_frames_for(n_samples: int, hop: int) -> int:
    """Frame-count contract shared by every analysis op: ceil(len / hop)."""
    return -(-n_samples // hop)


def stft_complex(samples: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Center-padded complex STFT with ceil(len/hop) frames, shape [n_bins, n_frames].

    Reflect padding of n_fft//2 on both sides; frame k covers original sample
    indices [k*hop - n_fft/2, k*hop + n_fft/2).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"stft input must be 1-D, got shape {x.shape}")
    if x.size < cfg.win_length:
        raise InsufficientInputError(
            f"need at least win_length={cfg.win_length} samples, got {x.size}"
        )
    pad = cfg.n_fft // 2
    xp = np.pad(x, (pad, pad), mode="reflect")
    n_frames = n_frames_for(x.size, cfg.hop)
    window = _padded_window(cfg)
    idx = np.arange(cfg.n_fft)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = xp[idx] * window[None, :]
    return np.fft.rfft(frames, n=cfg.n_fft, axis=1).T


def stft_magnitude(samples: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    return np.abs(stft_complex(samples, cfg))


def istft(spectrum: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Weighted overlap-add inverse of ``stft_complex``; returns hop * n_frames samples.

    The center padding is removed, so istft(stft(x)) reproduces x up to the
    boundary taper. Requires hop <= n_fft/2 so the output span is covered.
    """
    spec = np.asarray(spectrum)
    if spec.ndim != 2 or spec.shape[0] != cfg.n_bins:
        raise ShapeError(
            f"spectrum must have shape [{cfg.n_bins}, n_frames], got {spec.shape}"
        )
    if cfg.hop > cfg.n_fft // 2:
        raise ConfigError(f"istft requires hop <= n_fft/2, got hop={cfg.hop} n_fft={cfg.n_fft}")
    n_frames = spec.shape[1]
    window = _padded_window(cfg)
    frames = np.fft.irfft(spec.T, n=cfg.n_fft, axis=1)
    total = cfg.n_fft + cfg.hop * (n_frames - 1)
    acc = np.zeros(total, dtype=np.float64)
    wsum = np.zeros(total, dtype=np.float64)
    for k in range(n_frames):
        sl = slice(k * cfg.hop, k * cfg.hop + cfg.n_fft)
        acc[sl] += frames[k] * window
        wsum[sl] += window * window
    safe = wsum > 1e-11
    acc[safe] /= wsum[safe]
    start = cfg.n_fft // 2
    out = acc[start : start + cfg.hop * n_frames]
    if out.size < cfg.hop * n_frames:
        out = np.pad(out, (0, cfg.hop * n_frames - out.size))
    return out


def resample(samples: np.ndarray, sr: int, target_sr: int) -> np.ndarray:
    """Windowed-sinc polyphase resampling with output length round(n*target/sr)."""
    x = np.asarray(samples, dtype=np.float64)
    if sr == target_sr:
        return x.copy()
    if sr <= 0 or target_sr <= 0:
        raise ConfigError(f"sample rates must be positive, got {sr} -> {target_sr}")
    g = np.gcd(int(sr), int(target_sr))
    y = scipy.signal.resample_poly(x, target_sr // g, sr // g)
    want = int(round(x.size * target_sr / sr))
    if y.size > want:
        y = y[:want]
    elif y.size < want:
        y = np.pad(y, (0, want - y.size))
    return y


def _pcm_to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise AudioIOError(f"unsupported PCM dtype {data.dtype}")


def load_audio(path, target_sr: int = DEFAULT_SAMPLE_RATE) -> AudioClip:
    """Load a WAV (or FLAC, when soundfile is installed), downmix, resample.

    Output is mono float64 at target_sr; peak-normalized only if |peak| > 1.
    """
    p = Path(path)
    if not p.is_file():
        raise AudioIOError(f"no such audio file: {p}")
    suffix = p.suffix.lower()
    if suffix == ".wav":
        try:
            sr, data = scipy.io.wavfile.read(str(p))
        except Exception as exc:
            raise AudioIOError(f"cannot decode WAV file {p}: {exc}") from exc
        samples = _pcm_to_float(np.asarray(data))
    else:
        try:
            import soundfile
        except ImportError as exc:
            raise AudioIOError(
                f"cannot decode {p}: only WAV is supported without the optional "
                f"soundfile dependency (pip install usrcodec[flac])"
            ) from exc
        try:
            samples, sr = soundfile.read(str(p), dtype="float64")
        except Exception as exc:
            raise AudioIOError(f"cannot decode audio file {p}: {exc}") from exc
    if samples.size == 0:
        raise EmptyInputError(f"audio file {p} contains no samples")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    elif samples.ndim != 1:
        raise AudioIOError(f"unsupported channel layout with shape {samples.shape} in {p}")
    samples = resample(samples, int(sr), int(target_sr))
    if samples.size == 0:
        raise EmptyInputError(f"audio file {p} is empty after resampling to {target_sr} Hz")
    peak = np.max(np.abs(samples))
    if peak > 1.0:
        samples = samples / peak
    return AudioClip(samples=samples, sample_rate=int(target_sr))


def save_wav(path, clip: AudioClip) -> None:
    """Write 16-bit PCM WAV."""
    x = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype(np.int16)
    try:
        scipy.io.wavfile.write(str(path), clip.sample_rate, pcm)
    except OSError as exc:
        raise AudioIOError(f"cannot write WAV file {path}: {exc}") from exc


def mel_spectrogram(clip: AudioClip, cfg: SpectralConfig | None = None) -> MelSpectrogram:
    """Log-mel analysis: values = ln(max(log_floor, filterbank @ |STFT|))."""
    cfg = cfg or SpectralConfig()
    if clip.sample_rate != cfg.sample_rate:
        raise ConfigError(
            f"clip sample_rate {clip.sample_rate} != config sample_rate {cfg.sample_rate}"
        )
    if clip.samples.size < cfg.win_length:
        raise InsufficientInputError(
            f"clip has {clip.samples.size} samples, need >= win_length={cfg.win_length}"
        )
    mag = stft_magnitude(clip.samples, cfg)
    mel = mel_filter_bank(cfg) @ mag
    values = np.log(np.maximum(cfg.log_floor, mel))
    return MelSpectrogram(values=values, config=cfg)


def split_subbands(mel: MelSpectrogram) -> SubBandPair:
    """Split the frequency axis into equal low/high halves."""
    m = mel.n_mels
    if m % 2 != 0:
        raise ConfigError(f"sub-band split needs an even n_mels, got {m}")
    half = m // 2
    return SubBandPair(low=mel.values[:half].copy(), high=mel.values[half:].copy())


def band_energy_db(clip: AudioClip, cfg: SpectralConfig | None = None) -> np.ndarray:
    """Mean linear Mel-band power over time, in dB relative to the peak band.

    Uses interior (unpadded) frames only: center padding would place the
    boundary reflection kink at a frame center where the window is ~1, and
    that splatter alone can lift empty bands above a -60 dB threshold.
    All-silent input yields -inf in every band.
    """
    cfg = cfg or SpectralConfig(sample_rate=clip.sample_rate)
    samples = clip.samples
    if samples.size < cfg.n_fft:
        samples = np.pad(samples, (0, cfg.n_fft - samples.size))
    window = _padded_window(cfg)
    n_frames = 1 + (samples.size - cfg.n_fft) // cfg.hop
    idx = np.arange(cfg.n_fft)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    power = np.abs(np.fft.rfft(samples[idx] * window[None, :], axis=1).T) ** 2
    band_energy = (mel_filter_bank(cfg) @ power).mean(axis=1)
    peak = band_energy.max()
    with np.errstate(divide="ignore", invalid="ignore"):
        db = 10.0 * np.log10(band_energy / peak) if peak > 0 else np.full(cfg.n_mels, -np.inf)
    return db


def detect_native_bandwidth(clip: AudioClip, threshold_db: float = -60.0) -> float:
    """Estimate the clip's native sample rate as 2x its top occupied Mel band center.

    Scans band energies (dB re the clip's peak band) from the highest band
    down; the first band above threshold_db marks the top occupied frequency.
    Returns 0.0 for silent clips.
    """
    cfg = SpectralConfig(sample_rate=clip.sample_rate)
    db = band_energy_db(clip, cfg)
    if not np.any(np.isfinite(db)):
        return 0.0
    centers = mel_band_centers(cfg)
    occupied = np.nonzero(db > threshold_db)[0]
    if occupied.size == 0:
        return 0.0
    return float(2.0 * centers[occupied[-1]])


def filter_training_clip(
    clip: AudioClip, threshold_db: float = -60.0, margin: float = 0.95
) -> bool:
    """True iff the clip's native bandwidth reaches the training Nyquist.

    Accepts when detect_native_bandwidth >= 2 * (sample_rate/2) * margin; the
    margin absorbs the gap between the top band's center and Nyquist itself.
    """
    native = detect_native_bandwidth(clip, threshold_db)
    return native >= 2.0 * (clip.sample_rate / 2.0) * margin
