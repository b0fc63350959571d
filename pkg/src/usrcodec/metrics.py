"""Objective evaluation: banded Mel/STFT distances, STOI, PESQ adapter, rates.

Banded distances resample both signals to the evaluation rate and score
log grids there: the 16 kHz path measures the low band, the 44.1 kHz path the
full band. STOI is the standard short-time objective intelligibility measure
(one-third-octave bands at a 10 kHz internal rate, 384 ms segments, clipped
correlation). PESQ is consumed through an external command adapter only.
"""

from __future__ import annotations

import dataclasses
import json
import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from .dsp import (
    AudioClip,
    MelSpectrogram,
    SpectralConfig,
    load_audio,
    mel_filter_bank,
    mel_spectrogram,
    resample,
    save_wav,
    stft_magnitude,
)
from .errors import (
    AdapterError,
    AlignmentError,
    EmptyCorpusError,
    InsufficientInputError,
    UsrcError,
)

EVAL_CONFIGS = {
    44100: SpectralConfig(sample_rate=44100, n_fft=2048, hop=512, win_length=2048, n_mels=128),
    16000: SpectralConfig(sample_rate=16000, n_fft=1024, hop=256, win_length=1024, n_mels=80),
}

_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG = 30
_STOI_BETA = -15.0
_STOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps


def _eval_config(eval_sr: int) -> SpectralConfig:
    if eval_sr not in EVAL_CONFIGS:
        raise AlignmentError(
            f"no evaluation config for {eval_sr} Hz (supported: {sorted(EVAL_CONFIGS)})"
        )
    return EVAL_CONFIGS[eval_sr]


def _aligned_pair(ref: AudioClip, est: AudioClip, eval_sr: int) -> tuple[np.ndarray, np.ndarray]:
    cfg = _eval_config(eval_sr)
    a = resample(ref.samples, ref.sample_rate, eval_sr)
    b = resample(est.samples, est.sample_rate, eval_sr)
    if abs(a.size - b.size) > cfg.hop:
        raise AlignmentError(
            f"duration mismatch beyond one hop at {eval_sr} Hz: {a.size} vs {b.size} samples"
        )
    n = min(a.size, b.size)
    if n < cfg.win_length:
        raise InsufficientInputError(
            f"aligned signals too short for analysis at {eval_sr} Hz: {n} samples"
        )
    return a[:n], b[:n]


def mel_distance(ref: AudioClip, est: AudioClip, eval_sr: int = 44100) -> float:
    """Mean |log-mel(ref) - log-mel(est)| at the evaluation rate."""
    a, b = _aligned_pair(ref, est, eval_sr)
    cfg = _eval_config(eval_sr)
    ma = mel_spectrogram(AudioClip(samples=a, sample_rate=eval_sr), cfg).values
    mb = mel_spectrogram(AudioClip(samples=b, sample_rate=eval_sr), cfg).values
    return float(np.mean(np.abs(ma - mb)))


def stft_distance(ref: AudioClip, est: AudioClip, eval_sr: int = 44100) -> float:
    """Mean |log|STFT(ref)| - log|STFT(est)|| at the evaluation rate."""
    a, b = _aligned_pair(ref, est, eval_sr)
    cfg = _eval_config(eval_sr)
    sa = np.log(np.maximum(cfg.log_floor, stft_magnitude(a, cfg)))
    sb = np.log(np.maximum(cfg.log_floor, stft_magnitude(b, cfg)))
    return float(np.mean(np.abs(sa - sb)))


def _third_octave_matrix() -> tuple[np.ndarray, np.ndarray]:
    """(band matrix [15, n_bins], center frequencies) on the 512-pt FFT grid."""
    f = np.linspace(0, _STOI_FS, _STOI_NFFT + 1)[: _STOI_NFFT // 2 + 1]
    k = np.arange(_STOI_BANDS, dtype=np.float64)
    cf = _STOI_MIN_FREQ * 2.0 ** (k / 3.0)
    f_low = _STOI_MIN_FREQ * 2.0 ** ((2.0 * k - 1.0) / 6.0)
    f_high = _STOI_MIN_FREQ * 2.0 ** ((2.0 * k + 1.0) / 6.0)
    obm = np.zeros((_STOI_BANDS, f.size))
    for i in range(_STOI_BANDS):
        lo = int(np.argmin((f - f_low[i]) ** 2))
        hi = int(np.argmin((f - f_high[i]) ** 2))
        obm[i, lo:hi] = 1.0
    return obm, cf


def _stoi_frames(x: np.ndarray) -> np.ndarray:
    """Windowed frames [n_frames, 256] at 50% overlap."""
    w = np.hanning(_STOI_FRAME + 2)[1:-1]
    n_frames = (x.size - _STOI_FRAME) // _STOI_HOP + 1
    if n_frames < 1:
        return np.zeros((0, _STOI_FRAME))
    idx = np.arange(_STOI_FRAME)[None, :] + _STOI_HOP * np.arange(n_frames)[:, None]
    return x[idx] * w[None, :]


def _remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames more than 40 dB below the loudest reference frame, then
    overlap-add the survivors back into contiguous signals."""
    xf = _stoi_frames(x)
    yf = _stoi_frames(y)
    energies = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    mask = energies > energies.max() - _STOI_DYN_RANGE
    xf, yf = xf[mask], yf[mask]
    if xf.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    out_len = _STOI_FRAME + _STOI_HOP * (xf.shape[0] - 1)
    xs = np.zeros(out_len)
    ys = np.zeros(out_len)
    for i in range(xf.shape[0]):
        sl = slice(i * _STOI_HOP, i * _STOI_HOP + _STOI_FRAME)
        xs[sl] += xf[i]
        ys[sl] += yf[i]
    return xs, ys


def _band_envelopes(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    """sqrt of band-summed power spectrogram, [15, n_frames]."""
    frames = _stoi_frames(x)
    spec = np.abs(np.fft.rfft(frames, n=_STOI_NFFT, axis=1)) ** 2
    return np.sqrt(obm @ spec.T)


def stoi(ref: AudioClip, est: AudioClip) -> float:
    """Short-time objective intelligibility in [0, 1]."""
    if ref.duration < 0.5 or est.duration < 0.5:
        raise InsufficientInputError(
            f"stoi needs >= 0.5 s of audio, got {ref.duration:.3f}/{est.duration:.3f} s"
        )
    x = resample(resample(ref.samples, ref.sample_rate, 16000), 16000, _STOI_FS)
    y = resample(resample(est.samples, est.sample_rate, 16000), 16000, _STOI_FS)
    n = min(x.size, y.size)
    x, y = x[:n], y[:n]
    x, y = _remove_silent_frames(x, y)
    if x.size < _STOI_FRAME:
        raise InsufficientInputError("no audible content left after silent-frame removal")
    obm, _ = _third_octave_matrix()
    xb = _band_envelopes(x, obm)
    yb = _band_envelopes(y, obm)
    m = xb.shape[1]
    if m < _STOI_SEG:
        raise InsufficientInputError(
            f"need >= {_STOI_SEG} analysis frames after silence removal, got {m}"
        )
    clip_gain = 10.0 ** (-_STOI_BETA / 20.0)
    total = 0.0
    count = 0
    for end in range(_STOI_SEG, m + 1):
        xs = xb[:, end - _STOI_SEG : end]
        ys = yb[:, end - _STOI_SEG : end]
        alpha = np.linalg.norm(xs, axis=1) / (np.linalg.norm(ys, axis=1) + _EPS)
        ys_n = ys * alpha[:, None]
        ys_n = np.minimum(ys_n, xs * (1.0 + clip_gain))
        xc = xs - xs.mean(axis=1, keepdims=True)
        yc = ys_n - ys_n.mean(axis=1, keepdims=True)
        denom = np.linalg.norm(xc, axis=1) * np.linalg.norm(yc, axis=1) + _EPS
        total += float(((xc * yc).sum(axis=1) / denom).sum())
        count += _STOI_BANDS
    return float(np.clip(total / count, 0.0, 1.0))


def pesq(ref: AudioClip, est: AudioClip, command: str | None = None,
         timeout_s: float = 120.0) -> float | None:
    """External PESQ adapter: returns None when no command is configured.

    The command template receives {ref} and {est} paths of 16 kHz mono WAVs
    and must print a single float score on stdout.
    """
    if not command:
        return None
    with tempfile.TemporaryDirectory(prefix="usrc_pesq_") as tmp:
        tmp_path = Path(tmp)
        ref16 = AudioClip(samples=resample(ref.samples, ref.sample_rate, 16000),
                          sample_rate=16000)
        est16 = AudioClip(samples=resample(est.samples, est.sample_rate, 16000),
                          sample_rate=16000)
        ref_path = tmp_path / "ref.wav"
        est_path = tmp_path / "est.wav"
        save_wav(ref_path, ref16)
        save_wav(est_path, est16)
        args = [
            a.replace("{ref}", str(ref_path)).replace("{est}", str(est_path))
            for a in shlex.split(command)
        ]
        try:
            proc = subprocess.run(args, capture_output=True, timeout=timeout_s)
        except subprocess.TimeoutExpired as exc:
            raise AdapterError(f"pesq adapter timed out after {timeout_s}s") from exc
        except OSError as exc:
            raise AdapterError(f"cannot launch pesq adapter {args[0]}: {exc}") from exc
        if proc.returncode != 0:
            tail = proc.stderr.decode("utf-8", "replace")[-300:]
            raise AdapterError(f"pesq adapter exited with status {proc.returncode}: {tail}")
        out = proc.stdout.decode("utf-8", "replace").strip()
        try:
            return float(out.split()[-1])
        except (IndexError, ValueError) as exc:
            raise AdapterError(f"pesq adapter printed no parseable score: {out!r}") from exc


@dataclasses.dataclass(frozen=True)
class RateReport:
    tps: float
    kbps: float

    def to_dict(self) -> dict:
        return {"tps": self.tps, "kbps": self.kbps}


def token_rate(
    sample_rate: int, hop: int, time_down: int, freq_down: int, n_mels: int
) -> float:
    """Tokens per second of audio: frame rate / time factor x bands / freq factor."""
    return (sample_rate / hop / time_down) * (n_mels / freq_down)


def rate_report(
    sample_rate: int, hop: int, time_down: int, freq_down: int, n_mels: int,
    codebook_bits: int,
) -> RateReport:
    tps = token_rate(sample_rate, hop, time_down, freq_down, n_mels)
    return RateReport(tps=tps, kbps=tps * codebook_bits / 1000.0)


def rate_for_codec(codec) -> RateReport:
    """Measured rate accounting for a CodecModel."""
    return rate_report(
        codec.spectral.sample_rate,
        codec.spectral.hop,
        codec.time_factor,
        codec.freq_factor,
        codec.spectral.n_mels,
        codec.quantizer_cfg.bits,
    )


def score_pair(
    ref: AudioClip,
    est: AudioClip,
    include_stoi: bool = True,
    pesq_command: str | None = None,
) -> dict:
    """All per-file metrics for one reference/estimate pair."""
    record = {
        "mel_44": mel_distance(ref, est, 44100),
        "stft_44": stft_distance(ref, est, 44100),
        "mel_16": mel_distance(ref, est, 16000),
        "stft_16": stft_distance(ref, est, 16000),
    }
    if include_stoi:
        try:
            record["stoi"] = stoi(ref, est)
        except InsufficientInputError:
            pass
    score = pesq(ref, est, pesq_command)
    if score is not None:
        record["pesq"] = score
    return record


def evaluate_corpus(
    ref_dir,
    process,
    sample_rate: int = 44100,
    rate: RateReport | None = None,
    fingerprint: str = "",
    include_stoi: bool = True,
    pesq_command: str | None = None,
    suffixes: tuple[str, ...] = (".wav", ".flac"),
) -> dict:
    """Encode/decode/score every file under ref_dir through `process`.

    `process` maps a reference AudioClip to its reconstruction. Per-file
    failures are counted and recorded, never silently dropped; ordering is
    deterministic (sorted paths).
    """
    root = Path(ref_dir)
    files = sorted(
        p for p in root.rglob("*") if p.suffix.lower() in suffixes and p.is_file()
    )
    if not files:
        raise EmptyCorpusError(f"no audio files under {root}")
    per_file = []
    failures = []
    for path in files:
        try:
            ref = load_audio(path, sample_rate)
            est = process(ref)
            record = {"path": str(path)}
            record.update(
                score_pair(ref, est, include_stoi=include_stoi, pesq_command=pesq_command)
            )
            per_file.append(record)
        except UsrcError as exc:
            failures.append({"path": str(path), "error": f"{exc.code}: {exc}"})
    metric_keys = ("mel_44", "stft_44", "mel_16", "stft_16", "stoi", "pesq")
    aggregate = {}
    for key in metric_keys:
        values = [r[key] for r in per_file if key in r]
        if values:
            aggregate[key] = float(np.mean(values))
    report = {
        "config_fingerprint": fingerprint,
        "per_file": per_file,
        "aggregate": aggregate,
        "rate": rate.to_dict() if rate is not None else None,
        "failures": len(failures),
        "failure_detail": failures,
    }
    return report


def write_report(path, report: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return path
