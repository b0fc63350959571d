"""Waveform recovery from log-mel grids.

Two paths: a deterministic built-in Griffin-Lim fallback (zero external
dependencies) and a file-based adapter contract for an external pretrained
neural vocoder (mel container in, WAV out).
"""

from __future__ import annotations

import dataclasses
import shlex
import struct
import subprocess
import tempfile
from pathlib import Path

import numpy as np
import scipy.optimize

from .dsp import (
    AudioClip,
    MelSpectrogram,
    SpectralConfig,
    istft,
    mel_filter_bank,
    stft_complex,
)
from .errors import ConfigError, NumericError, ShapeError, VocoderError

MEL_MAGIC = b"MELX"
_MEL_HEADER = struct.Struct("<4sIIII")

KIND_GRIFFIN_LIM = "griffin_lim"
KIND_EXTERNAL = "external"


@dataclasses.dataclass(frozen=True)
class VocoderSpec:
    """Which synthesis backend to use and the analysis config it expects."""

    kind: str
    expects: SpectralConfig
    sample_rate: int | None = None
    command: str | None = None
    timeout_s: float = 300.0

    def __post_init__(self) -> None:
        if self.kind not in (KIND_GRIFFIN_LIM, KIND_EXTERNAL):
            raise ConfigError(
                f"vocoder kind must be '{KIND_GRIFFIN_LIM}' or '{KIND_EXTERNAL}', "
                f"got {self.kind!r}"
            )
        if self.sample_rate is None:
            object.__setattr__(self, "sample_rate", self.expects.sample_rate)
        if self.kind == KIND_GRIFFIN_LIM and self.sample_rate != self.expects.sample_rate:
            raise ConfigError(
                "griffin_lim synthesizes at the analysis rate: sample_rate "
                f"{self.sample_rate} != expects.sample_rate {self.expects.sample_rate}"
            )
        if self.kind == KIND_EXTERNAL and not self.command:
            raise ConfigError("external vocoder requires a command template")
        if self.timeout_s <= 0:
            raise ConfigError("timeout_s must be positive")


def mel_to_linear(mel: MelSpectrogram, method: str = "nnls", max_iter: int = 200) -> np.ndarray:
    """Invert the mel filterbank: exp, then non-negative least squares.

    Solves min_{S >= 0} ||FB @ S - exp(mel)||_F^2 for all frames jointly
    (L-BFGS-B with box constraints, warm-started from the clamped
    pseudo-inverse). method='pinv' returns the clamped pseudo-inverse alone.
    Output is a nonnegative [n_fft/2+1, n_frames] magnitude grid.
    """
    cfg = mel.config
    fb = mel_filter_bank(cfg)
    target = np.exp(mel.values)
    start = np.clip(np.linalg.pinv(fb) @ target, 0.0, None)
    if method == "pinv":
        return start
    if method != "nnls":
        raise ConfigError(f"method must be 'nnls' or 'pinv', got {method!r}")

    shape = start.shape

    def objective(x):
        s = x.reshape(shape)
        r = fb @ s - target
        return 0.5 * float(np.sum(r * r)), (fb.T @ r).reshape(-1)

    result = scipy.optimize.minimize(
        objective,
        start.reshape(-1),
        jac=True,
        method="L-BFGS-B",
        bounds=scipy.optimize.Bounds(0.0, np.inf),
        options={"maxiter": max_iter},
    )
    return np.clip(result.x.reshape(shape), 0.0, None)


def griffin_lim(
    magnitude: np.ndarray, cfg: SpectralConfig, n_iters: int = 60
) -> AudioClip:
    """Iterative phase recovery with a fixed zero initial phase.

    Each iteration resynthesizes, re-analyzes, and keeps only the phase;
    output is istft of the magnitude with the final phase, clipped to [-1, 1].
    Deterministic; length is hop * n_frames.
    """
    mag = np.asarray(magnitude, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[0] != cfg.n_bins:
        raise ShapeError(
            f"magnitude must have shape [{cfg.n_bins}, n_frames], got {mag.shape}"
        )
    if not np.all(np.isfinite(mag)) or np.any(mag < 0):
        raise NumericError("magnitude grid must be finite and nonnegative")
    if n_iters < 1:
        raise ConfigError(f"n_iters must be >= 1, got {n_iters}")
    spec = mag.astype(np.complex128)
    for _ in range(n_iters):
        x = istft(spec, cfg)
        rean = stft_complex(x, cfg)
        norm = np.abs(rean)
        phase = np.where(norm > 0, rean / np.where(norm > 0, norm, 1.0), 1.0)
        spec = mag * phase
    samples = np.clip(istft(spec, cfg), -1.0, 1.0)
    return AudioClip(samples=samples, sample_rate=cfg.sample_rate)


def write_mel_container(path, values: np.ndarray, sample_rate: int, hop: int) -> Path:
    """Binary grid container: MELX, u32 rows, u32 cols, u32 rate, u32 hop, f32 row-major."""
    grid = np.ascontiguousarray(values, dtype=np.float32)
    if grid.ndim != 2:
        raise ShapeError(f"container grid must be 2-D, got shape {grid.shape}")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_MEL_HEADER.pack(MEL_MAGIC, grid.shape[0], grid.shape[1], sample_rate, hop))
        fh.write(grid.tobytes())
    return path


def read_mel_container(path) -> tuple[np.ndarray, int, int]:
    """Returns (values [rows, cols] float32, sample_rate, hop)."""
    data = Path(path).read_bytes()
    if len(data) < _MEL_HEADER.size:
        raise VocoderError(f"mel container {path} too short for header")
    magic, rows, cols, sample_rate, hop = _MEL_HEADER.unpack(data[: _MEL_HEADER.size])
    if magic != MEL_MAGIC:
        raise VocoderError(f"bad mel container magic {magic!r}")
    expected = _MEL_HEADER.size + rows * cols * 4
    if len(data) != expected:
        raise VocoderError(
            f"mel container size mismatch: {len(data)} bytes, expected {expected}"
        )
    grid = np.frombuffer(data[_MEL_HEADER.size :], dtype="<f4").reshape(rows, cols)
    return grid.copy(), sample_rate, hop


def _run_adapter(command: str, input_path: Path, output_path: Path, timeout_s: float) -> None:
    args = [
        a.replace("{input}", str(input_path)).replace("{output}", str(output_path))
        for a in shlex.split(command)
    ]
    try:
        proc = subprocess.run(args, capture_output=True, timeout=timeout_s)
    except subprocess.TimeoutExpired as exc:
        raise VocoderError(f"vocoder adapter timed out after {timeout_s}s: {args[0]}") from exc
    except OSError as exc:
        raise VocoderError(f"cannot launch vocoder adapter {args[0]}: {exc}") from exc
    if proc.returncode != 0:
        tail = proc.stderr.decode("utf-8", "replace")[-500:]
        raise VocoderError(
            f"vocoder adapter exited with status {proc.returncode}: {tail}"
        )
    if not output_path.is_file():
        raise VocoderError(f"vocoder adapter produced no output at {output_path}")


def _read_adapter_wav(path: Path, expected_sr: int) -> AudioClip:
    import scipy.io.wavfile

    from .dsp import _pcm_to_float

    try:
        sr, data = scipy.io.wavfile.read(str(path))
    except Exception as exc:
        raise VocoderError(f"cannot decode adapter output {path}: {exc}") from exc
    if sr != expected_sr:
        raise VocoderError(
            f"adapter returned sample rate {sr}, vocoder spec declares {expected_sr}"
        )
    samples = _pcm_to_float(np.asarray(data))
    if samples.ndim != 1:
        raise VocoderError(f"adapter output must be mono, got shape {samples.shape}")
    return AudioClip(samples=samples, sample_rate=sr)


def synthesize(mel: MelSpectrogram, spec: VocoderSpec, n_iters: int = 60) -> AudioClip:
    """Mel grid -> waveform via the configured backend."""
    if mel.config != spec.expects:
        raise ConfigError(
            "mel analysis config does not match the vocoder's expected config: "
            f"{mel.config.to_dict()} vs {spec.expects.to_dict()}"
        )
    if spec.kind == KIND_GRIFFIN_LIM:
        return griffin_lim(mel_to_linear(mel), spec.expects, n_iters=n_iters)
    with tempfile.TemporaryDirectory(prefix="usrc_vocoder_") as tmp:
        tmp_path = Path(tmp)
        mel_path = write_mel_container(
            tmp_path / "input.mel", mel.values, spec.expects.sample_rate, spec.expects.hop
        )
        wav_path = tmp_path / "output.wav"
        _run_adapter(spec.command, mel_path, wav_path, spec.timeout_s)
        return _read_adapter_wav(wav_path, spec.sample_rate)
