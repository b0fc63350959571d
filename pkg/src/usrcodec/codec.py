"""Full codec: encoder + SimVQ + decoder bound to one spectral config.

Numpy-facing inference ops live here (mel grid in, tokens or mel grid out,
with pad-to-multiple bookkeeping); training drives the same submodules with
torch tensors directly.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .dsp import MelSpectrogram, SpectralConfig
from .errors import ConfigError, NumericError, ShapeError
from .model import (
    Decoder,
    DecoderConfig,
    Encoder,
    EncoderConfig,
    LatentGrid,
    config_fingerprint,
    count_parameters,
)
from .quantize import (
    FlattenOrder,
    QuantizeResult,
    QuantizerConfig,
    SimVQ,
    TokenSequence,
    dequantize,
    flatten_batch,
    quantize,
    unflatten_batch,
)

CHECKPOINT_FORMAT = 1


class CodecModel(nn.Module):
    """Encoder, quantizer, and mirrored decoder with their configs."""

    def __init__(
        self,
        spectral: SpectralConfig,
        encoder_cfg: EncoderConfig,
        quantizer_cfg: QuantizerConfig,
        decoder_cfg: DecoderConfig | None = None,
        variant: str = "custom",
    ):
        super().__init__()
        if decoder_cfg is None:
            decoder_cfg = DecoderConfig.mirror(encoder_cfg)
        if quantizer_cfg.dim != encoder_cfg.latent_channels:
            raise ConfigError(
                f"codebook dim {quantizer_cfg.dim} != latent channels "
                f"{encoder_cfg.latent_channels}"
            )
        if decoder_cfg.in_channels != encoder_cfg.latent_channels:
            raise ConfigError(
                f"decoder in_channels {decoder_cfg.in_channels} != latent channels "
                f"{encoder_cfg.latent_channels}"
            )
        if (
            decoder_cfg.time_factor != encoder_cfg.time_factor
            or decoder_cfg.freq_factor != encoder_cfg.freq_factor
        ):
            raise ConfigError(
                "decoder up factors must equal encoder down factors: "
                f"({decoder_cfg.freq_factor}, {decoder_cfg.time_factor}) vs "
                f"({encoder_cfg.freq_factor}, {encoder_cfg.time_factor})"
            )
        if spectral.n_mels % encoder_cfg.freq_factor != 0:
            raise ConfigError(
                f"n_mels {spectral.n_mels} not divisible by freq factor "
                f"{encoder_cfg.freq_factor}"
            )
        self.spectral = spectral
        self.encoder_cfg = encoder_cfg
        self.decoder_cfg = decoder_cfg
        self.quantizer_cfg = quantizer_cfg
        self.variant = variant
        self.encoder = Encoder(encoder_cfg)
        self.decoder = Decoder(decoder_cfg)
        self.quantizer = SimVQ(quantizer_cfg)

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(
            self.spectral.to_dict(),
            self.encoder_cfg.to_dict(),
            self.decoder_cfg.to_dict(),
            self.quantizer_cfg.to_dict(),
        )

    @property
    def time_factor(self) -> int:
        return self.encoder_cfg.time_factor

    @property
    def freq_factor(self) -> int:
        return self.encoder_cfg.freq_factor

    def parameter_count(self) -> int:
        return count_parameters(self)

    def config_payload(self) -> dict:
        return {
            "spectral_config": self.spectral.to_dict(),
            "encoder_config": self.encoder_cfg.to_dict(),
            "decoder_config": self.decoder_cfg.to_dict(),
            "quantizer_config": self.quantizer_cfg.to_dict(),
            "variant": self.variant,
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_config_payload(cls, payload: dict) -> "CodecModel":
        return cls(
            spectral=SpectralConfig.from_dict(payload["spectral_config"]),
            encoder_cfg=EncoderConfig.from_dict(payload["encoder_config"]),
            quantizer_cfg=QuantizerConfig.from_dict(payload["quantizer_config"]),
            decoder_cfg=DecoderConfig.from_dict(payload["decoder_config"]),
            variant=payload.get("variant", "custom"),
        )

    def pad_frames_for(self, n_frames: int) -> int:
        """Frames of log-floor padding needed to reach a time-factor multiple."""
        k = self.time_factor
        return (-n_frames) % k

    def encode_mel(self, mel: MelSpectrogram) -> tuple[LatentGrid, int]:
        """Mel grid -> latent grid, padding time to a multiple of the factor.

        Returns the latent and the pad amount to crop after decoding.
        """
        if mel.n_mels != self.spectral.n_mels:
            raise ShapeError(
                f"mel has {mel.n_mels} bins, codec expects {self.spectral.n_mels}"
            )
        values = mel.values
        if not np.all(np.isfinite(values)):
            raise NumericError("mel grid contains non-finite values")
        pad = self.pad_frames_for(mel.n_frames)
        if pad:
            floor = math.log(mel.config.log_floor)
            values = np.pad(values, ((0, 0), (0, pad)), constant_values=floor)
        x = torch.from_numpy(values).to(torch.float32)[None, None]
        with torch.no_grad():
            z = self.encoder(x)
        return LatentGrid(values=z[0]), pad

    def decode_latent(self, latent: LatentGrid, pad_frames: int = 0) -> MelSpectrogram:
        """Latent grid -> mel grid, cropping pad frames and clamping to the floor."""
        z = torch.from_numpy(latent.values).to(torch.float32)[None]
        with torch.no_grad():
            out = self.decoder(z)
        values = out[0, 0].numpy().astype(np.float64)
        if pad_frames:
            if pad_frames >= values.shape[1]:
                raise ShapeError(
                    f"pad_frames {pad_frames} >= decoded frame count {values.shape[1]}"
                )
            values = values[:, :-pad_frames]
        values = np.maximum(values, math.log(self.spectral.log_floor))
        return MelSpectrogram(values=values, config=self.spectral)

    def quantize_latent(self, latent: LatentGrid, order: FlattenOrder) -> QuantizeResult:
        return quantize(latent, self.quantizer, order)

    def dequantize_tokens(self, tokens: TokenSequence) -> LatentGrid:
        return dequantize(tokens, self.quantizer)

    def mel_to_tokens(
        self, mel: MelSpectrogram, order: FlattenOrder = FlattenOrder.FRAME_WISE
    ) -> tuple[TokenSequence, int]:
        latent, pad = self.encode_mel(mel)
        return self.quantize_latent(latent, order).tokens, pad

    def tokens_to_mel(self, tokens: TokenSequence, pad_frames: int = 0) -> MelSpectrogram:
        return self.decode_latent(self.dequantize_tokens(tokens), pad_frames)

    def embeddings_for(self, mel: MelSpectrogram, order: FlattenOrder) -> np.ndarray:
        """Post-quantizer vectors in flattened order, [N, d] float32."""
        tokens, _ = self.mel_to_tokens(mel, order)
        with torch.no_grad():
            rows = self.quantizer.effective_codebook()[torch.from_numpy(tokens.tokens)]
        return rows.to(torch.float32).numpy()

    def training_forward(self, x: torch.Tensor, order: FlattenOrder):
        """Differentiable path: returns (x_hat, z, q_raw, tokens).

        x is [B, 1, F, T]; x_hat is the raw decoder output (no clamp, so
        gradients flow everywhere); commitment terms are computed by the
        caller from z and q_raw on the grid layout.
        """
        z = self.encoder(x)
        grid_shape = (z.shape[2], z.shape[3])
        zf = flatten_batch(z, order)
        q_st, q_raw, tokens = self.quantizer(zf)
        q_grid = unflatten_batch(q_st, grid_shape, order)
        q_raw_grid = unflatten_batch(q_raw, grid_shape, order)
        x_hat = self.decoder(q_grid)
        return x_hat, z, q_raw_grid, tokens


def save_checkpoint(path, model: CodecModel, extra: dict | None = None) -> Path:
    """Write a checkpoint: configs, fingerprint, weights, plus trainer extras."""
    payload = dict(model.config_payload())
    payload["format_version"] = CHECKPOINT_FORMAT
    payload["model_state"] = model.state_dict()
    if extra:
        overlap = set(extra) & set(payload)
        if overlap:
            raise ConfigError(f"checkpoint extras collide with reserved keys: {overlap}")
        payload.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_checkpoint(
    path, expected_fingerprint: str | None = None, force: bool = False
) -> tuple[CodecModel, dict]:
    """Rebuild the model from a checkpoint; refuse fingerprint drift unless force."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such checkpoint: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "model_state" not in payload:
        raise ConfigError(f"checkpoint {path} is not a recognized container")
    if payload.get("format_version") != CHECKPOINT_FORMAT:
        raise ConfigError(
            f"checkpoint format {payload.get('format_version')} unsupported "
            f"(expected {CHECKPOINT_FORMAT})"
        )
    model = CodecModel.from_config_payload(payload)
    stored = payload.get("fingerprint")
    if stored != model.fingerprint:
        raise ConfigError(
            f"checkpoint fingerprint {stored} does not match its own configs; "
            f"file is corrupt or hand-edited"
        )
    if expected_fingerprint is not None and stored != expected_fingerprint and not force:
        raise ConfigError(
            f"checkpoint fingerprint {stored[:12]}... does not match requested "
            f"config {expected_fingerprint[:12]}...; pass force to override"
        )
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, payload
