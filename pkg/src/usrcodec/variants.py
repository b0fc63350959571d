"""Named codec presets and the YAML run-configuration format.

Two presets ship: B (16x time compression, 13-bit codebook, the default) and
L (4x time compression for a higher-fidelity, higher-rate stream). Nominal
rate labels are the published figures for each preset; measured rates follow
from the hop/downsampling arithmetic and are reported alongside, never in
place of, the labels.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from . import bitstream
from .codec import CodecModel
from .dsp import SpectralConfig
from .errors import ConfigError
from .losses import DiscriminatorConfig, LossWeights
from .model import DecoderConfig, EncoderConfig
from .quantize import QuantizerConfig
from .training import TrainConfig


@dataclasses.dataclass(frozen=True)
class CodecVariant:
    name: str
    wire_id: int
    spectral: SpectralConfig
    encoder: EncoderConfig
    quantizer: QuantizerConfig
    nominal_tps: float
    nominal_kbps: float

    def build(self, seed: int = 0) -> CodecModel:
        from .training import build_model

        return build_model(
            self.spectral, self.encoder, self.quantizer, seed=seed, variant=self.name
        )


VARIANT_B = CodecVariant(
    name="B",
    wire_id=bitstream.VARIANT_B,
    spectral=SpectralConfig(),
    encoder=EncoderConfig(),
    quantizer=QuantizerConfig(),
    nominal_tps=40.0,
    nominal_kbps=0.52,
)

VARIANT_L = CodecVariant(
    name="L",
    wire_id=bitstream.VARIANT_L,
    spectral=SpectralConfig(),
    encoder=EncoderConfig(time_down=(2, 2, 1)),
    quantizer=QuantizerConfig(),
    nominal_tps=176.0,
    nominal_kbps=2.29,
)

VARIANTS = {"B": VARIANT_B, "L": VARIANT_L}


def get_variant(name: str) -> CodecVariant:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(
            f"unknown variant {name!r} (available: {sorted(VARIANTS)})"
        ) from None


def nominal_rates(wire_id: int) -> tuple[float, float] | None:
    """(tps, kbps) label for a header variant byte, None for custom streams."""
    for v in VARIANTS.values():
        if v.wire_id == wire_id:
            return (v.nominal_tps, v.nominal_kbps)
    return None


def overfit_preset() -> "RunConfig":
    """Small-footprint recipe meant to memorize a handful of clips on CPU.

    Shrinks the channel stack and codebook so 2000 steps finish in minutes
    while keeping every architectural element of the full model.
    """
    encoder = EncoderConfig(channel_schedule=(32, 64, 128))
    return RunConfig(
        variant_name="custom",
        spectral=SpectralConfig(),
        encoder=encoder,
        quantizer=QuantizerConfig(codebook_size=256, dim=128),
        train=TrainConfig(
            batch_size=4,
            total_steps=2000,
            crop_samples=32768,
            checkpoint_every=500,
        ),
        weights=LossWeights(),
        discriminator=DiscriminatorConfig(),
    )


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Everything a training run needs, loadable from one YAML file."""

    variant_name: str
    spectral: SpectralConfig
    encoder: EncoderConfig
    quantizer: QuantizerConfig
    train: TrainConfig
    weights: LossWeights
    discriminator: DiscriminatorConfig

    def build(self) -> CodecModel:
        from .training import build_model

        return build_model(
            self.spectral,
            self.encoder,
            self.quantizer,
            seed=self.train.seed,
            variant=self.variant_name,
        )

    def to_dict(self) -> dict:
        return {
            "variant": self.variant_name,
            "spectral": self.spectral.to_dict(),
            "model": self.encoder.to_dict(),
            "quantizer": self.quantizer.to_dict(),
            "train": self.train.to_dict(),
            "weights": dataclasses.asdict(self.weights),
            "discriminator": dataclasses.asdict(self.discriminator),
        }


def _merge_section(cls, base, overrides: dict | None, section: str):
    if overrides is None:
        return base
    if not isinstance(overrides, dict):
        raise ConfigError(f"config section {section!r} must be a mapping")
    merged = dict(base.to_dict() if hasattr(base, "to_dict") else dataclasses.asdict(base))
    known = {f.name for f in dataclasses.fields(cls)}
    for key, value in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in config section {section!r}")
        if isinstance(value, list):
            value = tuple(value)
        merged[key] = value
    if hasattr(cls, "from_dict"):
        return cls.from_dict(merged)
    return cls(**merged)


def load_run_config(path) -> RunConfig:
    """Parse the documented YAML format: a `variant` name plus per-section
    overrides under `spectral`, `model`, `quantizer`, `train`, `weights`,
    and `discriminator`."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    known_sections = {"variant", "spectral", "model", "quantizer", "train", "weights",
                      "discriminator"}
    unknown = set(raw) - known_sections
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    name = raw.get("variant", "B")
    if name in VARIANTS:
        base = VARIANTS[name]
        spectral, encoder, quantizer = base.spectral, base.encoder, base.quantizer
    elif name == "custom":
        spectral, encoder, quantizer = SpectralConfig(), EncoderConfig(), QuantizerConfig()
    else:
        raise ConfigError(f"variant must be one of ['B', 'L', 'custom'], got {name!r}")
    overridden = {"spectral", "model", "quantizer"} & set(raw)
    if name in VARIANTS and overridden:
        name = "custom"
    return RunConfig(
        variant_name=name,
        spectral=_merge_section(SpectralConfig, spectral, raw.get("spectral"), "spectral"),
        encoder=_merge_section(EncoderConfig, encoder, raw.get("model"), "model"),
        quantizer=_merge_section(QuantizerConfig, quantizer, raw.get("quantizer"), "quantizer"),
        train=_merge_section(TrainConfig, TrainConfig(), raw.get("train"), "train"),
        weights=_merge_section(LossWeights, LossWeights(), raw.get("weights"), "weights"),
        discriminator=_merge_section(
            DiscriminatorConfig, DiscriminatorConfig(), raw.get("discriminator"),
            "discriminator",
        ),
    )


def save_run_config(path, cfg: RunConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
    return path
