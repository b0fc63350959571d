"""Fully convolutional 2D encoder and mirrored decoder over log-mel grids.

Tensors are [B, C, F, T] float32 (F = mel bins, T = frames). Downsampling is
a strided 3x3 conv at each stage end; upsampling is nearest-neighbor followed
by a 3x3 conv, which avoids checkerboard artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math

import torch
from torch import nn

from .errors import ConfigError, NumericError, ShapeError

_ACTIVATIONS = {"silu": nn.SiLU, "gelu": nn.GELU}


def _as_tuple(x) -> tuple[int, ...]:
    return tuple(int(v) for v in x)


@dataclasses.dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 1
    channel_schedule: tuple[int, ...] = (128, 256, 512)
    time_down: tuple[int, ...] = (2, 2, 4)
    freq_down: tuple[int, ...] = (2, 2, 4)
    resblocks_per_stage: int = 2
    groupnorm_groups: int = 32
    activation: str = "silu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "channel_schedule", _as_tuple(self.channel_schedule))
        object.__setattr__(self, "time_down", _as_tuple(self.time_down))
        object.__setattr__(self, "freq_down", _as_tuple(self.freq_down))
        n = len(self.channel_schedule)
        if n == 0:
            raise ConfigError("channel_schedule must not be empty")
        if len(self.time_down) != n or len(self.freq_down) != n:
            raise ConfigError(
                "channel_schedule, time_down, freq_down must have equal lengths, got "
                f"{n}/{len(self.time_down)}/{len(self.freq_down)}"
            )
        if any(c <= 0 for c in self.channel_schedule):
            raise ConfigError(f"channel counts must be positive: {self.channel_schedule}")
        if any(f < 1 for f in self.time_down + self.freq_down):
            raise ConfigError("down factors must be >= 1")
        if self.resblocks_per_stage < 1:
            raise ConfigError("resblocks_per_stage must be >= 1")
        if self.groupnorm_groups < 1:
            raise ConfigError("groupnorm_groups must be >= 1")
        for c in self.channel_schedule:
            if c % self.groupnorm_groups != 0:
                raise ConfigError(
                    f"groupnorm_groups={self.groupnorm_groups} must divide channel count {c}"
                )
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(
                f"activation must be one of {sorted(_ACTIVATIONS)}, got {self.activation!r}"
            )

    @property
    def latent_channels(self) -> int:
        return self.channel_schedule[-1]

    @property
    def time_factor(self) -> int:
        return math.prod(self.time_down)

    @property
    def freq_factor(self) -> int:
        return math.prod(self.freq_down)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls) if f.name in d})


@dataclasses.dataclass(frozen=True)
class DecoderConfig:
    """Mirror of EncoderConfig.

    channel_schedule lists each stage's output width except the final entry,
    which is the output-projection channel count (1 for a mel grid); the last
    upsampling stage keeps the second-to-last width.
    """

    in_channels: int = 512
    channel_schedule: tuple[int, ...] = (256, 128, 1)
    time_up: tuple[int, ...] = (4, 2, 2)
    freq_up: tuple[int, ...] = (4, 2, 2)
    resblocks_per_stage: int = 2
    groupnorm_groups: int = 32
    activation: str = "silu"

    def __post_init__(self) -> None:
        object.__setattr__(self, "channel_schedule", _as_tuple(self.channel_schedule))
        object.__setattr__(self, "time_up", _as_tuple(self.time_up))
        object.__setattr__(self, "freq_up", _as_tuple(self.freq_up))
        n = len(self.channel_schedule)
        if n == 0:
            raise ConfigError("channel_schedule must not be empty")
        if len(self.time_up) != n or len(self.freq_up) != n:
            raise ConfigError(
                "channel_schedule, time_up, freq_up must have equal lengths, got "
                f"{n}/{len(self.time_up)}/{len(self.freq_up)}"
            )
        if any(c <= 0 for c in self.channel_schedule) or self.in_channels <= 0:
            raise ConfigError("channel counts must be positive")
        if any(f < 1 for f in self.time_up + self.freq_up):
            raise ConfigError("up factors must be >= 1")
        if self.resblocks_per_stage < 1:
            raise ConfigError("resblocks_per_stage must be >= 1")
        for c in self.stage_widths + (self.in_channels,):
            if c % self.groupnorm_groups != 0:
                raise ConfigError(
                    f"groupnorm_groups={self.groupnorm_groups} must divide channel count {c}"
                )
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(
                f"activation must be one of {sorted(_ACTIVATIONS)}, got {self.activation!r}"
            )

    @property
    def out_channels(self) -> int:
        return self.channel_schedule[-1]

    @property
    def stage_widths(self) -> tuple[int, ...]:
        sched = self.channel_schedule
        if len(sched) == 1:
            return (self.in_channels,)
        return sched[:-1] + (sched[-2],)

    @property
    def time_factor(self) -> int:
        return math.prod(self.time_up)

    @property
    def freq_factor(self) -> int:
        return math.prod(self.freq_up)

    @classmethod
    def mirror(cls, enc: EncoderConfig) -> "DecoderConfig":
        """Decoder that exactly inverts the encoder's shape arithmetic."""
        sched = tuple(reversed(enc.channel_schedule[:-1])) + (enc.in_channels,)
        return cls(
            in_channels=enc.latent_channels,
            channel_schedule=sched,
            time_up=tuple(reversed(enc.time_down)),
            freq_up=tuple(reversed(enc.freq_down)),
            resblocks_per_stage=enc.resblocks_per_stage,
            groupnorm_groups=enc.groupnorm_groups,
            activation=enc.activation,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderConfig":
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls) if f.name in d})


@dataclasses.dataclass
class LatentGrid:
    """Encoder output: float32 grid of shape [C, F_lat, T_lat]."""

    values: "torch.Tensor | object"

    def __post_init__(self) -> None:
        import numpy as np

        if isinstance(self.values, torch.Tensor):
            self.values = self.values.detach().cpu().numpy()
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ShapeError(f"LatentGrid must be 3-D [C, F, T], got shape {self.values.shape}")
        if min(self.values.shape) < 1:
            raise ShapeError(f"LatentGrid dims must be >= 1, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NumericError("LatentGrid contains non-finite values")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]


def _groups_for(groups: int, channels: int) -> int:
    if channels % groups:
        raise ConfigError(f"groupnorm groups {groups} must divide channel count {channels}")
    return groups


class ResBlock(nn.Module):
    """x' + F(x) with F = GN -> act -> conv3x3 -> GN -> act -> conv3x3.

    x' is x itself, or a 1x1 projection when in/out channel counts differ.
    """

    def __init__(self, in_channels: int, out_channels: int, groups: int, activation: str):
        super().__init__()
        act = _ACTIVATIONS[activation]
        self.in_channels = in_channels
        self.norm1 = nn.GroupNorm(_groups_for(groups, in_channels), in_channels)
        self.act1 = act()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups_for(groups, out_channels), out_channels)
        self.act2 = act()
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.proj = (
            nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else None
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"ResBlock expects {self.in_channels} channels, got {x.shape[1]}"
            )
        h = self.conv1(self.act1(self.norm1(x)))
        h = self.conv2(self.act2(self.norm2(h)))
        skip = x if self.proj is None else self.proj(x)
        return skip + h


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        act = _ACTIVATIONS[cfg.activation]
        self.conv_in = nn.Conv2d(cfg.in_channels, cfg.channel_schedule[0], 3, padding=1)
        stages = []
        prev = cfg.channel_schedule[0]
        for width, t_down, f_down in zip(cfg.channel_schedule, cfg.time_down, cfg.freq_down):
            blocks: list[nn.Module] = []
            for b in range(cfg.resblocks_per_stage):
                blocks.append(
                    ResBlock(prev if b == 0 else width, width, cfg.groupnorm_groups, cfg.activation)
                )
            blocks.append(
                nn.Conv2d(width, width, 3, stride=(f_down, t_down), padding=1)
            )
            stages.append(nn.Sequential(*blocks))
            prev = width
        self.stages = nn.ModuleList(stages)
        self.norm_out = nn.GroupNorm(_groups_for(cfg.groupnorm_groups, prev), prev)
        self.act_out = act()
        self.conv_out = nn.Conv2d(prev, cfg.latent_channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(
                f"encoder expects [B, {self.cfg.in_channels}, F, T], got {tuple(x.shape)}"
            )
        h = self.conv_in(x)
        for stage in self.stages:
            h = stage(h)
        return self.conv_out(self.act_out(self.norm_out(h)))


class Decoder(nn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        act = _ACTIVATIONS[cfg.activation]
        self.conv_in = nn.Conv2d(cfg.in_channels, cfg.in_channels, 3, padding=1)
        stages = []
        prev = cfg.in_channels
        for width, t_up, f_up in zip(cfg.stage_widths, cfg.time_up, cfg.freq_up):
            blocks: list[nn.Module] = [
                nn.Upsample(scale_factor=(float(f_up), float(t_up)), mode="nearest"),
                nn.Conv2d(prev, prev, 3, padding=1),
            ]
            for b in range(cfg.resblocks_per_stage):
                blocks.append(
                    ResBlock(prev if b == 0 else width, width, cfg.groupnorm_groups, cfg.activation)
                )
            stages.append(nn.Sequential(*blocks))
            prev = width
        self.stages = nn.ModuleList(stages)
        self.norm_out = nn.GroupNorm(_groups_for(cfg.groupnorm_groups, prev), prev)
        self.act_out = act()
        self.conv_out = nn.Conv2d(prev, cfg.out_channels, 3, padding=1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.cfg.in_channels:
            raise ShapeError(
                f"decoder expects [B, {self.cfg.in_channels}, F, T], got {tuple(z.shape)}"
            )
        h = self.conv_in(z)
        for stage in self.stages:
            h = stage(h)
        return self.conv_out(self.act_out(self.norm_out(h)))


def count_parameters(module: nn.Module) -> int:
    """Exact count of trainable scalars."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def config_fingerprint(*configs: dict) -> str:
    """sha256 over the canonical JSON of every architectural config."""
    blob = json.dumps(list(configs), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
