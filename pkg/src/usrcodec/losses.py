"""Loss functions and the single-band, single-scale spectral discriminator.

The overall objective is reported as one weighted sum, but optimization
alternates: the discriminator minimizes l_disc alone, the generator minimizes
the remaining weighted terms. Reconstruction and feature matching use raw L1.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import torch
from torch import nn
from torch.nn.utils.parametrizations import weight_norm

from .dsp import MelSpectrogram
from .errors import ConfigError, ShapeError


@dataclasses.dataclass(frozen=True)
class LossWeights:
    alpha_low: float = 2.0
    alpha_high: float = 1.0
    lambda_sr: float = 15.0
    lambda_disc: float = 1.0
    lambda_adv: float = 1.0
    lambda_fm: float = 1.0
    lambda_cm: float = 1.0

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name} must be >= 0")
        if self.alpha_low + self.alpha_high <= 0:
            raise ConfigError("alpha_low + alpha_high must be > 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls) if f.name in d})


@dataclasses.dataclass
class LossBreakdown:
    """Named components plus the reported weighted total."""

    l_sr: float
    l_disc: float
    l_adv: float
    l_fm: float
    l_cm: float
    total: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in dataclasses.astuple(self))


def _as_grid_tensor(x) -> torch.Tensor:
    if isinstance(x, MelSpectrogram):
        x = x.values
    if isinstance(x, np.ndarray):
        return torch.from_numpy(x)
    if isinstance(x, torch.Tensor):
        return x
    raise ShapeError(f"expected MelSpectrogram, ndarray, or tensor, got {type(x).__name__}")


def subband_recon_loss(x, x_hat, weights: LossWeights = LossWeights()) -> torch.Tensor:
    """Weighted sub-band L1: (a_low*mean|d_low| + a_high*mean|d_high|) / (a_low+a_high).

    The frequency axis is the second-to-last; each half-grid contributes its
    mean absolute error, so the value is resolution-independent.
    """
    a = _as_grid_tensor(x)
    b = _as_grid_tensor(x_hat)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    m = a.shape[-2]
    if m % 2 != 0:
        raise ConfigError(f"sub-band loss needs an even mel count, got {m}")
    half = m // 2
    diff = (a - b).abs()
    low = diff[..., :half, :].mean()
    high = diff[..., half:, :].mean()
    w = weights
    return (w.alpha_low * low + w.alpha_high * high) / (w.alpha_low + w.alpha_high)


def full_recon_loss(x, x_hat) -> torch.Tensor:
    """Plain full-grid mean absolute error (the no-sub-band ablation)."""
    a = _as_grid_tensor(x)
    b = _as_grid_tensor(x_hat)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def adversarial_losses(real_logits: torch.Tensor, fake_logits: torch.Tensor):
    """Least-squares GAN pair.

    l_disc = mean((D(x) - 1)^2) + mean(D(x_hat)^2), with the caller passing
    logits of a detached reconstruction; l_adv = mean((D(x_hat) - 1)^2).
    """
    l_disc = ((real_logits - 1.0) ** 2).mean() + (fake_logits**2).mean()
    l_adv = ((fake_logits - 1.0) ** 2).mean()
    return l_disc, l_adv


def feature_matching_loss(real_features, fake_features) -> torch.Tensor:
    """Mean over stages of mean|f_real - f_fake|, with f_real detached."""
    if len(real_features) != len(fake_features):
        raise ShapeError(
            f"feature list lengths differ: {len(real_features)} vs {len(fake_features)}"
        )
    if not real_features:
        raise ShapeError("feature lists are empty")
    terms = []
    for fr, ff in zip(real_features, fake_features):
        if fr.shape != ff.shape:
            raise ShapeError(f"feature shape mismatch: {tuple(fr.shape)} vs {tuple(ff.shape)}")
        terms.append((fr.detach() - ff).abs().mean())
    return torch.stack(terms).mean()


def compose_objective(
    l_sr: float,
    l_disc: float,
    l_adv: float,
    l_fm: float,
    l_cm: float,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """Reported scalar: lambda_sr*l_sr + l_disc + l_adv + l_fm + l_cm."""
    w = weights
    total = (
        w.lambda_sr * l_sr
        + w.lambda_disc * l_disc
        + w.lambda_adv * l_adv
        + w.lambda_fm * l_fm
        + w.lambda_cm * l_cm
    )
    return LossBreakdown(
        l_sr=float(l_sr),
        l_disc=float(l_disc),
        l_adv=float(l_adv),
        l_fm=float(l_fm),
        l_cm=float(l_cm),
        total=float(total),
    )


@dataclasses.dataclass(frozen=True)
class DiscriminatorConfig:
    """Single fixed-resolution spectral discriminator (no bands, no scales)."""

    in_channels: int = 1
    stages: tuple[tuple[int, int, int], ...] = ((32, 3, 2), (64, 3, 2), (128, 3, 2), (256, 3, 2))
    leaky_slope: float = 0.1
    head_kernel: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "stages", tuple(tuple(int(v) for v in s) for s in self.stages)
        )
        if not self.stages:
            raise ConfigError("discriminator needs at least one stage")
        for ch, k, s in self.stages:
            if ch < 1 or k < 1 or s < 1:
                raise ConfigError(f"invalid stage spec {(ch, k, s)}")
        if self.head_kernel < 1:
            raise ConfigError("head_kernel must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        d = dict(d)
        if "stages" in d:
            d["stages"] = tuple(tuple(s) for s in d["stages"])
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls) if f.name in d})


class SpectralDiscriminator(nn.Module):
    """Weight-normalized strided conv stack returning (logits, stage features)."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.cfg = cfg
        convs = []
        prev = cfg.in_channels
        for ch, k, s in cfg.stages:
            convs.append(weight_norm(nn.Conv2d(prev, ch, k, stride=s, padding=k // 2)))
            prev = ch
        self.convs = nn.ModuleList(convs)
        self.act = nn.LeakyReLU(cfg.leaky_slope)
        self.head = weight_norm(
            nn.Conv2d(prev, 1, cfg.head_kernel, padding=cfg.head_kernel // 2)
        )

    def forward(self, x: torch.Tensor):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(
                f"discriminator expects [B, {self.cfg.in_channels}, F, T], got {tuple(x.shape)}"
            )
        features = []
        h = x
        for conv in self.convs:
            h = self.act(conv(h))
            features.append(h)
        return self.head(h), features
