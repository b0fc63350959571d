"""Latent flattening and the single-codebook SimVQ quantizer.

The codebook is a frozen Gaussian base [K x d] scaled by 1/sqrt(d) times a
trainable square projection [d x d] (identity at init). Lookup is an exact
nearest-neighbor search over the effective codebook base @ projection with
ties broken by lowest index; gradients reach only the projection (through the
codebook-side commitment term) and the encoder (straight-through).
"""

from __future__ import annotations

import dataclasses
import enum
import math

import numpy as np
import torch
from torch import nn

from .errors import (
    ConfigError,
    CorruptStreamError,
    EmptyInputError,
    NumericError,
    ShapeError,
)
from .model import LatentGrid


class FlattenOrder(str, enum.Enum):
    """frame_wise: position = t * F + f. band_wise: position = f * T + t."""

    FRAME_WISE = "frame_wise"
    BAND_WISE = "band_wise"

    @property
    def wire(self) -> int:
        return 0 if self is FlattenOrder.FRAME_WISE else 1

    @classmethod
    def from_wire(cls, value: int) -> "FlattenOrder":
        if value == 0:
            return cls.FRAME_WISE
        if value == 1:
            return cls.BAND_WISE
        raise CorruptStreamError(f"unknown flatten_order byte {value}")

    @classmethod
    def parse(cls, value) -> "FlattenOrder":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            raise ConfigError(
                f"flatten order must be 'frame_wise' or 'band_wise', got {value!r}"
            ) from None


@dataclasses.dataclass(frozen=True)
class QuantizerConfig:
    codebook_size: int = 8192
    dim: int = 512

    def __post_init__(self) -> None:
        if self.codebook_size < 1 or self.codebook_size & (self.codebook_size - 1):
            raise ConfigError(
                f"codebook_size must be a positive power of two, got {self.codebook_size}"
            )
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")

    @property
    def bits(self) -> int:
        return self.codebook_size.bit_length() - 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizerConfig":
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls) if f.name in d})


@dataclasses.dataclass
class TokenSequence:
    """1-D code indices plus the grid geometry needed to invert flattening."""

    tokens: np.ndarray
    grid_shape: tuple[int, int]
    order: FlattenOrder

    def __post_init__(self) -> None:
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 1:
            raise ShapeError(f"tokens must be 1-D, got shape {self.tokens.shape}")
        f, t = self.grid_shape
        if self.tokens.size != f * t:
            raise ShapeError(
                f"token count {self.tokens.size} != grid {f}x{t} = {f * t}"
            )
        if self.tokens.size and self.tokens.min() < 0:
            raise CorruptStreamError(f"negative token {int(self.tokens.min())}")
        self.order = FlattenOrder.parse(self.order)

    def __len__(self) -> int:
        return self.tokens.size


@dataclasses.dataclass
class QuantizeResult:
    tokens: TokenSequence
    quantized: np.ndarray
    commitment_loss: float
    utilization: float
    perplexity: float


def flatten_batch(grid: torch.Tensor, order: FlattenOrder) -> torch.Tensor:
    """[B, C, F, T] -> [B, F*T, C] in the requested enumeration order."""
    if grid.ndim != 4:
        raise ShapeError(f"expected [B, C, F, T], got shape {tuple(grid.shape)}")
    b, c, f, t = grid.shape
    if order is FlattenOrder.FRAME_WISE:
        return grid.permute(0, 3, 2, 1).reshape(b, t * f, c)
    return grid.permute(0, 2, 3, 1).reshape(b, f * t, c)


def unflatten_batch(
    seq: torch.Tensor, grid_shape: tuple[int, int], order: FlattenOrder
) -> torch.Tensor:
    """Inverse of flatten_batch: [B, F*T, C] -> [B, C, F, T]."""
    if seq.ndim != 3:
        raise ShapeError(f"expected [B, N, C], got shape {tuple(seq.shape)}")
    b, n, c = seq.shape
    f, t = grid_shape
    if n != f * t:
        raise ShapeError(f"sequence length {n} != grid {f}x{t}")
    if order is FlattenOrder.FRAME_WISE:
        return seq.reshape(b, t, f, c).permute(0, 3, 2, 1)
    return seq.reshape(b, f, t, c).permute(0, 3, 1, 2)


def flatten_grid(latent: LatentGrid, order: FlattenOrder) -> np.ndarray:
    """[C, F, T] numpy grid -> [F*T, C] sequence of d-vectors."""
    g = torch.from_numpy(latent.values).unsqueeze(0)
    return flatten_batch(g, FlattenOrder.parse(order))[0].numpy()


def unflatten_grid(
    seq: np.ndarray, grid_shape: tuple[int, int], order: FlattenOrder
) -> LatentGrid:
    s = torch.from_numpy(np.ascontiguousarray(seq)).unsqueeze(0)
    grid = unflatten_batch(s, grid_shape, FlattenOrder.parse(order))[0]
    return LatentGrid(values=grid.contiguous().numpy())


class SimVQ(nn.Module):
    """Frozen-base, trainable-projection vector quantizer."""

    def __init__(self, cfg: QuantizerConfig):
        super().__init__()
        self.cfg = cfg
        base = torch.randn(cfg.codebook_size, cfg.dim) / math.sqrt(cfg.dim)
        self.register_buffer("base_embeddings", base)
        self.projection = nn.Parameter(torch.eye(cfg.dim))

    @property
    def codebook_size(self) -> int:
        return self.cfg.codebook_size

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def effective_codebook(self) -> torch.Tensor:
        return self.base_embeddings @ self.projection

    def lookup(self, flat: torch.Tensor) -> torch.Tensor:
        """Nearest effective code per row, ties broken by lowest index."""
        if flat.ndim != 2 or flat.shape[1] != self.dim:
            raise ShapeError(
                f"lookup expects [N, {self.dim}], got shape {tuple(flat.shape)}"
            )
        with torch.no_grad():
            e = self.effective_codebook()
            d2 = (
                (flat * flat).sum(dim=1, keepdim=True)
                - 2.0 * flat @ e.T
                + (e * e).sum(dim=1)[None, :]
            )
            best = d2.min(dim=1, keepdim=True).values
            ties = d2 <= best
            idx = torch.arange(self.codebook_size, device=flat.device)
            candidates = torch.where(ties, idx, torch.full_like(idx, self.codebook_size))
            return candidates.min(dim=1).values

    def forward(self, zf: torch.Tensor):
        """Quantize [B, N, d] (or [N, d]); returns (q_st, q_raw, tokens).

        q_st carries straight-through gradients to zf; q_raw carries codebook
        gradients to the projection (used by the commitment loss).
        """
        squeeze = zf.ndim == 2
        if squeeze:
            zf = zf.unsqueeze(0)
        if zf.ndim != 3 or zf.shape[-1] != self.dim:
            raise ShapeError(f"expected [B, N, {self.dim}], got shape {tuple(zf.shape)}")
        if not torch.isfinite(zf).all():
            raise NumericError("quantizer input contains non-finite values")
        tokens = self.lookup(zf.reshape(-1, self.dim)).reshape(zf.shape[:2])
        q_raw = self.effective_codebook()[tokens]
        q_st = zf + (q_raw - zf).detach()
        if squeeze:
            return q_st[0], q_raw[0], tokens[0]
        return q_st, q_raw, tokens


def commitment_loss(z: torch.Tensor, q_raw: torch.Tensor) -> torch.Tensor:
    """Encoder-side mean ||z - sg(q)||^2 plus codebook-side mean ||sg(z) - q||^2.

    The squared norm sums over the channel axis and averages over positions;
    both terms are equal in value, so the result is 2x the mean squared
    distance, but their gradients differ (encoder vs projection).
    """
    if z.shape != q_raw.shape:
        raise ShapeError(f"latent shape {tuple(z.shape)} != code shape {tuple(q_raw.shape)}")
    channel_axis = 1 if z.ndim == 4 else -1
    enc_side = ((z - q_raw.detach()) ** 2).sum(dim=channel_axis).mean()
    code_side = ((z.detach() - q_raw) ** 2).sum(dim=channel_axis).mean()
    return enc_side + code_side


def codebook_stats(history, codebook_size: int) -> tuple[float, float]:
    """(utilization, perplexity) of an empirical token distribution."""
    tokens = np.asarray(history, dtype=np.int64).reshape(-1)
    if tokens.size == 0:
        raise EmptyInputError("token history is empty")
    if tokens.min() < 0 or tokens.max() >= codebook_size:
        raise CorruptStreamError(
            f"token out of range [0, {codebook_size}): {int(tokens.min())}..{int(tokens.max())}"
        )
    counts = np.bincount(tokens, minlength=codebook_size)
    probs = counts[counts > 0] / tokens.size
    entropy = float(-(probs * np.log(probs)).sum())
    utilization = float((counts > 0).sum() / codebook_size)
    return utilization, float(np.exp(entropy))


def quantize(latent: LatentGrid, quantizer: SimVQ, order: FlattenOrder) -> QuantizeResult:
    """Pure (no-grad) quantization of a latent grid."""
    order = FlattenOrder.parse(order)
    if latent.channels != quantizer.dim:
        raise ShapeError(
            f"latent has {latent.channels} channels, codebook dim is {quantizer.dim}"
        )
    dtype = quantizer.projection.dtype
    grid = torch.from_numpy(latent.values).to(dtype).unsqueeze(0)
    with torch.no_grad():
        zf = flatten_batch(grid, order)[0]
        tokens = quantizer.lookup(zf)
    seq = TokenSequence(
        tokens=tokens.numpy().astype(np.int64),
        grid_shape=latent.grid_shape,
        order=order,
    )
    quantized = dequantize(seq, quantizer)
    # Sum over channels, average over grid cells: the same reduction order
    # regardless of how the sequence was flattened.
    diff = latent.values - quantized.values
    commit = 2.0 * float((diff * diff).sum(axis=0).mean())
    utilization, perplexity = codebook_stats(seq.tokens, quantizer.codebook_size)
    return QuantizeResult(
        tokens=seq,
        quantized=quantized.values,
        commitment_loss=commit,
        utilization=utilization,
        perplexity=perplexity,
    )


def dequantize(tokens: TokenSequence, quantizer: SimVQ) -> LatentGrid:
    """Inverse lookup: effective-codebook rows rearranged to the grid."""
    if tokens.tokens.size and tokens.tokens.max() >= quantizer.codebook_size:
        raise CorruptStreamError(
            f"token {int(tokens.tokens.max())} >= codebook size {quantizer.codebook_size}"
        )
    with torch.no_grad():
        e = quantizer.effective_codebook()
        rows = e[torch.from_numpy(tokens.tokens)]
        grid = unflatten_batch(rows.unsqueeze(0), tokens.grid_shape, tokens.order)[0]
    values = grid.contiguous().to(torch.float32).numpy()
    if not np.all(np.isfinite(values)):
        raise NumericError("dequantized grid contains non-finite values")
    return LatentGrid(values=values)
