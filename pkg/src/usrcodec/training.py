"""Adversarial training loop: two AdamW optimizers, deterministic resume.

One step = one discriminator update on l_disc (when enabled) followed by one
generator update on lambda_sr*l_sr + l_adv + l_fm + l_cm. The Eq.-style
weighted sum including l_disc is logged as the reported total but never
optimized as a single objective.
"""

from __future__ import annotations

import collections
import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import torch

from .codec import CHECKPOINT_FORMAT, CodecModel, save_checkpoint
from .dsp import AudioClip, SpectralConfig, load_audio, mel_spectrogram
from .errors import ConfigError, EmptyInputError, NumericError
from .losses import (
    DiscriminatorConfig,
    LossBreakdown,
    LossWeights,
    SpectralDiscriminator,
    adversarial_losses,
    compose_objective,
    feature_matching_loss,
    full_recon_loss,
    subband_recon_loss,
)
from .quantize import FlattenOrder, codebook_stats, commitment_loss

AUDIO_SUFFIXES = (".wav", ".flac")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 20
    total_steps: int = 100
    seed: int = 0
    betas: tuple[float, float] = (0.8, 0.99)
    weight_decay: float = 1e-2
    use_subband: bool = True
    use_discriminator: bool = True
    use_scheduler: bool = False
    flatten_order: str = "frame_wise"
    scheduler_decay: float = 0.999976974
    crop_samples: int = 65536
    checkpoint_every: int = 500
    smooth_window: int = 50
    stats_window: int = 100

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.total_steps < 0:
            raise ConfigError(f"total_steps must be >= 0, got {self.total_steps}")
        if not (0 < self.scheduler_decay <= 1):
            raise ConfigError(f"scheduler_decay must be in (0, 1], got {self.scheduler_decay}")
        if self.crop_samples < 1:
            raise ConfigError("crop_samples must be >= 1")
        if self.checkpoint_every < 1 or self.smooth_window < 1 or self.stats_window < 1:
            raise ConfigError("checkpoint_every, smooth_window, stats_window must be >= 1")
        FlattenOrder.parse(self.flatten_order)

    @property
    def order(self) -> FlattenOrder:
        return FlattenOrder.parse(self.flatten_order)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls) if f.name in d})


def scheduled_lr(base_lr: float, step: int, decay: float, enabled: bool = True) -> float:
    """Closed-form exponential schedule: lr used at update `step` (0-based)."""
    if not enabled:
        return base_lr
    return base_lr * decay**step


class ClipDataset:
    """In-memory corpus of mono waveforms sharing one sample rate."""

    def __init__(self, clips: list[np.ndarray], sample_rate: int):
        if not clips:
            raise ConfigError("dataset is empty")
        self.clips = [np.asarray(c, dtype=np.float64) for c in clips]
        for i, c in enumerate(self.clips):
            if c.ndim != 1 or c.size == 0:
                raise EmptyInputError(f"dataset clip {i} is empty or not mono")
        self.sample_rate = sample_rate

    def __len__(self) -> int:
        return len(self.clips)

    @classmethod
    def from_clips(cls, clips: list[AudioClip]) -> "ClipDataset":
        if not clips:
            raise ConfigError("dataset is empty")
        sr = clips[0].sample_rate
        for c in clips:
            if c.sample_rate != sr:
                raise ConfigError("dataset clips must share one sample rate")
        return cls([c.samples for c in clips], sr)

    @classmethod
    def from_dir(cls, path, sample_rate: int) -> "ClipDataset":
        """Load every WAV/FLAC under path (sorted, recursive)."""
        root = Path(path)
        files = sorted(
            p for p in root.rglob("*") if p.suffix.lower() in AUDIO_SUFFIXES and p.is_file()
        )
        if not files:
            raise ConfigError(f"no audio files under {root}")
        return cls.from_clips([load_audio(p, sample_rate) for p in files])

    def sample_batch(
        self,
        generator: torch.Generator,
        batch_size: int,
        crop_samples: int,
        spectral: SpectralConfig,
    ) -> torch.Tensor:
        """Deterministic random crops -> log-mel batch [B, 1, n_mels, T]."""
        grids = []
        for _ in range(batch_size):
            idx = int(torch.randint(len(self.clips), (1,), generator=generator))
            clip = self.clips[idx]
            if clip.size <= crop_samples:
                crop = np.pad(clip, (0, crop_samples - clip.size))
            else:
                max_start = clip.size - crop_samples
                start = int(torch.randint(max_start + 1, (1,), generator=generator))
                crop = clip[start : start + crop_samples]
            mel = mel_spectrogram(AudioClip(samples=crop, sample_rate=self.sample_rate), spectral)
            grids.append(torch.from_numpy(mel.values).to(torch.float32))
        return torch.stack(grids)[:, None]


class Trainer:
    """Owns the two optimizers and executes alternating GAN steps."""

    def __init__(
        self,
        model: CodecModel,
        cfg: TrainConfig,
        weights: LossWeights = LossWeights(),
        disc: SpectralDiscriminator | None = None,
        disc_cfg: DiscriminatorConfig | None = None,
    ):
        self.model = model
        self.cfg = cfg
        self.weights = weights
        self.disc_cfg = disc_cfg or DiscriminatorConfig()
        self.disc = disc if disc is not None else SpectralDiscriminator(self.disc_cfg)
        self.opt_g = torch.optim.AdamW(
            model.parameters(), lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay
        )
        self.opt_d = torch.optim.AdamW(
            self.disc.parameters(), lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay
        )
        self.step_count = 0
        self.l_sr_window: collections.deque = collections.deque(maxlen=cfg.smooth_window)
        self.token_window: collections.deque = collections.deque(maxlen=cfg.stats_window)

    @property
    def current_lr(self) -> float:
        return scheduled_lr(
            self.cfg.lr, self.step_count, self.cfg.scheduler_decay, self.cfg.use_scheduler
        )

    def _apply_lr(self, lr: float) -> None:
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr

    def step(self, batch: torch.Tensor) -> LossBreakdown:
        """One alternating update on a [B, 1, n_mels, T] log-mel batch."""
        cfg = self.cfg
        lr = self.current_lr
        self._apply_lr(lr)

        x = batch
        x_hat, z, q_raw, tokens = self.model.training_forward(x, cfg.order)

        zero = torch.zeros((), dtype=x_hat.dtype)
        l_disc = l_adv = l_fm = zero
        if cfg.use_discriminator:
            real_logits, _ = self.disc(x)
            fake_logits, _ = self.disc(x_hat.detach())
            l_disc, _ = adversarial_losses(real_logits, fake_logits)
            self.opt_d.zero_grad(set_to_none=True)
            l_disc.backward()
            self.opt_d.step()

            real_logits, real_feats = self.disc(x)
            fake_logits, fake_feats = self.disc(x_hat)
            _, l_adv = adversarial_losses(real_logits.detach(), fake_logits)
            l_fm = feature_matching_loss(real_feats, fake_feats)

        if cfg.use_subband:
            l_sr = subband_recon_loss(x, x_hat, self.weights)
        else:
            l_sr = full_recon_loss(x, x_hat)
        l_cm = commitment_loss(z, q_raw)

        w = self.weights
        gen_objective = (
            w.lambda_sr * l_sr + w.lambda_adv * l_adv + w.lambda_fm * l_fm + w.lambda_cm * l_cm
        )
        self.opt_g.zero_grad(set_to_none=True)
        gen_objective.backward()
        self.opt_g.step()

        breakdown = compose_objective(
            float(l_sr.detach()), float(l_disc.detach()), float(l_adv.detach()),
            float(l_fm.detach()), float(l_cm.detach()), w,
        )
        if not breakdown.is_finite():
            raise NumericError(
                f"non-finite loss at step {self.step_count}: {breakdown.to_dict()}"
            )
        self.step_count += 1
        self.l_sr_window.append(breakdown.l_sr)
        self.token_window.append(tokens.reshape(-1).detach().numpy().astype(np.int64))
        return breakdown

    @property
    def smoothed_l_sr(self) -> float:
        if not self.l_sr_window:
            return math.nan
        return float(np.mean(self.l_sr_window))

    def window_stats(self) -> tuple[float, float]:
        """(utilization, perplexity) over the rolling token window."""
        if not self.token_window:
            return 0.0, 1.0
        return codebook_stats(
            np.concatenate(list(self.token_window)), self.model.quantizer.codebook_size
        )

    def check_parameters_finite(self) -> None:
        for name, p in list(self.model.named_parameters()) + list(self.disc.named_parameters()):
            if not torch.isfinite(p).all():
                raise NumericError(f"non-finite parameter {name} after step {self.step_count}")

    def state_extras(self, data_rng: torch.Generator, history: list[float]) -> dict:
        return {
            "step": self.step_count,
            "train_config": self.cfg.to_dict(),
            "loss_weights": self.weights.to_dict(),
            "discriminator_config": self.disc_cfg.to_dict(),
            "disc_state": self.disc.state_dict(),
            "opt_g_state": self.opt_g.state_dict(),
            "opt_d_state": self.opt_d.state_dict(),
            "data_rng_state": data_rng.get_state(),
            "torch_rng_state": torch.get_rng_state(),
            "l_sr_window": list(self.l_sr_window),
            "token_window": [torch.from_numpy(t) for t in self.token_window],
            "smoothed_history": list(history),
        }

    def load_state_extras(self, payload: dict, data_rng: torch.Generator) -> list[float]:
        self.disc.load_state_dict(payload["disc_state"])
        self.opt_g.load_state_dict(payload["opt_g_state"])
        self.opt_d.load_state_dict(payload["opt_d_state"])
        self.step_count = int(payload["step"])
        data_rng.set_state(payload["data_rng_state"])
        torch.set_rng_state(payload["torch_rng_state"])
        self.l_sr_window = collections.deque(
            [float(v) for v in payload["l_sr_window"]], maxlen=self.cfg.smooth_window
        )
        self.token_window = collections.deque(
            [t.numpy().astype(np.int64) for t in payload["token_window"]],
            maxlen=self.cfg.stats_window,
        )
        return [float(v) for v in payload.get("smoothed_history", [])]


def _checkpoint_path(out_dir: Path, step: int) -> Path:
    return out_dir / f"ckpt_{step:06d}.pt"


def build_model(
    spectral: SpectralConfig, encoder_cfg, quantizer_cfg, decoder_cfg=None,
    variant: str = "custom", seed: int = 0
) -> CodecModel:
    """Seeded model construction so runs are reproducible end to end."""
    torch.manual_seed(seed)
    return CodecModel(
        spectral=spectral,
        encoder_cfg=encoder_cfg,
        quantizer_cfg=quantizer_cfg,
        decoder_cfg=decoder_cfg,
        variant=variant,
    )


def train_loop(
    dataset: ClipDataset,
    model: CodecModel,
    cfg: TrainConfig,
    out_dir,
    weights: LossWeights = LossWeights(),
    resume_from=None,
    log_every: int = 1,
) -> dict:
    """Run cfg.total_steps updates, checkpointing and logging metrics.

    Deterministic resume: restoring a checkpoint and continuing reproduces the
    uninterrupted run bit-for-bit under a fixed seed on a single device.
    """
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"

    torch.manual_seed(cfg.seed)
    trainer = Trainer(model, cfg, weights)
    data_rng = torch.Generator().manual_seed(cfg.seed + 1)
    history: list[float] = []

    if resume_from is not None:
        payload = torch.load(Path(resume_from), map_location="cpu", weights_only=True)
        if payload.get("format_version") != CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint format in {resume_from}")
        if payload.get("fingerprint") != model.fingerprint:
            raise ConfigError(
                "resume checkpoint fingerprint does not match the configured model"
            )
        model.load_state_dict(payload["model_state"])
        history = trainer.load_state_extras(payload, data_rng)

    checkpoints = []

    def save(step: int) -> None:
        path = _checkpoint_path(out_dir, step)
        save_checkpoint(path, model, extra=trainer.state_extras(data_rng, history))
        checkpoints.append(path)

    if trainer.step_count == 0 and resume_from is None:
        save(0)

    start = trainer.step_count
    with metrics_path.open("a", encoding="utf-8") as log:
        for step in range(start + 1, cfg.total_steps + 1):
            lr = trainer.current_lr
            batch = dataset.sample_batch(
                data_rng, cfg.batch_size, cfg.crop_samples, model.spectral
            )
            breakdown = trainer.step(batch)
            history.append(trainer.smoothed_l_sr)
            utilization, perplexity = trainer.window_stats()
            if step % log_every == 0 or step == cfg.total_steps:
                record = {
                    "step": step,
                    "lr": lr,
                    **breakdown.to_dict(),
                    "smoothed_l_sr": trainer.smoothed_l_sr,
                    "utilization": utilization,
                    "perplexity": perplexity,
                }
                log.write(json.dumps(record) + "\n")
            if step % cfg.checkpoint_every == 0 or step == cfg.total_steps:
                trainer.check_parameters_finite()
                save(step)

    if cfg.total_steps == 0 and not checkpoints and resume_from is None:
        save(0)

    return {
        "checkpoints": [str(p) for p in checkpoints],
        "final_step": trainer.step_count,
        "metrics_path": str(metrics_path),
        "smoothed_history": history,
        "final_smoothed_l_sr": trainer.smoothed_l_sr,
        "window_utilization": trainer.window_stats()[0],
        "window_perplexity": trainer.window_stats()[1],
    }
