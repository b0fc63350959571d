"""Single-codebook neural audio codec over log-mel spectrograms.

Pipeline: waveform -> log-mel grid -> 2D conv encoder -> single-codebook
vector quantizer -> token bitstream -> mirrored decoder -> log-mel grid ->
vocoder (built-in Griffin-Lim or an external adapter) -> waveform.
"""

from .codec import CodecModel, load_checkpoint, save_checkpoint
from .dsp import (
    AudioClip,
    MelSpectrogram,
    SpectralConfig,
    detect_native_bandwidth,
    filter_training_clip,
    load_audio,
    mel_spectrogram,
    save_wav,
)
from .errors import UsrcError
from .losses import DiscriminatorConfig, LossWeights, SpectralDiscriminator
from .metrics import evaluate_corpus, mel_distance, rate_report, stft_distance, stoi
from .model import DecoderConfig, EncoderConfig
from .quantize import FlattenOrder, QuantizerConfig, SimVQ, TokenSequence
from .training import ClipDataset, TrainConfig, Trainer, build_model, train_loop
from .variants import VARIANT_B, VARIANT_L, CodecVariant, load_run_config, overfit_preset
from .vocoder import VocoderSpec, griffin_lim, mel_to_linear, synthesize

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "ClipDataset",
    "CodecModel",
    "CodecVariant",
    "DecoderConfig",
    "DiscriminatorConfig",
    "EncoderConfig",
    "FlattenOrder",
    "LossWeights",
    "MelSpectrogram",
    "QuantizerConfig",
    "SimVQ",
    "SpectralConfig",
    "SpectralDiscriminator",
    "TokenSequence",
    "TrainConfig",
    "Trainer",
    "UsrcError",
    "VARIANT_B",
    "VARIANT_L",
    "VocoderSpec",
    "build_model",
    "detect_native_bandwidth",
    "evaluate_corpus",
    "filter_training_clip",
    "griffin_lim",
    "load_audio",
    "load_checkpoint",
    "load_run_config",
    "mel_distance",
    "mel_spectrogram",
    "mel_to_linear",
    "overfit_preset",
    "rate_report",
    "save_checkpoint",
    "save_wav",
    "stft_distance",
    "stoi",
    "synthesize",
    "train_loop",
    "__version__",
]
