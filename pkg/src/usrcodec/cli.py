"""Command-line surface: train, encode, decode, eval, inspect, utilities.

Every failure exits nonzero with one machine-parseable line on stderr:
``<error-code>: <human detail>``.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import bitstream, metrics, variants
from .bitstream import BitstreamHeader, pack_tokens, read_header, unpack_tokens
from .codec import CodecModel, load_checkpoint
from .dsp import (
    AudioClip,
    detect_native_bandwidth,
    filter_training_clip,
    load_audio,
    mel_spectrogram,
    save_wav,
)
from .errors import ConfigError, CorruptStreamError, UsrcError
from .quantize import FlattenOrder, TokenSequence
from .training import AUDIO_SUFFIXES, ClipDataset, train_loop
from .vocoder import (
    KIND_EXTERNAL,
    KIND_GRIFFIN_LIM,
    VocoderSpec,
    synthesize,
    write_mel_container,
)

ADAPTER_ENV = "USRC_ADAPTER"

_WIRE_BY_NAME = {
    "B": bitstream.VARIANT_B,
    "L": bitstream.VARIANT_L,
}


def _variant_wire(name: str) -> int:
    return _WIRE_BY_NAME.get(name, bitstream.VARIANT_CUSTOM)


def _handled(fn):
    """Convert package errors into single-line stderr output + exit 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except UsrcError as exc:
            click.echo(f"{exc.code}: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
@click.version_option(package_name="usrcodec")
def main() -> None:
    """Single-codebook neural audio codec over log-mel grids."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="YAML run config.")
@click.option("--data", "data_dir", required=True, type=click.Path(), help="Corpus directory.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Checkpoint directory.")
@click.option("--resume", "resume_from", type=click.Path(), default=None,
              help="Checkpoint to continue from.")
@click.option("--skip-bandwidth-filter", is_flag=True,
              help="Keep clips whose native bandwidth is below the training rate.")
@_handled
def train(config_path, data_dir, out_dir, resume_from, skip_bandwidth_filter) -> None:
    """Train a codec on a directory of audio files."""
    run = variants.load_run_config(config_path)
    dataset = ClipDataset.from_dir(data_dir, run.spectral.sample_rate)
    if not skip_bandwidth_filter:
        kept = [
            c for c in dataset.clips
            if filter_training_clip(AudioClip(samples=c, sample_rate=dataset.sample_rate))
        ]
        dropped = len(dataset) - len(kept)
        if dropped:
            click.echo(f"bandwidth filter dropped {dropped}/{len(dataset)} clips", err=True)
        if not kept:
            raise ConfigError("bandwidth filter rejected every clip in the corpus")
        dataset = ClipDataset(kept, dataset.sample_rate)
    model = run.build()
    result = train_loop(
        dataset, model, run.train, out_dir, weights=run.weights, resume_from=resume_from
    )
    click.echo(json.dumps({
        "final_step": result["final_step"],
        "checkpoints": [str(p) for p in result["checkpoints"]],
        "metrics": str(result["metrics_path"]),
        "final_smoothed_l_sr": result["final_smoothed_l_sr"],
        "utilization": result["window_utilization"],
        "perplexity": result["window_perplexity"],
    }, indent=2))


def _header_for(model: CodecModel, order: FlattenOrder, pad: int, n_tokens: int) -> BitstreamHeader:
    return BitstreamHeader(
        variant=_variant_wire(model.variant),
        sample_rate=model.spectral.sample_rate,
        hop=model.spectral.hop,
        n_mels=model.spectral.n_mels,
        time_down=model.time_factor,
        freq_down=model.freq_factor,
        codebook_bits=model.quantizer_cfg.bits,
        flatten_order=order.wire,
        pad_frames=pad,
        n_tokens=n_tokens,
    )


@main.command()
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(), help="Model checkpoint.")
@click.option("--in", "in_path", required=True, type=click.Path(), help="Input audio file.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output .usrc stream.")
@click.option("--order", type=click.Choice(["frame_wise", "band_wise"]), default="frame_wise",
              show_default=True, help="Token enumeration order.")
@_handled
def encode(ckpt_path, in_path, out_path, order) -> None:
    """Audio file -> token bitstream."""
    model, _ = load_checkpoint(ckpt_path)
    flat_order = FlattenOrder.parse(order)
    clip = load_audio(in_path, model.spectral.sample_rate)
    mel = mel_spectrogram(clip, model.spectral)
    tokens, pad = model.mel_to_tokens(mel, flat_order)
    header = _header_for(model, flat_order, pad, len(tokens))
    blob = pack_tokens(tokens.tokens, header)
    Path(out_path).write_bytes(blob)
    click.echo(f"wrote {len(blob)} bytes ({len(tokens)} tokens) to {out_path}")


def _check_stream_matches(header: BitstreamHeader, model: CodecModel) -> None:
    expected = (
        model.spectral.sample_rate, model.spectral.hop, model.spectral.n_mels,
        model.time_factor, model.freq_factor, model.quantizer_cfg.bits,
        _variant_wire(model.variant),
    )
    got = (
        header.sample_rate, header.hop, header.n_mels,
        header.time_down, header.freq_down, header.codebook_bits, header.variant,
    )
    if expected != got:
        names = ("sample_rate", "hop", "n_mels", "time_down", "freq_down",
                 "codebook_bits", "variant")
        diffs = [f"{n}: stream={g} checkpoint={e}"
                 for n, g, e in zip(names, got, expected) if g != e]
        raise ConfigError("stream does not match checkpoint (" + "; ".join(diffs) + ")")


def _token_sequence(header: BitstreamHeader, tokens: np.ndarray) -> TokenSequence:
    f = header.n_mels // header.freq_down
    if f == 0 or tokens.size % f:
        raise CorruptStreamError(
            f"n_tokens {tokens.size} is not a whole number of {f}-band frames"
        )
    return TokenSequence(
        tokens=tokens,
        grid_shape=(f, tokens.size // f),
        order=FlattenOrder.from_wire(header.flatten_order),
    )


@main.command()
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(), help="Model checkpoint.")
@click.option("--in", "in_path", required=True, type=click.Path(), help="Input .usrc stream.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output WAV.")
@click.option("--vocoder", "vocoder_kind", type=click.Choice(["griffinlim", "external"]),
              default="griffinlim", show_default=True)
@click.option("--adapter", default=None,
              help=f"External vocoder command template (default: ${ADAPTER_ENV}).")
@click.option("--gl-iters", default=60, show_default=True, help="Griffin-Lim iterations.")
@_handled
def decode(ckpt_path, in_path, out_path, vocoder_kind, adapter, gl_iters) -> None:
    """Token bitstream -> WAV."""
    model, _ = load_checkpoint(ckpt_path)
    header, tokens = unpack_tokens(Path(in_path).read_bytes())
    _check_stream_matches(header, model)
    seq = _token_sequence(header, tokens)
    mel = model.tokens_to_mel(seq, pad_frames=header.pad_frames)
    if vocoder_kind == "external":
        command = adapter or os.environ.get(ADAPTER_ENV)
        if not command:
            raise ConfigError(
                f"external vocoder needs --adapter or ${ADAPTER_ENV} to be set"
            )
        spec = VocoderSpec(kind=KIND_EXTERNAL, expects=model.spectral, command=command)
        clip = synthesize(mel, spec)
    else:
        spec = VocoderSpec(kind=KIND_GRIFFIN_LIM, expects=model.spectral)
        clip = synthesize(mel, spec, n_iters=gl_iters)
    save_wav(out_path, clip)
    click.echo(f"wrote {clip.duration:.3f} s at {clip.sample_rate} Hz to {out_path}")


@main.command(name="eval")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(), help="Model checkpoint.")
@click.option("--ref", "ref_dir", required=True, type=click.Path(), help="Reference corpus dir.")
@click.option("--report", "report_path", required=True, type=click.Path(), help="Output JSON.")
@click.option("--vocoder", "vocoder_kind", type=click.Choice(["griffinlim", "external"]),
              default="griffinlim", show_default=True)
@click.option("--adapter", default=None,
              help=f"External vocoder command template (default: ${ADAPTER_ENV}).")
@click.option("--gl-iters", default=60, show_default=True, help="Griffin-Lim iterations.")
@click.option("--order", type=click.Choice(["frame_wise", "band_wise"]), default="frame_wise",
              show_default=True)
@click.option("--pesq-command", default=None,
              help="External PESQ command template with {ref} and {est} placeholders.")
@click.option("--no-stoi", is_flag=True, help="Skip intelligibility scoring.")
@_handled
def eval_cmd(ckpt_path, ref_dir, report_path, vocoder_kind, adapter, gl_iters, order,
             pesq_command, no_stoi) -> None:
    """Encode, decode, and score every file in a corpus."""
    model, _ = load_checkpoint(ckpt_path)
    flat_order = FlattenOrder.parse(order)
    if vocoder_kind == "external":
        command = adapter or os.environ.get(ADAPTER_ENV)
        if not command:
            raise ConfigError(
                f"external vocoder needs --adapter or ${ADAPTER_ENV} to be set"
            )
        spec = VocoderSpec(kind=KIND_EXTERNAL, expects=model.spectral, command=command)
        iters = 60
    else:
        spec = VocoderSpec(kind=KIND_GRIFFIN_LIM, expects=model.spectral)
        iters = gl_iters

    def process(clip: AudioClip) -> AudioClip:
        mel = mel_spectrogram(clip, model.spectral)
        tokens, pad = model.mel_to_tokens(mel, flat_order)
        recon = model.tokens_to_mel(tokens, pad_frames=pad)
        return synthesize(recon, spec, n_iters=iters)

    report = metrics.evaluate_corpus(
        ref_dir,
        process,
        sample_rate=model.spectral.sample_rate,
        rate=metrics.rate_for_codec(model),
        fingerprint=model.fingerprint,
        include_stoi=not no_stoi,
        pesq_command=pesq_command,
    )
    metrics.write_report(report_path, report)
    click.echo(json.dumps({"report": str(report_path),
                           "files": len(report["per_file"]),
                           "failures": report["failures"],
                           "aggregate": report["aggregate"]}, indent=2))


@main.command(name="scan-bandwidth")
@click.option("--in", "in_dir", required=True, type=click.Path(), help="Directory of audio files.")
@click.option("--threshold-db", default=-60.0, show_default=True,
              help="Band occupancy threshold relative to the clip's peak band.")
@click.option("--margin", default=0.95, show_default=True,
              help="Fraction of the container rate the native rate must reach.")
@_handled
def scan_bandwidth(in_dir, threshold_db, margin) -> None:
    """Report each file's native bandwidth and keep/drop verdict."""
    root = Path(in_dir)
    files = sorted(
        p for p in root.rglob("*") if p.suffix.lower() in AUDIO_SUFFIXES and p.is_file()
    )
    if not files:
        raise ConfigError(f"no audio files under {root}")
    for path in files:
        try:
            clip = load_audio(path)
            native = detect_native_bandwidth(clip, threshold_db=threshold_db)
            keep = filter_training_clip(clip, threshold_db=threshold_db, margin=margin)
        except UsrcError as exc:
            click.echo(f"{path}\terror\t{exc.code}: {exc}")
            continue
        click.echo(f"{path}\t{native:.0f}\t{'keep' if keep else 'drop'}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(), help="Input .usrc stream.")
@_handled
def inspect(in_path) -> None:
    """Print header fields and rates; reads only the header."""
    data = Path(in_path).read_bytes()
    header = read_header(data)
    payload = len(data) - bitstream.HEADER_SIZE
    if payload != header.payload_nbytes:
        click.echo(
            f"warning: payload is {payload} bytes, header implies "
            f"{header.payload_nbytes}; stream is damaged but the header is readable",
            err=True,
        )
    measured = metrics.rate_report(
        header.sample_rate, header.hop, header.time_down, header.freq_down,
        header.n_mels, header.codebook_bits,
    )
    variant_name = {v: k for k, v in _WIRE_BY_NAME.items()}.get(header.variant, "custom")
    order_name = FlattenOrder.from_wire(header.flatten_order).value
    lines = [
        f"variant: {variant_name} ({header.variant})",
        f"sample_rate: {header.sample_rate}",
        f"hop: {header.hop}",
        f"n_mels: {header.n_mels}",
        f"time_down: {header.time_down}",
        f"freq_down: {header.freq_down}",
        f"codebook_bits: {header.codebook_bits}",
        f"flatten_order: {order_name}",
        f"pad_frames: {header.pad_frames}",
        f"n_tokens: {header.n_tokens}",
        f"measured_tps: {measured.tps:.2f}",
        f"measured_kbps: {measured.kbps:.3f}",
        f"duration_s: {header.n_tokens / measured.tps:.3f}",
    ]
    nominal = variants.nominal_rates(header.variant)
    if nominal is not None:
        lines.append(f"nominal_tps: {nominal[0]:g}")
        lines.append(f"nominal_kbps: {nominal[1]:g}")
    click.echo("\n".join(lines))


@main.command(name="export-embeddings")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(), help="Model checkpoint.")
@click.option("--in", "in_path", required=True, type=click.Path(), help="Input audio file.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output container.")
@_handled
def export_embeddings(ckpt_path, in_path, out_path) -> None:
    """Write post-quantizer vectors (frame-wise order) for downstream probes."""
    model, _ = load_checkpoint(ckpt_path)
    clip = load_audio(in_path, model.spectral.sample_rate)
    mel = mel_spectrogram(clip, model.spectral)
    emb = model.embeddings_for(mel, FlattenOrder.FRAME_WISE)
    write_mel_container(
        out_path,
        emb.T,
        model.spectral.sample_rate,
        model.spectral.hop * model.time_factor,
    )
    click.echo(f"wrote {emb.shape[0]} vectors of dim {emb.shape[1]} to {out_path}")


if __name__ == "__main__":
    main()
