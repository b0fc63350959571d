"""Bit-exact token container (.usrc).

Layout: a 27-byte little-endian header followed by the token payload packed
MSB-first at a fixed codebook_bits per token (the MSB of token 0 is the top
bit of the first payload byte; the final partial byte is zero-padded in its
low bits). Fixed-width packing keeps the stream bit-exact and seekable; the
reported bitrates assume raw log2(K) bits per token, so there is no entropy
coder.
"""

from __future__ import annotations

import dataclasses
import struct

import numpy as np

from .errors import CorruptStreamError, EncodeError

MAGIC = b"USRC"
VERSION = 1

VARIANT_B = 0
VARIANT_L = 1
VARIANT_CUSTOM = 255
_KNOWN_VARIANTS = (VARIANT_B, VARIANT_L, VARIANT_CUSTOM)

FLATTEN_FRAME_WISE = 0
FLATTEN_BAND_WISE = 1

_HEADER = struct.Struct("<4sBBIHBBBBBHQ")
HEADER_SIZE = _HEADER.size  # 27 bytes


def payload_nbytes(n_tokens: int, codebook_bits: int) -> int:
    return (n_tokens * codebook_bits + 7) // 8


@dataclasses.dataclass
class BitstreamHeader:
    """All fields needed to decode a token stream without the checkpoint."""

    variant: int
    sample_rate: int
    hop: int
    n_mels: int
    time_down: int
    freq_down: int
    codebook_bits: int
    flatten_order: int
    pad_frames: int
    n_tokens: int
    version: int = VERSION

    def validate(self, error=EncodeError) -> None:
        checks = [
            (self.version == VERSION, f"version must be {VERSION}, got {self.version}"),
            (self.variant in _KNOWN_VARIANTS, f"unknown variant byte {self.variant}"),
            (0 < self.sample_rate <= 0xFFFFFFFF, f"sample_rate {self.sample_rate} out of u32 range"),
            (0 < self.hop <= 0xFFFF, f"hop {self.hop} out of u16 range"),
            (0 < self.n_mels <= 0xFF, f"n_mels {self.n_mels} out of u8 range"),
            (0 < self.time_down <= 0xFF, f"time_down {self.time_down} out of u8 range"),
            (0 < self.freq_down <= 0xFF, f"freq_down {self.freq_down} out of u8 range"),
            (1 <= self.codebook_bits <= 24, f"codebook_bits must be in [1, 24], got {self.codebook_bits}"),
            (self.flatten_order in (FLATTEN_FRAME_WISE, FLATTEN_BAND_WISE),
             f"flatten_order must be 0 or 1, got {self.flatten_order}"),
            (0 <= self.pad_frames <= 0xFFFF, f"pad_frames {self.pad_frames} out of u16 range"),
            (0 <= self.n_tokens <= 0xFFFFFFFFFFFFFFFF, f"n_tokens {self.n_tokens} out of u64 range"),
        ]
        for ok, msg in checks:
            if not ok:
                raise error(msg)

    def pack(self) -> bytes:
        self.validate()
        return _HEADER.pack(
            MAGIC,
            self.version,
            self.variant,
            self.sample_rate,
            self.hop,
            self.n_mels,
            self.time_down,
            self.freq_down,
            self.codebook_bits,
            self.flatten_order,
            self.pad_frames,
            self.n_tokens,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "BitstreamHeader":
        if len(data) < HEADER_SIZE:
            raise CorruptStreamError(
                f"stream too short for header: {len(data)} < {HEADER_SIZE} bytes"
            )
        magic, version, variant, sr, hop, n_mels, td, fd, bits, order, pad, n_tok = (
            _HEADER.unpack(data[:HEADER_SIZE])
        )
        if magic != MAGIC:
            raise CorruptStreamError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise CorruptStreamError(f"unsupported version {version}, expected {VERSION}")
        header = cls(
            variant=variant,
            sample_rate=sr,
            hop=hop,
            n_mels=n_mels,
            time_down=td,
            freq_down=fd,
            codebook_bits=bits,
            flatten_order=order,
            pad_frames=pad,
            n_tokens=n_tok,
        )
        header.validate(error=CorruptStreamError)
        return header

    @property
    def payload_nbytes(self) -> int:
        return payload_nbytes(self.n_tokens, self.codebook_bits)


def pack_tokens(tokens: np.ndarray, header: BitstreamHeader) -> bytes:
    """Serialize tokens after the header, MSB-first at codebook_bits each."""
    toks = np.asarray(tokens)
    if toks.ndim != 1:
        raise EncodeError(f"tokens must be 1-D, got shape {toks.shape}")
    toks = toks.astype(np.int64)
    header.validate()
    if toks.size != header.n_tokens:
        raise EncodeError(f"header says {header.n_tokens} tokens, got {toks.size}")
    if toks.size:
        lo, hi = int(toks.min()), int(toks.max())
        if lo < 0:
            raise EncodeError(f"negative token {lo}")
        if hi >= 1 << header.codebook_bits:
            raise EncodeError(
                f"token {hi} does not fit in codebook_bits={header.codebook_bits}"
            )
    shifts = np.arange(header.codebook_bits - 1, -1, -1, dtype=np.int64)
    bits = ((toks[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    payload = np.packbits(bits.reshape(-1))  # pads the final byte's low bits with zeros
    return header.pack() + payload.tobytes()


def read_header(data: bytes) -> BitstreamHeader:
    """Parse and validate only the header; payload is not touched."""
    return BitstreamHeader.unpack(data)


def unpack_tokens(data: bytes) -> tuple[BitstreamHeader, np.ndarray]:
    """Inverse of pack_tokens; every malformed mutation class is rejected."""
    header = BitstreamHeader.unpack(data)
    expected = HEADER_SIZE + header.payload_nbytes
    if len(data) != expected:
        raise CorruptStreamError(
            f"payload length mismatch: stream has {len(data) - HEADER_SIZE} payload "
            f"bytes, header implies {header.payload_nbytes}"
        )
    payload = np.frombuffer(data[HEADER_SIZE:], dtype=np.uint8)
    bits = np.unpackbits(payload)
    used = header.n_tokens * header.codebook_bits
    if np.any(bits[used:]):
        raise CorruptStreamError("nonzero pad bits in final payload byte")
    shifts = np.arange(header.codebook_bits - 1, -1, -1, dtype=np.int64)
    tokens = (bits[:used].reshape(header.n_tokens, header.codebook_bits).astype(np.int64)
              << shifts[None, :]).sum(axis=1)
    return header, tokens
