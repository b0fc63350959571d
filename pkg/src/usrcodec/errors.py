"""Exception hierarchy shared by every module.

Each class carries a short machine-readable ``code`` so the CLI can emit a
single parseable ``<code>: <detail>`` line on stderr and exit nonzero.
"""

from __future__ import annotations


class UsrcError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"


class AudioIOError(UsrcError):
    """Unreadable, unsupported, or unwritable audio file."""

    code = "audio-io"


class EmptyInputError(UsrcError):
    """An input that must contain samples or items is empty."""

    code = "empty-input"


class InsufficientInputError(UsrcError):
    """Input is non-empty but too short for the requested analysis."""

    code = "insufficient-input"


class ConfigError(UsrcError):
    """Invalid or inconsistent configuration values."""

    code = "config"


class ShapeError(UsrcError):
    """Array arguments with mismatched or unexpected shapes."""

    code = "shape"


class NumericError(UsrcError):
    """Non-finite values where finite ones are required."""

    code = "numeric"


class CorruptStreamError(UsrcError):
    """A token bitstream that fails structural validation."""

    code = "corrupt-stream"


class EncodeError(UsrcError):
    """Values that cannot be represented in the requested bitstream."""

    code = "encode"


class VocoderError(UsrcError):
    """External waveform synthesis failed or returned bad output."""

    code = "vocoder"


class AdapterError(UsrcError):
    """An external metric adapter failed or printed no usable score."""

    code = "adapter"


class AlignmentError(UsrcError):
    """Reference/estimate pairs whose lengths cannot be reconciled."""

    code = "alignment"


class EmptyCorpusError(UsrcError):
    """An evaluation corpus directory with no usable files."""

    code = "empty-corpus"
