"""Exception hierarchy shared by every subpackage."""

from __future__ import annotations


class TimbreError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(TimbreError):
    """Invalid configuration or argument value."""


class WavFormatError(TimbreError):
    """Malformed RIFF/WAVE container."""


class UnsupportedWavError(TimbreError):
    """Well-formed WAV using an encoding we do not decode."""


class SilentSignalError(TimbreError):
    """Loudness normalization requested for a signal with no gated blocks."""


class IngestError(TimbreError):
    """Fatal problem while building a manifest from a dataset tree."""


class CheckpointError(TimbreError):
    """Checkpoint cannot be read or does not match the requested model."""


class TrainingFault(TimbreError):
    """Non-finite loss or gradient during optimization."""
