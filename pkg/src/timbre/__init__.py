"""Raw-waveform predominant instrument recognition toolkit."""

__version__ = "0.1.0"
