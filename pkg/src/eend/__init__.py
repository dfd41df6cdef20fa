"""End-to-end neural speaker diarization."""

__version__ = "0.1.0"
