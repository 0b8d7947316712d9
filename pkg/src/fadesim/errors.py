"""Exception types raised across the toolkit.

All argument problems subclass ``ValueError`` so callers that only care
about bad input can catch that.
"""


class InputTooShortError(ValueError):
    """Signal is shorter than one analysis window."""


class ManifestError(ValueError):
    """Corpus manifest could not be loaded or failed validation."""


class TrainingDataError(ValueError):
    """No usable training material for at least one model."""


class DecodeError(RuntimeError):
    """No admissible path through the decoding graph."""


class NoSrtError(RuntimeError):
    """No recognition-matrix row reaches the criterion rate."""


class UndefinedCorrelationError(ValueError):
    """Correlation requested on a series without variance."""


class ConfigError(ValueError):
    """Experiment configuration is invalid or references missing files."""
