"""Two-pass endpointing testbed.

Streaming first-pass detectors (an acoustic frame classifier and a simulated
end-to-end decoder) propose candidate endpoints; a segment-level second-pass
arbitrator accepts or rejects each candidate; a pause-duration guardrail
bounds worst-case latency and is never arbitrated.  The package also ships a
synthetic corpus generator with exact end-of-speech ground truth, the metric
suite (WER, early-endpoint rate, latency percentiles) and operating-point
sweep tooling for studying the early-cutoff vs latency trade-off.
"""

__version__ = "0.1.0"


class EndgateError(Exception):
    """Base class for all package errors."""


class ConfigError(EndgateError):
    """Invalid configuration value or unknown configuration key."""


class ParseError(EndgateError):
    """Malformed or truncated input file."""


class ShapeError(EndgateError):
    """Array or layer dimension mismatch."""


class VocabError(EndgateError):
    """Token id outside the vocabulary."""


class ProtocolError(EndgateError):
    """Streaming contract violated (frame skipped or repeated)."""


class DependencyError(EndgateError):
    """A required trained model or input artifact is missing."""


class MetricError(EndgateError):
    """Metric undefined for the given inputs."""


class AudioFormatError(EndgateError):
    """Unsupported audio encoding or sample rate."""
