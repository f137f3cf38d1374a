"""Errors raised by earsep.

Every error carries a `category` used by the command-line interface to report
failures as ``Error (<category>): <message>``.
"""

__all__ = [
    "EarsepError",
    "SignalError",
    "SceneError",
    "DatasetError",
    "ConfigError",
    "ModelError",
    "MetricError",
    "TrainingError",
]


class EarsepError(ValueError):
    """Base class for all earsep errors."""

    category = "error"


class SignalError(EarsepError):
    """Invalid waveform, spectrogram or STFT configuration."""

    category = "signal"


class SceneError(EarsepError):
    """Invalid scene geometry, source signal or rendering request."""

    category = "scene"


class DatasetError(EarsepError):
    """Corpus, manifest or dataset-layout problem."""

    category = "dataset"


class ConfigError(EarsepError):
    """Configuration file or option violates its schema.

    Parameters
    ----------
    msg : str
       Description of the problem.
    section, key : str
       Field path.  If given, the message is prefixed with ``[section] key:``.
    """

    category = "config"

    def __init__(self, msg, section=None, key=None):
        self.section = section
        self.key = key
        if section is not None:
            path = f"[{section}]" + (f" {key}" if key else "")
            msg = f"{path}: {msg}"
        super().__init__(msg)


class ModelError(EarsepError):
    """Invalid model configuration, input shape or checkpoint."""

    category = "model"


class MetricError(EarsepError):
    """Metric undefined for the given inputs."""

    category = "metric"


class TrainingError(EarsepError):
    """Training cannot proceed (empty data, non-finite loss, ...)."""

    category = "training"
