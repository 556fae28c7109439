"""Exception hierarchy shared by the library and the CLI."""


class AudioSpaError(Exception):
    """Base class for all package errors."""


class DomainError(AudioSpaError, ValueError):
    """An argument is outside the domain where the operation is defined."""


class ConfigError(AudioSpaError, ValueError):
    """Inconsistent model / sampler / training configuration."""


class TemplateError(ConfigError):
    """A prompt template is malformed."""


class EncoderUnavailableError(AudioSpaError, RuntimeError):
    """The requested text encoder cannot be loaded."""


class CheckpointError(AudioSpaError, RuntimeError):
    """A checkpoint is missing, corrupted or incompatible with the runtime."""


class NumericalError(AudioSpaError, FloatingPointError):
    """NaN or Inf appeared during a forward pass or training."""
