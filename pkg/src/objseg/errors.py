"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all engine errors."""


class DimensionError(EngineError, ValueError):
    """Tensor shapes are inconsistent with the operation's contract."""


class ConfigError(EngineError, ValueError):
    """A configuration value is invalid (e.g. odd query count)."""


class MissingParameterError(EngineError, KeyError):
    """A named weight is not present in the registry."""


class StateError(EngineError, RuntimeError):
    """Operation invoked on an object in the wrong state."""


class InputError(EngineError, ValueError):
    """User-supplied input (image/mask) violates a precondition."""


class FormatError(EngineError, ValueError):
    """A file failed structural validation (magic, CRC, encoding)."""


class CompatibilityError(EngineError, ValueError):
    """Loaded weights do not match the model configuration."""

    def __init__(self, message, missing=(), unexpected=()):
        super().__init__(message)
        self.missing = list(missing)
        self.unexpected = list(unexpected)
