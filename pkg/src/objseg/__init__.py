"""Streaming video object segmentation engine.

Propagates first-frame object masks through a video using two complementary
memories: a pixel-level key/value bank read by top-k anisotropic-L2 attention,
and a compact object-level summary read through a small transformer that
restructures the pixel readout before decoding.
"""

from .errors import (CompatibilityError, ConfigError, DimensionError, EngineError,
                     FormatError, InputError, MissingParameterError, StateError)
from .model import ENGINE_VERSION, EngineConfig, build_registry
from .session import SessionState, add_reference, create_session, step, working_size

__version__ = ENGINE_VERSION

__all__ = [
    "ENGINE_VERSION",
    "EngineConfig",
    "SessionState",
    "add_reference",
    "build_registry",
    "create_session",
    "step",
    "working_size",
    "EngineError",
    "ConfigError",
    "DimensionError",
    "InputError",
    "StateError",
    "FormatError",
    "CompatibilityError",
    "MissingParameterError",
]
