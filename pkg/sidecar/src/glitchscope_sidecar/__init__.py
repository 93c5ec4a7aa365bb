"""Reference scoring service for the glitchscope /v1 protocol."""

__version__ = "0.1.0"

from .backends import (  # noqa: F401
    ClipBackend,
    Dinov2Backend,
    StubBackend,
    UnsupportedModalityError,
    load_backend,
)
from .server import create_app  # noqa: F401
