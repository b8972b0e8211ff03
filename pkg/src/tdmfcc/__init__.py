"""Time-domain cepstral features and echo-state classification toolkit."""

__version__ = "0.1.0"

from .errors import TdmfccError  # noqa: F401
