"""Recurrent video inpainting with short-term boundary alignment and a
dynamic long-term feature bank."""

__version__ = "0.1.0"

from .kernels import backend_name

__all__ = ["backend_name", "__version__"]
