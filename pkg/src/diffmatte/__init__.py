"""Iterative image matting with a decoupled encoder and a diffusion decoder."""

from diffmatte.errors import DomainError, NumericError

__version__ = "0.1.0"

__all__ = ["DomainError", "NumericError", "__version__"]
