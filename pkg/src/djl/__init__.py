"""Local volatility of exponential Lévy models: Fourier pricing, Dupire, regularization and its Monte Carlo check."""

__version__ = "0.1.0"

from .errors import DjlError  # noqa: E402
from .models import (  # noqa: E402
    BlackScholesParams,
    JumpToRuinParams,
    KouParams,
    MertonParams,
    ModelSpec,
    NigParams,
    VgParams,
    load_model,
)

__all__ = [
    "__version__",
    "DjlError",
    "BlackScholesParams",
    "JumpToRuinParams",
    "KouParams",
    "MertonParams",
    "ModelSpec",
    "NigParams",
    "VgParams",
    "load_model",
]
