"""Semi-analytic mode solver for regularized approximate cloaking of a sphere."""

from .specfun import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
