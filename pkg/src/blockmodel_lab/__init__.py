"""Robust community recovery in balanced k-SBMs under adversarial node corruption."""

__version__ = "0.1.0"

from .core import (
    Bisection,
    DerivedQuantities,
    Labeling,
    SbmParams,
    align,
    bisection_error,
    derive,
    error_k,
)

__all__ = [
    "Bisection",
    "DerivedQuantities",
    "Labeling",
    "SbmParams",
    "align",
    "bisection_error",
    "derive",
    "error_k",
]
