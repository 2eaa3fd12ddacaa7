"""Quantitative evaluation: error ratios, METEOR, CodeBLEU, SSIM."""

from .codebleu import CodeBleuParams, CodeBleuResult, EmptySourceError, codebleu
from .lexing import PYTHON_KEYWORDS, lex_source
from .meteor import EmptySequenceError, MeteorParams, meteor
from .ratios import (
    ErrorRatioTable,
    IdMismatchError,
    RatioCell,
    error_ratio,
    format_percent,
    iteration_fix_counts,
)
from .ssim import (
    DecodeFailureError,
    DegenerateImageError,
    GaussianWindow,
    ImageQualityResult,
    SsimParams,
    UniformWindow,
    image_quality_suite,
    ssim,
)

__all__ = [
    "CodeBleuParams",
    "CodeBleuResult",
    "DecodeFailureError",
    "DegenerateImageError",
    "EmptySequenceError",
    "EmptySourceError",
    "ErrorRatioTable",
    "GaussianWindow",
    "IdMismatchError",
    "ImageQualityResult",
    "MeteorParams",
    "PYTHON_KEYWORDS",
    "RatioCell",
    "SsimParams",
    "UniformWindow",
    "codebleu",
    "error_ratio",
    "format_percent",
    "image_quality_suite",
    "iteration_fix_counts",
    "lex_source",
    "meteor",
    "ssim",
]
