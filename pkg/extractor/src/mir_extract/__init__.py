"""Activation record extractor for the mir scorer."""

from .errors import (
    CalibrationError,
    ExtractionError,
    ModelLoadError,
    PairFileError,
    PairUnusable,
)
from .extract import ExtractionConfig, PairLayout, extract_run, load_adapter

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "ExtractionConfig",
    "ExtractionError",
    "ModelLoadError",
    "PairFileError",
    "PairLayout",
    "PairUnusable",
    "extract_run",
    "load_adapter",
    "__version__",
]
