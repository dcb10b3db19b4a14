class ExtractionError(Exception):
    """Base class for everything this package raises on purpose."""


class PairFileError(ExtractionError):
    """The pairs JSONL file is missing or malformed."""


class CalibrationError(ExtractionError):
    """The calibration parameters file is unusable for this model."""


class PairUnusable(ExtractionError):
    """One image-text pair cannot be encoded; the pair is skipped."""


class ModelLoadError(ExtractionError):
    pass
