"""twinseg-extract: builds twin JSON scene records from real images/videos."""

__version__ = "0.1.0"

from .extract import ExtractionError, ExtractionJob, extract

__all__ = ["ExtractionError", "ExtractionJob", "extract"]
