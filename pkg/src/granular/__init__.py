"""Outlier ranking with dimension-level feedback for unlabeled tabular data."""

__version__ = "0.1.0"

from granular.errors import ConfigError, DataError, GranularError, NumericError

__all__ = ["ConfigError", "DataError", "GranularError", "NumericError", "__version__"]
