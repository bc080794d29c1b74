"""Geo-unit feature selection, IR-ranked clustering and 1-D factor embeddings."""
__version__ = "0.1.0"

from .errors import ConfigError, DataError, GeoFactorsError, NonConvergenceError  # noqa: E402

__all__ = ["ConfigError", "DataError", "GeoFactorsError", "NonConvergenceError", "__version__"]
