"""Exception hierarchy.

Every error raised by the library derives from :class:`GeoFactorsError`.
``ConfigError`` maps to exit code 2 in the CLI, ``DataError`` to exit code 3
and ``NonConvergenceError`` (only raised under ``--strict``) to exit code 4.
"""
from __future__ import annotations


class GeoFactorsError(Exception):
    exit_code = 3


class ConfigError(GeoFactorsError, ValueError):
    exit_code = 2


class DataError(GeoFactorsError, ValueError):
    exit_code = 3


class NonConvergenceError(GeoFactorsError, RuntimeError):
    exit_code = 4


# ingest
class MissingKeyColumn(DataError):
    pass


class DuplicateUnit(DataError):
    pass


class EmptyTable(DataError):
    pass


class FeatureNameCollision(DataError):
    pass


class EmptyIntersection(DataError):
    pass


class MissingColumn(DataError):
    pass


class NonPositiveLandArea(DataError):
    pass


class AllMissingColumn(DataError):
    pass


class NonContiguousDates(DataError):
    pass


class NegativeCount(DataError):
    pass


# target
class SeriesTooShort(DataError):
    pass


class MissingSeries(DataError):
    pass


class InconsistentWindow(DataError):
    pass


# select
class TooFewRows(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class GridEmpty(DataError):
    pass


class TooFewUnitsForFolds(DataError):
    pass


class KTooLarge(DataError):
    pass


class UnknownFeatureName(DataError):
    pass


# cluster
class KExceedsUnits(DataError):
    pass


class RangeTooShort(DataError):
    pass


class UnitMismatch(DataError):
    pass


# embed
class DuplicateAssignment(DataError):
    pass


class UnknownCategory(DataError):
    pass


class PerplexityTooLarge(DataError):
    pass


class SingleUnit(DataError):
    pass


# cli / reporting
class MalformedGeoJSON(DataError):
    pass


class MissingUnitProperty(DataError):
    pass


class InvalidDimensions(ConfigError):
    pass
