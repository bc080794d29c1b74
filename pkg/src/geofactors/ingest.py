"""Loading, validating and merging per-geo-unit tables and case series."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from .diagnostics import warn
from .errors import (
    AllMissingColumn,
    DataError,
    DuplicateUnit,
    EmptyIntersection,
    EmptyTable,
    FeatureNameCollision,
    MissingColumn,
    MissingKeyColumn,
    NegativeCount,
    NonContiguousDates,
    NonPositiveLandArea,
)

# Accepted key-column names per schema, tried in order.
SCHEMAS: dict[str, tuple[str, ...]] = {
    "census": ("zipcode", "zip_code", "zip", "zcta", "geo_id"),
    "subway": ("zipcode", "zip_code", "zip"),
    "citibike": ("zipcode", "zip_code", "zip"),
    "generic": ("unit", "zipcode", "zip_code", "zip", "geo_id"),
}
_ZIP_RE = re.compile(r"^\d{5}$")
IMPUTE_POLICIES = ("column_median", "drop_unit")
CASE_MODES = ("daily_new", "cumulative")


@dataclass(frozen=True)
class FeatureTable:
    """Geo-units by named numeric features.

    ``values`` may hold NaN for missing cells until :func:`impute_missing`
    has been applied. The array is stored read-only.
    """

    units: tuple[str, ...]
    feature_names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        units = tuple(str(u) for u in self.units)
        names = tuple(str(f) for f in self.feature_names)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 2:
            values = values.reshape(len(units), len(names))
        if values.shape != (len(units), len(names)):
            raise DataError(
                f"values shape {values.shape} does not match "
                f"({len(units)}, {len(names)})")
        if any(not u for u in units):
            raise DataError("empty unit code")
        _check_unique(units, DuplicateUnit, "unit")
        _check_unique(names, FeatureNameCollision, "feature name")
        values.setflags(write=False)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.feature_names.index(name)
        except ValueError:
            raise MissingColumn(f"column {name!r} not in table") from None
        return self.values[:, j]

    def subset(self, features=None, units=None) -> "FeatureTable":
        """Return a new table restricted to ``features`` and/or ``units`` (in the given order)."""
        cols = (list(range(len(self.feature_names))) if features is None
                else [self._feature_index(f) for f in features])
        if units is None:
            rows = list(range(len(self.units)))
        else:
            index = {u: i for i, u in enumerate(self.units)}
            try:
                rows = [index[str(u)] for u in units]
            except KeyError as exc:
                raise DataError(f"unit {exc.args[0]!r} not in table") from None
        return FeatureTable(
            units=[self.units[i] for i in rows],
            feature_names=[self.feature_names[j] for j in cols],
            values=self.values[np.ix_(rows, cols)],
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=pd.Index(self.units, name="unit"),
                            columns=list(self.feature_names))

    def _feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise MissingColumn(f"column {name!r} not in table") from None


@dataclass(frozen=True)
class CaseSeries:
    """Daily new positive case counts for one geo-unit."""

    unit: str
    dates: tuple[date, ...]
    new_cases: np.ndarray = field(repr=False)

    def __post_init__(self):
        dates = tuple(self.dates)
        cases = np.array(self.new_cases, dtype=float, copy=True)
        if len(dates) != len(cases):
            raise DataError(f"unit {self.unit}: {len(dates)} dates vs {len(cases)} counts")
        if len(dates) < 2:
            raise DataError(f"unit {self.unit}: a case series needs at least 2 days")
        if np.any(cases < 0) or not np.all(np.isfinite(cases)):
            raise NegativeCount(f"unit {self.unit}: new cases must be finite and non-negative")
        _check_contiguous(self.unit, dates)
        cases.setflags(write=False)
        object.__setattr__(self, "unit", str(self.unit))
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "new_cases", cases)

    @property
    def n_days(self) -> int:
        return len(self.dates)


def _check_unique(items, exc, what):
    seen = set()
    for item in items:
        if item in seen:
            raise exc(f"duplicate {what} {item!r}")
        seen.add(item)


def _check_contiguous(unit, dates):
    one_day = timedelta(days=1)
    for prev, cur in zip(dates, dates[1:]):
        if cur - prev != one_day:
            raise NonContiguousDates(f"unit {unit}: {prev} is followed by {cur}")


def _find_key(columns, schema, key):
    if key is not None:
        if key not in columns:
            raise MissingKeyColumn(f"key column {key!r} not in header")
        return key
    lowered = {c.strip().lower(): c for c in columns}
    for candidate in SCHEMAS[schema]:
        if candidate in lowered:
            return lowered[candidate]
    if schema == "generic" and len(columns) > 0:
        return columns[0]
    raise MissingKeyColumn(
        f"no key column for schema {schema!r}; expected one of {SCHEMAS[schema]}")


def load_feature_csv(path, schema: str = "generic", key: str | None = None,
                     sink: list | None = None) -> FeatureTable:
    """Read a feature CSV into a :class:`FeatureTable`.

    Columns that do not parse as numbers are dropped with a
    ``NON_NUMERIC_COLUMN`` warning. Rows whose key is blank (or, for the ZIP
    based schemas, not a 5-digit code) are rejected with ``REJECTED_KEY``.
    Empty numeric cells become NaN.
    """
    if schema not in SCHEMAS:
        raise DataError(f"unknown schema {schema!r}")
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise EmptyTable(f"{path}: no header row") from None
    key_col = _find_key(list(frame.columns), schema, key)

    keys = frame[key_col].str.strip()
    valid = keys != ""
    if schema != "generic":
        valid &= keys.str.match(_ZIP_RE)
    for row in np.flatnonzero(~valid.to_numpy()):
        warn("REJECTED_KEY", f"{path.name} row {row + 2} key {keys.iloc[row]!r}",
             sink=sink)
    frame = frame.loc[valid.to_numpy()]
    keys = keys[valid]
    if frame.empty:
        raise EmptyTable(f"{path}: no data rows")

    names, columns = [], []
    for col in frame.columns:
        if col == key_col:
            continue
        raw = frame[col].str.strip()
        blank = raw == ""
        parsed = pd.to_numeric(raw.where(~blank), errors="coerce")
        if parsed[~blank].isna().any() or blank.all():
            warn("NON_NUMERIC_COLUMN", f"{path.name} column {col!r} dropped", sink=sink)
            continue
        names.append(col.strip())
        columns.append(parsed.to_numpy(dtype=float))
    if not names:
        raise EmptyTable(f"{path}: no numeric feature columns")
    values = np.column_stack(columns)
    if not np.all(np.isfinite(values[~np.isnan(values)])):
        raise DataError(f"{path}: infinite values")
    return FeatureTable(units=list(keys), feature_names=names, values=values)


def merge_tables(tables) -> FeatureTable:
    """Inner-join tables on unit code; unit order follows the first table."""
    tables = list(tables)
    if not tables:
        raise DataError("merge_tables needs at least one table")
    names: list[str] = []
    for t in tables:
        for name in t.feature_names:
            if name in names:
                raise FeatureNameCollision(f"feature {name!r} appears in more than one table")
            names.append(name)
    common = set(tables[0].units)
    for t in tables[1:]:
        common &= set(t.units)
    units = [u for u in tables[0].units if u in common]
    if not units:
        raise EmptyIntersection("tables share no geo-units")
    blocks = [t.subset(units=units).values for t in tables]
    return FeatureTable(units=units, feature_names=names, values=np.hstack(blocks))


def add_population_density(table: FeatureTable, population_col: str,
                           land_area_col: str,
                           name: str = "population_density") -> FeatureTable:
    population = table.column(population_col)
    area = table.column(land_area_col)
    bad = ~(area > 0)
    if bad.any():
        units = [table.units[i] for i in np.flatnonzero(bad)]
        raise NonPositiveLandArea(f"land area must be > 0; offending units {units[:5]}")
    return FeatureTable(
        units=table.units,
        feature_names=table.feature_names + (name,),
        values=np.column_stack([table.values, population / area]),
    )


def impute_missing(table: FeatureTable, policy: str = "column_median",
                   sink: list | None = None) -> FeatureTable:
    if policy not in IMPUTE_POLICIES:
        raise DataError(f"unknown imputation policy {policy!r}")
    values = np.array(table.values)
    missing = np.isnan(values)
    if not missing.any():
        return table
    if policy == "drop_unit":
        keep = ~missing.any(axis=1)
        for i in np.flatnonzero(~keep):
            warn("UNIT_DROPPED", "row has missing values", unit=table.units[i], sink=sink)
        if not keep.any():
            raise EmptyTable("every unit has a missing value")
        return FeatureTable(units=[u for u, k in zip(table.units, keep) if k],
                            feature_names=table.feature_names, values=values[keep])
    for j in np.flatnonzero(missing.any(axis=0)):
        col = values[:, j]
        observed = col[~missing[:, j]]
        if observed.size == 0:
            raise AllMissingColumn(f"column {table.feature_names[j]!r} has no observed values")
        col[missing[:, j]] = np.median(observed)
    return FeatureTable(units=table.units, feature_names=table.feature_names, values=values)


def _parse_dates(labels) -> list[date]:
    return [date.fromisoformat(str(s).strip()) for s in labels]


def _series_from_counts(unit, dates, counts, mode, sink):
    counts = np.asarray(counts, dtype=float)
    if np.isnan(counts).any():
        raise DataError(f"unit {unit}: missing case counts")
    if np.any(counts < 0):
        raise NegativeCount(f"unit {unit}: negative count in input")
    if mode == "cumulative":
        new = np.empty_like(counts)
        new[0] = counts[0]
        new[1:] = np.diff(counts)
        negative = np.flatnonzero(new < 0)
        for i in negative:
            warn("NEGATIVE_DIFF_CLAMPED",
                 f"{dates[i]} cumulative fell by {-new[i]:g}; clamped to 0",
                 unit=unit, sink=sink)
        new[negative] = 0.0
    else:
        new = counts
    return CaseSeries(unit=unit, dates=tuple(dates), new_cases=new)


def load_case_series(path, mode: str = "cumulative",
                     sink: list | None = None) -> dict[str, CaseSeries]:
    """Read case counts in long (unit, date, count) or wide (unit, one column per date) format.

    With ``mode="cumulative"`` the counts are first-differenced, the first day
    keeps its raw count and negative differences are clamped to zero.
    """
    if mode not in CASE_MODES:
        raise DataError(f"unknown case mode {mode!r}")
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if frame.empty:
        raise EmptyTable(f"{path}: no case rows")
    lowered = {c.strip().lower(): c for c in frame.columns}
    out: dict[str, CaseSeries] = {}

    if "date" in lowered:
        unit_col = next((lowered[c] for c in ("unit", *SCHEMAS["census"]) if c in lowered), None)
        count_col = next((lowered[c] for c in ("count", "cases", "value") if c in lowered), None)
        if unit_col is None or count_col is None:
            raise MissingKeyColumn(f"{path}: long format needs unit, date and count columns")
        frame = frame.assign(_date=_parse_dates(frame[lowered["date"]]),
                             _count=pd.to_numeric(frame[count_col].str.strip(), errors="coerce"),
                             _unit=frame[unit_col].str.strip())
        for unit, group in frame.groupby("_unit", sort=False):
            if not unit:
                raise MissingKeyColumn(f"{path}: blank unit code")
            group = group.sort_values("_date", kind="stable")
            dates = list(group["_date"])
            if len(set(dates)) != len(dates):
                raise DataError(f"unit {unit}: duplicate dates")
            out[unit] = _series_from_counts(unit, dates, group["_count"].to_numpy(), mode, sink)
        return out

    unit_col = frame.columns[0]
    try:
        dates = _parse_dates(frame.columns[1:])
    except ValueError:
        raise DataError(f"{path}: wide format needs ISO date headers") from None
    order = np.argsort(np.array(dates, dtype="datetime64[D]"), kind="stable")
    dates = [dates[i] for i in order]
    for _, row in frame.iterrows():
        unit = row[unit_col].strip()
        if not unit:
            raise MissingKeyColumn(f"{path}: blank unit code")
        if unit in out:
            raise DuplicateUnit(f"{path}: duplicate unit {unit!r}")
        counts = pd.to_numeric(row.iloc[1:].str.strip(), errors="coerce").to_numpy()[order]
        out[unit] = _series_from_counts(unit, dates, counts, mode, sink)
    return out
