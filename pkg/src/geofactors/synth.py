"""Synthetic census-like inputs with planted blobs and planted IR-relevant features.

The generated directory mirrors a real run's inputs:

* ``census.csv``      zipcode + census-style columns (incl. ``total_population``)
* ``subway.csv``      zipcode, station_count, average_riders
* ``citibike.csv``    zipcode, inbound_trips, outbound_trips
* ``land_area.csv``   zipcode, land_area
* ``cases.csv``       wide cumulative case counts, one ISO-date column per day
* ``boundaries.geojson``  square cells on a grid, ``zipcode`` property
* ``ground_truth.json``   blob labels, relevant feature names, per-blob IR means
* ``config.json``     a pipeline config pointing at the files above

After merging and adding ``population_density`` the feature table is exactly
``features`` columns wide.
"""
from __future__ import annotations

import csv
import json
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .embed import default_category_map
from .errors import InvalidDimensions

SUBWAY_COLS = ("station_count", "average_riders")
CITIBIKE_COLS = ("inbound_trips", "outbound_trips")
FIXED_WIDTH = len(SUBWAY_COLS) + len(CITIBIKE_COLS) + 2  # + land_area + population_density

# one feature per category first, so small planted sets still touch every factor
PLANT_PRIORITY = (
    "population_density", "commuters_by_bus", "black_pop", "high_school_diploma",
    "median_age", "single_parent_with_children", "median_income", "unemployed_pop",
    "households", "station_count", "hispanic_pop", "bachelors_degree",
)

START_DATE = date(2020, 4, 4)
BLOB_SEPARATION = 8.0


def make_blobs(n: int, n_blobs: int, dim: int, separation: float = BLOB_SEPARATION,
               sigma: float = 1.0, rng=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Isotropic Gaussian blobs whose centres are pairwise ``separation * sigma`` apart.

    Needs ``dim >= n_blobs`` for exact equidistance; below that the centres are
    Gaussian draws with the same scale. Labels cycle 0..n_blobs-1 and are then
    shuffled. Returns ``(X, labels, centres)``.
    """
    rng = np.random.default_rng(rng)
    if dim >= n_blobs:
        q, _ = np.linalg.qr(rng.normal(size=(dim, n_blobs)))
        centres = q.T * separation * sigma / np.sqrt(2)
    else:
        centres = rng.normal(size=(n_blobs, dim)) * separation * sigma / np.sqrt(2)
    labels = rng.permutation(np.arange(n) % n_blobs)
    X = centres[labels] + rng.normal(scale=sigma, size=(n, dim))
    return X, labels, centres


def _census_names(width: int) -> list[str]:
    skip = set(SUBWAY_COLS) | set(CITIBIKE_COLS) | {"population_density"}
    named = [f for feats in default_category_map().values() for f in feats if f not in skip]
    names = ["total_population"] + named
    names = names[:width]
    names += [f"census_var_{i:03d}" for i in range(1, width - len(names) + 1)]
    return names


def _fmt(v: float) -> str:
    return format(float(v), ".10g")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def default_config(seed: int = 0) -> dict:
    return {
        "features": [
            {"path": "census.csv", "schema": "census"},
            {"path": "subway.csv", "schema": "subway"},
            {"path": "citibike.csv", "schema": "citibike"},
            {"path": "land_area.csv", "schema": "generic", "key": "zipcode"},
        ],
        "cases": {"path": "cases.csv", "mode": "cumulative"},
        "density": {"population_col": "total_population", "land_area_col": "land_area"},
        "boundaries": {"path": "boundaries.geojson", "unit_property": "zipcode"},
        "category_map": None,
        "impute": "column_median",
        "lasso": {"lambda": None, "folds": 5, "n_lambda": 50, "lambda_min_ratio": 1e-3,
                  "tol": 1e-7, "max_iter": 1000},
        "relieff": {"k_neighbors": 10, "m_samples": None, "sigma": 20.0, "threshold": 0.0},
        "cluster": {"k": None, "k_range": list(range(1, 13)), "n_init": 10,
                    "max_iter": 300, "tol": 1e-6},
        "tsne": {"perplexity": 20.0, "iters": 1000, "learning_rate": "auto"},
        "seed": seed,
        "output_dir": "out",
    }


def generate_synthetic(out_dir, units: int = 177, features: int = 245, days: int = 46,
                       planted_relevant: int = 10, blob_count: int = 6, seed: int = 0,
                       missing_rate: float = 0.002,
                       separation: float = BLOB_SEPARATION) -> dict[str, Path]:
    """Write a full synthetic input set to ``out_dir`` and return the file paths.

    Units fall into ``blob_count`` latent blobs that differ only along the
    planted features. IR is a linear function of the planted features plus
    small noise, arranged so that the blob IR means are evenly spaced and
    therefore distinct. Non-planted census columns are independent noise, of
    which a ``missing_rate`` fraction of cells is left blank.
    """
    if units < 2 or days < 2 or blob_count < 1 or blob_count > units:
        raise InvalidDimensions(f"invalid units={units}, days={days}, blob_count={blob_count}")
    if features < FIXED_WIDTH + 1:
        raise InvalidDimensions(f"features must be at least {FIXED_WIDTH + 1}")
    if not 0 <= planted_relevant <= features:
        raise InvalidDimensions("planted_relevant must lie in [0, features]")
    if not 0 <= missing_rate < 1:
        raise InvalidDimensions("missing_rate must lie in [0, 1)")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    census_cols = _census_names(features - FIXED_WIDTH)
    all_names = census_cols + list(SUBWAY_COLS) + list(CITIBIKE_COLS) + ["land_area", "population_density"]
    # land_area is derived from population and density, so it cannot be planted
    candidates = [f for f in PLANT_PRIORITY if f in all_names]
    candidates += [f for f in all_names if f not in candidates
                   and f not in ("land_area", "total_population")]
    relevant = candidates[:planted_relevant]

    zips = np.sort(rng.choice(np.arange(10000, 100000), size=units, replace=False))
    codes = [f"{z:05d}" for z in zips]

    # latent blobs live in the planted coordinates
    levels = np.linspace(-0.5, 2.5, blob_count)[rng.permutation(blob_count)]
    if relevant:
        latent, labels, centres = make_blobs(units, blob_count, len(relevant), separation=separation, rng=rng)
        if len(relevant) >= blob_count:
            # centres are orthogonal rows, so this weight vector hits the levels exactly
            weights = centres.T @ levels / (separation / np.sqrt(2)) ** 2
        else:
            weights = np.linalg.lstsq(centres, levels, rcond=None)[0]
        blob_means = centres @ weights
        ir = latent @ weights + rng.normal(scale=0.05, size=units)
    else:
        latent = np.zeros((units, 0))
        labels = rng.permutation(np.arange(units) % blob_count)
        weights = np.zeros(0)
        blob_means = levels
        ir = levels[labels] + rng.normal(scale=0.05, size=units)

    # shrink so raw columns stay positive; standardization undoes the scale
    latent = latent * (BLOB_SEPARATION / max(separation, BLOB_SEPARATION))
    values: dict[str, np.ndarray] = {}
    for name in all_names:
        if name in ("land_area", "population_density"):
            continue
        loc = rng.uniform(100.0, 10000.0)
        z = latent[:, relevant.index(name)] if name in relevant else rng.normal(size=units)
        values[name] = loc + loc * 0.08 * z
    dens_z = latent[:, relevant.index("population_density")] if "population_density" in relevant \
        else rng.normal(size=units)
    density = 30000.0 + 2500.0 * dens_z
    population = np.maximum(values["total_population"], 1.0)
    values["land_area"] = population / density

    blanks = set()
    noise_cols = [c for c in census_cols[1:] if c not in relevant]
    for c in noise_cols:
        for i in np.flatnonzero(rng.random(units) < missing_rate):
            blanks.add((c, int(i)))

    def rows(cols):
        for i, code in enumerate(codes):
            yield [code] + ["" if (c, i) in blanks else _fmt(values[c][i]) for c in cols]

    paths = {
        "census": out / "census.csv",
        "subway": out / "subway.csv",
        "citibike": out / "citibike.csv",
        "land_area": out / "land_area.csv",
        "cases": out / "cases.csv",
        "boundaries": out / "boundaries.geojson",
        "ground_truth": out / "ground_truth.json",
        "config": out / "config.json",
    }
    _write_csv(paths["census"], ["zipcode", *census_cols], rows(census_cols))
    _write_csv(paths["subway"], ["zipcode", *SUBWAY_COLS], rows(SUBWAY_COLS))
    _write_csv(paths["citibike"], ["zipcode", *CITIBIKE_COLS], rows(CITIBIKE_COLS))
    _write_csv(paths["land_area"], ["zipcode", "land_area"], rows(["land_area"]))

    # straight-line daily new cases whose first-to-last rise gives the planted IR
    dates = [START_DATE + timedelta(days=d) for d in range(days)]
    slope = ir * days / (days - 1)
    base = 20.0 + np.maximum(0.0, -slope * (days - 1)) + rng.uniform(0, 30, size=units)
    t = np.arange(days)
    new_cases = base[:, None] + slope[:, None] * t[None, :] + rng.normal(scale=1.0, size=(units, days))
    new_cases = np.maximum(np.rint(new_cases), 0).astype(int)
    cumulative = np.cumsum(new_cases, axis=1)
    _write_csv(paths["cases"], ["zipcode", *[d.isoformat() for d in dates]],
               ([code, *map(str, cumulative[i])] for i, code in enumerate(codes)))

    side = int(np.ceil(np.sqrt(units)))
    cells = []
    for i, code in enumerate(codes):
        row, col = divmod(i, side)
        x0, y0 = round(-74.05 + 0.02 * col, 6), round(40.55 + 0.02 * row, 6)
        x1, y1 = round(x0 + 0.02, 6), round(y0 + 0.02, 6)
        ring = [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
        cells.append({"type": "Feature", "properties": {"zipcode": code},
                      "geometry": {"type": "Polygon", "coordinates": [ring]}})
    _dump_json(paths["boundaries"], {"type": "FeatureCollection", "features": cells})

    _dump_json(paths["ground_truth"], {
        "params": {"units": units, "features": features, "days": days,
                   "planted_relevant": planted_relevant, "blob_count": blob_count,
                   "seed": seed, "missing_rate": missing_rate,
                   "separation": separation},
        "relevant_features": relevant,
        "ir_weights": dict(zip(relevant, map(float, weights))),
        "blob_labels": dict(zip(codes, map(int, labels))),
        "blob_ir_means": [float(v) for v in blob_means],
        "planted_ir": dict(zip(codes, map(float, ir))),
        "start_date": START_DATE.isoformat(),
    })
    _dump_json(paths["config"], default_config(seed))
    return paths
