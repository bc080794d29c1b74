"""Batch pipeline: config handling, the four stages and the run manifest.

Stages and the files they write into the output directory::

    select   -> selection.json
    cluster  -> clusters.csv, clusters.json        (reads selection.json)
    embed    -> factors.csv, factors.json          (reads selection.json, clusters.json)
    report   -> choropleth.geojson                 (reads clusters.json, factors.json)

Every stage re-reads the raw inputs named in the config, which is cheap and
keeps each stage runnable on its own. ``manifest.json`` is rewritten by
every invocation.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import ClusterModel, cluster_report, elbow_select_k, kmeans, relabel_by_ir
from .diagnostics import WarningRecord
from .embed import CAVEAT, FactorEmbedding, embed_all, factor_report, load_category_map
from .errors import ConfigError, DataError, GeoFactorsError, NonConvergenceError
from .geojson import emit_choropleth
from .ingest import (
    CASE_MODES,
    IMPUTE_POLICIES,
    SCHEMAS,
    add_population_density,
    impute_missing,
    load_case_series,
    load_feature_csv,
    merge_tables,
)
from .seeding import derive_seed
from .select import StandardizedMatrix, select_features, standardize
from .target import TargetVector, compute_target

DATA_FILES = ("selection.json", "clusters.csv", "clusters.json", "factors.csv",
              "factors.json", "choropleth.geojson")
STAGES = ("select", "cluster", "embed", "report")

DEFAULTS = {
    "density": None,
    "boundaries": None,
    "category_map": None,
    "impute": "column_median",
    "lasso": {"lambda": None, "folds": 5, "n_lambda": 50, "lambda_min_ratio": 1e-3,
              "tol": 1e-7, "max_iter": 1000},
    "relieff": {"k_neighbors": 10, "m_samples": None, "sigma": 20.0, "threshold": 0.0},
    "cluster": {"k": None, "k_range": list(range(1, 13)), "n_init": 10, "max_iter": 300,
                "tol": 1e-6},
    "tsne": {"perplexity": 20.0, "iters": 1000, "learning_rate": "auto"},
    "output_dir": "out",
    "strict": False,
}


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path

    def path(self, rel) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def output_dir(self) -> Path:
        return self.path(self.raw["output_dir"])

    def sha256(self) -> str:
        return hashlib.sha256(_dumps(self.raw).encode("utf-8")).hexdigest()


def _merge_defaults(raw: dict) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if isinstance(cfg.get(key), dict) and isinstance(value, dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


def validate_config(raw: dict, base_dir) -> PipelineConfig:
    """Fill defaults and check the config; raises :class:`ConfigError` (exit code 2)."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if "seed" not in raw or isinstance(raw["seed"], bool) or not isinstance(raw["seed"], int):
        raise ConfigError("config needs an integer 'seed'")
    if not raw.get("features"):
        raise ConfigError("config needs a non-empty 'features' list")
    if not isinstance(raw.get("cases"), dict) or "path" not in raw["cases"]:
        raise ConfigError("config needs 'cases' with a 'path'")
    cfg = PipelineConfig(_merge_defaults(raw), Path(base_dir))
    required = []
    for entry in cfg["features"]:
        if not isinstance(entry, dict) or "path" not in entry:
            raise ConfigError("each features entry needs a 'path'")
        if entry.get("schema", "generic") not in SCHEMAS:
            raise ConfigError(f"unknown schema {entry.get('schema')!r}")
        required.append(entry["path"])
    required.append(cfg["cases"]["path"])
    if cfg["cases"].get("mode", "cumulative") not in CASE_MODES:
        raise ConfigError(f"cases.mode must be one of {CASE_MODES}")
    if cfg["boundaries"]:
        required.append(cfg["boundaries"]["path"])
    if cfg["category_map"]:
        required.append(cfg["category_map"])
    missing = [str(cfg.path(p)) for p in required if not cfg.path(p).is_file()]
    if missing:
        raise ConfigError(f"input files not found: {missing}")
    if cfg["impute"] not in IMPUTE_POLICIES:
        raise ConfigError(f"impute must be one of {IMPUTE_POLICIES}")
    clus = cfg["cluster"]
    if clus["k"] is None and len(clus["k_range"]) < 3:
        raise ConfigError("cluster.k_range needs at least 3 values when k is not fixed")
    if cfg["density"] is not None:
        for key in ("population_col", "land_area_col"):
            if key not in cfg["density"]:
                raise ConfigError(f"density needs {key!r}")
    return cfg


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return validate_config(raw, path.parent)


# ---------------------------------------------------------------- I/O helpers

def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(_dumps(obj), encoding="utf-8")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path.name} not found; run the earlier stage first")
    return json.loads(path.read_text(encoding="utf-8"))


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- stages

@dataclass
class Inputs:
    matrix: StandardizedMatrix
    target: TargetVector


@dataclass
class RunContext:
    cfg: PipelineConfig
    warnings: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    _inputs: Inputs | None = None

    @property
    def out(self) -> Path:
        return self.cfg.output_dir

    def inputs(self) -> Inputs:
        if self._inputs is None:
            self._inputs = load_inputs(self.cfg, self.warnings)
        return self._inputs


def load_inputs(cfg: PipelineConfig, sink: list | None = None) -> Inputs:
    tables = [load_feature_csv(cfg.path(s["path"]), s.get("schema", "generic"), s.get("key"),
                               sink=sink) for s in cfg["features"]]
    table = merge_tables(tables)
    table = impute_missing(table, cfg["impute"], sink=sink)
    if cfg["density"] is not None:
        table = add_population_density(table, cfg["density"]["population_col"],
                                       cfg["density"]["land_area_col"])
    series = load_case_series(cfg.path(cfg["cases"]["path"]),
                              cfg["cases"].get("mode", "cumulative"), sink=sink)
    target = compute_target(series, table.units)
    return Inputs(matrix=standardize(table), target=target)


def stage_select(ctx: RunContext) -> dict:
    cfg, data = ctx.cfg, ctx.inputs()
    lasso, rel = cfg["lasso"], cfg["relieff"]
    result = select_features(
        data.matrix, data.target, lam=lasso["lambda"], n_lambda=lasso["n_lambda"],
        lambda_min_ratio=lasso["lambda_min_ratio"], folds=lasso["folds"], tol=lasso["tol"],
        max_iter=lasso["max_iter"], k_neighbors=rel["k_neighbors"], m_samples=rel["m_samples"],
        sigma=rel["sigma"], threshold=rel["threshold"],
        cv_seed=derive_seed(cfg.seed, "select", "cv"),
        relieff_seed=derive_seed(cfg.seed, "select", "relieff"), sink=ctx.warnings)
    if not result.union_selected:
        raise DataError("no features selected by either Lasso or RReliefF")
    report = result.to_report()
    report["n_units"] = len(data.target)
    report["n_features"] = len(result.feature_names)
    write_json(ctx.out / "selection.json", report)
    return report


def _selected(ctx: RunContext) -> list[str]:
    return read_json(ctx.out / "selection.json")["union_selected"]


def stage_cluster(ctx: RunContext) -> ClusterModel:
    cfg, data = ctx.cfg, ctx.inputs()
    params = cfg["cluster"]
    X = data.matrix.columns(_selected(ctx))
    seed = derive_seed(cfg.seed, "cluster")
    common = dict(n_init=params["n_init"], max_iter=params["max_iter"], tol=params["tol"],
                  seed=seed, units=data.target.units, sink=ctx.warnings)
    curve = None
    if params["k"] is None:
        k_range = [k for k in params["k_range"] if k <= X.shape[0]]
        elbow = elbow_select_k(X, k_range, **common)
        raw_model, curve = elbow.models[elbow.k], {"k": elbow.ks, "wcss": elbow.wcss}
    else:
        raw_model = kmeans(X, int(params["k"]), **common)
    model = relabel_by_ir(raw_model, data.target)

    with (ctx.out / "clusters.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["unit", "cluster_id", "ir"])
        for unit, cid, ir in zip(data.target.units, model.assignment, data.target.ir):
            writer.writerow([unit, int(cid), repr(float(ir))])
    write_json(ctx.out / "clusters.json", {
        "k": model.k,
        "k_selection": "fixed" if params["k"] is not None else "elbow",
        "elbow_curve": curve,
        "wcss": model.wcss,
        "features": _selected(ctx),
        "centroids": model.centroids.tolist(),
        "cluster_ir_mean": [float(v) for v in model.cluster_ir_mean],
        "assignment": {u: int(c) for u, c in zip(data.target.units, model.assignment)},
        "clusters": cluster_report(model, data.target),
        "quartile_method": "linear interpolation between order statistics (numpy 'linear')",
    })
    return model


def load_cluster_model(path, target: TargetVector) -> ClusterModel:
    doc = read_json(path)
    assign = doc["assignment"]
    try:
        labels = np.array([assign[u] for u in target.units], dtype=int)
    except KeyError as exc:
        raise DataError(f"clusters.json has no assignment for unit {exc.args[0]!r}") from None
    return ClusterModel(k=int(doc["k"]), centroids=np.array(doc["centroids"], dtype=float),
                        assignment=labels, wcss=float(doc["wcss"]),
                        cluster_ir_mean=np.array(doc["cluster_ir_mean"], dtype=float),
                        units=tuple(target.units))


def stage_embed(ctx: RunContext) -> list[FactorEmbedding]:
    cfg, data = ctx.cfg, ctx.inputs()
    selected = _selected(ctx)
    cmap = load_category_map(cfg.path(cfg["category_map"]) if cfg["category_map"] else None,
                             selected, sink=ctx.warnings)
    tsne = cfg["tsne"]
    embeddings = embed_all(data.matrix, cmap, perplexity=tsne["perplexity"], iters=tsne["iters"],
                           learning_rate=tsne["learning_rate"], seed=cfg.seed, sink=ctx.warnings)
    model = load_cluster_model(ctx.out / "clusters.json", data.target)
    rows = factor_report(embeddings, model)

    columns = ["category", "cluster_id", "n", "min", "q1", "median", "q3", "max", "mean",
               "iqr", "range"]
    with (ctx.out / "factors.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] if c in ("category", "cluster_id", "n") else repr(row[c])
                             for c in columns])
    write_json(ctx.out / "factors.json", {
        "caveat": CAVEAT,
        "tsne": {"dimensions": 1, **tsne},
        "categories": {
            e.category: {"features": list(e.features), "seed": e.seed,
                         "kl_initial": e.kl_initial, "kl_final": e.kl_final,
                         "levels": {u: float(v) for u, v in zip(e.units, e.levels)}}
            for e in embeddings},
        "uncategorized": list(cmap.uncategorized),
        "excluded_unselected": list(cmap.excluded),
        "summaries": rows,
    })
    return embeddings


def load_embeddings(path, units) -> list[FactorEmbedding]:
    doc = read_json(path)
    out = []
    for category, info in doc["categories"].items():
        levels = np.array([info["levels"][u] for u in units], dtype=float)
        out.append(FactorEmbedding(category=category, levels=levels, kl_final=info["kl_final"],
                                   seed=info["seed"], kl_initial=info["kl_initial"],
                                   units=tuple(units), features=tuple(info["features"])))
    return out


def stage_report(ctx: RunContext) -> dict | None:
    cfg = ctx.cfg
    if not cfg["boundaries"]:
        return None
    data = ctx.inputs()
    model = load_cluster_model(ctx.out / "clusters.json", data.target)
    embeddings = load_embeddings(ctx.out / "factors.json", data.target.units)
    return emit_choropleth(cfg.path(cfg["boundaries"]["path"]), model, embeddings, data.target,
                           unit_property=cfg["boundaries"].get("unit_property", "zipcode"),
                           path=ctx.out / "choropleth.geojson", sink=ctx.warnings)


STAGE_FUNCS = {"select": stage_select, "cluster": stage_cluster, "embed": stage_embed,
               "report": stage_report}


# ---------------------------------------------------------------- manifest and driver

def write_manifest(ctx: RunContext) -> dict:
    """List every artifact in the output directory with its SHA-256.

    The manifest's own entry is the hash of the manifest text with that
    entry's ``sha256`` set to null.
    """
    files = []
    for name in DATA_FILES:
        p = ctx.out / name
        if p.is_file():
            files.append({"name": name, "sha256": sha256_file(p), "bytes": p.stat().st_size})
    files.append({"name": "manifest.json", "sha256": None})
    manifest = {
        "config_sha256": ctx.cfg.sha256(),
        "seed": ctx.cfg.seed,
        "stage_timings_s": {k: round(v, 4) for k, v in ctx.timings.items()},
        "warnings": [str(w) if isinstance(w, WarningRecord) else w for w in ctx.warnings],
        "files": files,
        "versions": {"geofactors": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    files[-1]["sha256"] = hashlib.sha256(_dumps(manifest).encode("utf-8")).hexdigest()
    write_json(ctx.out / "manifest.json", manifest)
    return manifest


def verify_manifest(path) -> bool:
    """Recompute every checksum listed in a manifest."""
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    own = None
    for entry in manifest["files"]:
        if entry["name"] == "manifest.json":
            own = entry
        elif sha256_file(path.parent / entry["name"]) != entry["sha256"]:
            return False
    if own is None:
        return False
    claimed, own["sha256"] = own["sha256"], None
    return hashlib.sha256(_dumps(manifest).encode("utf-8")).hexdigest() == claimed


def run_stages(cfg: PipelineConfig, stages=STAGES) -> RunContext:
    """Run the named stages in pipeline order and write the manifest.

    Errors carry the failing stage in ``exc.stage``. With ``strict`` set in
    the config, any Lasso non-convergence warning raises
    :class:`NonConvergenceError`.
    """
    ctx = RunContext(cfg)
    ctx.out.mkdir(parents=True, exist_ok=True)
    for name in STAGES:
        if name not in stages:
            continue
        start = time.perf_counter()
        try:
            STAGE_FUNCS[name](ctx)
            if cfg["strict"] and any(w.code == "NONCONVERGENCE" for w in ctx.warnings
                                     if isinstance(w, WarningRecord)):
                raise NonConvergenceError("numerical non-convergence with strict mode on")
        except GeoFactorsError as exc:
            exc.stage = name
            raise
        ctx.timings[name] = time.perf_counter() - start
    write_manifest(ctx)
    return ctx


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Full run: select, cluster, embed, report. Returns the manifest."""
    ctx = run_stages(cfg, STAGES)
    return json.loads((ctx.out / "manifest.json").read_text(encoding="utf-8"))
