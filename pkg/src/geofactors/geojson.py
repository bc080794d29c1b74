"""Choropleth GeoJSON: boundary features annotated with cluster ID, IR and factor levels."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .cluster import ClusterModel
from .diagnostics import warn
from .embed import category_slug
from .errors import MalformedGeoJSON, MissingUnitProperty
from .target import TargetVector


def read_boundaries(path) -> dict:
    try:
        with Path(path).open(encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedGeoJSON(f"{path}: {exc}") from None
    check_feature_collection(doc)
    return doc


def check_feature_collection(doc) -> None:
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise MalformedGeoJSON("top-level object must be a FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise MalformedGeoJSON("FeatureCollection.features must be an array")
    for i, feat in enumerate(features):
        if not isinstance(feat, dict) or feat.get("type") != "Feature":
            raise MalformedGeoJSON(f"features[{i}] is not a Feature")
        if "geometry" not in feat:
            raise MalformedGeoJSON(f"features[{i}] has no geometry member")
        props = feat.get("properties")
        if props is not None and not isinstance(props, dict):
            raise MalformedGeoJSON(f"features[{i}].properties must be an object or null")


def factor_property(category: str) -> str:
    return f"factor_{category_slug(category)}"


def emit_choropleth(boundaries, model: ClusterModel, embeddings, target: TargetVector,
                    unit_property: str = "zipcode", path=None,
                    sink: list | None = None) -> dict:
    """Copy ``boundaries`` and add ``cluster_id``, ``ir`` and ``factor_<category>`` to every feature.

    ``boundaries`` is a parsed FeatureCollection or a path to one. Geometries
    are passed through untouched. A boundary whose unit was not modelled gets
    null values; modelled units without a boundary are only warned about.
    Writes the result to ``path`` when given.
    """
    doc = read_boundaries(boundaries) if isinstance(boundaries, (str, Path)) else boundaries
    check_feature_collection(doc)
    units = list(target.units)
    index = {u: i for i, u in enumerate(units)}
    if model.units is not None and tuple(model.units) != tuple(units):
        raise MalformedGeoJSON("cluster model and target cover different units")
    factor_cols = [(factor_property(e.category), np.asarray(e.levels)) for e in embeddings]

    out = {k: copy.deepcopy(v) for k, v in doc.items() if k != "features"}
    out_features = []
    seen = set()
    for i, feat in enumerate(doc["features"]):
        props = dict(feat.get("properties") or {})
        if unit_property not in props or props[unit_property] in (None, ""):
            raise MissingUnitProperty(f"features[{i}] lacks property {unit_property!r}")
        code = str(props[unit_property])
        row = index.get(code)
        if row is None:
            warn("BOUNDARY_UNIT_NOT_MODELED", "boundary has no modelled unit; null properties",
                 unit=code, sink=sink)
            props["cluster_id"] = None
            props["ir"] = None
            for name, _ in factor_cols:
                props[name] = None
        else:
            seen.add(code)
            props["cluster_id"] = int(model.assignment[row])
            props["ir"] = float(target.ir[row])
            for name, levels in factor_cols:
                props[name] = float(levels[row])
        new = {k: v for k, v in feat.items() if k not in ("properties", "geometry")}
        new["type"] = "Feature"
        new["geometry"] = feat["geometry"]
        new["properties"] = props
        out_features.append(new)
    for code in units:
        if code not in seen:
            warn("UNIT_NOT_IN_BOUNDARIES", "modelled unit has no boundary feature", unit=code,
                 sink=sink)
    out["type"] = "FeatureCollection"
    out["features"] = out_features
    if path is not None:
        Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out
