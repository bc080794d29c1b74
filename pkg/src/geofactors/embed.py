"""Category ("factor") grouping of selected features and exact 1-D t-SNE factor levels."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .cluster import ClusterModel, five_number
from .diagnostics import warn
from .errors import (
    DataError,
    DuplicateAssignment,
    GeoFactorsError,
    PerplexityTooLarge,
    SingleUnit,
    UnitMismatch,
    UnknownCategory,
)
from .seeding import derive_seed

CATEGORIES = (
    "Mobility",
    "Race",
    "Education",
    "Age and Gender",
    "Family",
    "Income",
    "Occupation",
    "Household",
    "General Demographics",
)

CAVEAT = ("Factor levels are 1-D t-SNE coordinates. Their sign and scale are arbitrary "
          "and they are not feature weights; compare distributions across clusters only.")


def category_slug(name: str) -> str:
    return re.sub(r"[^0-9a-z]+", "_", name.lower()).strip("_")


@dataclass(frozen=True)
class CategoryMap:
    categories: dict[str, tuple[str, ...]]
    uncategorized: tuple[str, ...] = ()
    excluded: tuple[str, ...] = ()

    def non_empty(self) -> list[str]:
        return [c for c, feats in self.categories.items() if feats]


def default_category_map() -> dict[str, list[str]]:
    text = resources.files("geofactors").joinpath("data/categories.json").read_text("utf-8")
    return json.loads(text)


def build_category_map(mapping: dict, selected, sink: list | None = None) -> CategoryMap:
    """Validate a raw ``{category: [feature, ...]}`` mapping against the selected features."""
    if not isinstance(mapping, dict):
        raise DataError("category map must be a JSON object")
    selected = list(selected)
    chosen = set(selected)
    owner: dict[str, str] = {}
    for category, features in mapping.items():
        if category not in CATEGORIES:
            raise UnknownCategory(f"unknown category {category!r}; expected one of {CATEGORIES}")
        if not isinstance(features, list) or not all(isinstance(f, str) for f in features):
            raise DataError(f"category {category!r} must map to a list of feature names")
        for f in features:
            if f in owner:
                raise DuplicateAssignment(
                    f"feature {f!r} assigned to both {owner[f]!r} and {category!r}")
            owner[f] = category
    categories = {c: tuple(f for f in mapping.get(c, []) if f in chosen) for c in CATEGORIES}
    # keep selected (column) order inside each category
    order = {f: i for i, f in enumerate(selected)}
    categories = {c: tuple(sorted(feats, key=order.__getitem__)) for c, feats in categories.items()}
    excluded = tuple(f for f in owner if f not in chosen)
    uncategorized = tuple(f for f in selected if f not in owner)
    if uncategorized:
        warn("UNCATEGORIZED", f"{len(uncategorized)} selected features in no category: "
             + ",".join(uncategorized[:10]) + (",..." if len(uncategorized) > 10 else ""),
             sink=sink)
    return CategoryMap(categories=categories, uncategorized=uncategorized, excluded=excluded)


def load_category_map(path, selected, sink: list | None = None) -> CategoryMap:
    """Read a category-map JSON file (``None`` loads the bundled default)."""
    if path is None:
        mapping = default_category_map()
    else:
        with open(path, encoding="utf-8") as fh:
            mapping = json.load(fh)
    return build_category_map(mapping, selected, sink=sink)


# ---------------------------------------------------------------- t-SNE

def _squared_distances(X):
    X = np.asarray(X, dtype=float)
    return ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)


def conditional_probabilities(X, perplexity: float, tol: float = 1e-4,
                              max_tries: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise Gaussian affinities whose entropy (nats) matches log(perplexity).

    Each row's precision is found by bisection (doubling/halving until
    bracketed). Returns the conditional matrix and the precisions. When a row's
    distances are all equal the entropy cannot move, the search runs to
    ``max_tries`` and the row is uniform.
    """
    D = _squared_distances(X)
    n = D.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    betas = np.ones(n)
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, -np.inf, np.inf
        for _ in range(max_tries):
            w = np.exp(-d * beta)
            total = w.sum()
            H = np.log(total) + beta * float(d @ w) / total
            diff = H - target
            if abs(diff) < tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = beta / 2 if lo == -np.inf else (beta + lo) / 2
        w = np.exp(-d * beta)
        P[i, np.arange(n) != i] = w / w.sum()
        betas[i] = beta
    return P, betas


def joint_probabilities(X, perplexity: float) -> np.ndarray:
    """Symmetrised affinities: zero diagonal, entries summing to one."""
    cond, _ = conditional_probabilities(X, perplexity)
    P = (cond + cond.T) / (2 * cond.shape[0])
    np.fill_diagonal(P, 0.0)
    return P / P.sum()


def _student_t(Y):
    diff = Y[:, None] - Y[None, :]
    num = 1.0 / (1.0 + diff ** 2)
    np.fill_diagonal(num, 0.0)
    return diff, num


def kl_divergence(P, Y) -> float:
    _, num = _student_t(np.asarray(Y, dtype=float).ravel())
    Q = np.maximum(num / num.sum(), 1e-300)
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


@dataclass
class FactorEmbedding:
    category: str | None
    levels: np.ndarray
    kl_final: float
    seed: int
    kl_initial: float = float("nan")
    units: tuple[str, ...] | None = None
    features: tuple[str, ...] = ()
    kl_history: list = field(default_factory=list, repr=False)


def resolve_learning_rate(learning_rate, n: int, early_exaggeration: float = 12.0) -> float:
    """``"auto"`` gives n / (4 * early_exaggeration).

    Under exaggeration the update behaves like power iteration on the affinity
    Laplacian, which diverges once lr * 4 * exaggeration / n exceeds 2; in one
    dimension a fixed rate such as 200 scatters small problems (n < ~2000).
    """
    if learning_rate == "auto":
        return n / (4.0 * early_exaggeration)
    lr = float(learning_rate)
    if lr <= 0:
        raise DataError("learning rate must be positive")
    return lr


def tsne_1d(X_cat, perplexity: float = 20.0, iters: int = 1000, learning_rate="auto",
            seed: int = 0, early_exaggeration: float = 12.0, exaggeration_iters: int = 250,
            init=None, kl_every: int = 0) -> FactorEmbedding:
    """Exact t-SNE to one dimension.

    Momentum 0.5 and exaggerated affinities for the first
    ``exaggeration_iters`` iterations, momentum 0.8 afterwards. Starting
    coordinates are N(0, 1e-4^2) draws from ``seed`` unless ``init`` is given.
    ``kl_every > 0`` records the KL divergence every that many iterations.
    ``learning_rate`` is a number or ``"auto"`` (see :func:`resolve_learning_rate`).
    """
    X = np.asarray(X_cat, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise SingleUnit("t-SNE needs at least two units")
    if X.shape[1] < 1:
        raise DataError("t-SNE needs at least one feature")
    if not 3 * perplexity < n:
        raise PerplexityTooLarge(f"3 * perplexity ({3 * perplexity:g}) must be below n={n}")

    lr = resolve_learning_rate(learning_rate, n, early_exaggeration)
    P = joint_probabilities(X, perplexity)
    if init is None:
        Y = np.random.default_rng(seed).normal(0.0, 1e-4, n)
    else:
        Y = np.array(init, dtype=float).ravel()
    kl_initial = kl_divergence(P, Y)
    history = [(0, kl_initial)]
    update = np.zeros(n)
    for it in range(1, iters + 1):
        early = it <= exaggeration_iters
        P_eff = P * early_exaggeration if early else P
        momentum = 0.5 if early else 0.8
        diff, num = _student_t(Y)
        Q = num / num.sum()
        grad = 4.0 * ((P_eff - Q) * num * diff).sum(axis=1)
        update = momentum * update - lr * grad
        Y = Y + update
        Y = Y - Y.mean()
        if kl_every and it % kl_every == 0:
            history.append((it, kl_divergence(P, Y)))
    kl_final = kl_divergence(P, Y)
    return FactorEmbedding(category=None, levels=Y, kl_final=kl_final, seed=seed,
                           kl_initial=kl_initial, kl_history=history)


def embed_all(X, cmap: CategoryMap, perplexity: float = 20.0, iters: int = 1000,
              learning_rate="auto", seed: int = 0,
              sink: list | None = None) -> list[FactorEmbedding]:
    """One 1-D embedding per non-empty category of a standardized matrix.

    Rows are processed in unit-code order and mapped back, so reordering the
    input rows permutes the levels and changes nothing else. A category that
    fails is reported with a TSNE_FAILED warning and skipped.
    """
    units = tuple(X.units)
    canonical = np.argsort(np.array(units, dtype=object), kind="stable")
    out = []
    for category, features in cmap.categories.items():
        if not features:
            warn("EMPTY_CATEGORY", f"category {category!r} has no selected features", sink=sink)
            continue
        cat_seed = derive_seed(seed, "embed", category)
        try:
            emb = tsne_1d(X.columns(features)[canonical], perplexity=perplexity, iters=iters,
                          learning_rate=learning_rate, seed=cat_seed)
        except GeoFactorsError as exc:
            warn("TSNE_FAILED", f"category {category!r}: {exc}", sink=sink)
            continue
        levels = np.empty(len(units))
        levels[canonical] = emb.levels
        emb.levels = levels
        emb.category = category
        emb.units = units
        emb.features = tuple(features)
        out.append(emb)
    return out


def factor_report(embeddings, model: ClusterModel) -> list[dict]:
    """Boxplot summary of every category's levels within every cluster."""
    rows = []
    for emb in embeddings:
        if emb.units is not None and model.units is not None and tuple(emb.units) != tuple(model.units):
            raise UnitMismatch(f"embedding {emb.category!r} and cluster model cover different units")
        if len(emb.levels) != len(model.assignment):
            raise UnitMismatch(f"embedding {emb.category!r} has {len(emb.levels)} levels "
                               f"for {len(model.assignment)} units")
        for c in range(model.k):
            members = model.assignment == c
            rows.append({"category": emb.category, "cluster_id": c, "n": int(members.sum()),
                         **five_number(np.asarray(emb.levels)[members])})
    return rows
