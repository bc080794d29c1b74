"""k-means with k-means++ seeding, elbow-based choice of k, and IR-ranked cluster IDs."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .diagnostics import warn
from .errors import DataError, KExceedsUnits, RangeTooShort, UnitMismatch
from .target import TargetVector


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignment: np.ndarray
    wcss: float
    cluster_ir_mean: np.ndarray | None = None
    units: tuple[str, ...] | None = None
    n_iter: int = 0
    history: tuple[float, ...] = ()

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def compute_wcss(X, centroids, assignment) -> float:
    X = np.asarray(X, dtype=float)
    diff = X - np.asarray(centroids)[assignment]
    return float(np.einsum("ij,ij->", diff, diff))


def _sq_dists(X, centroids):
    # direct differences keep the result independent of row order
    return ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def kmeans_plusplus(X, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first centre uniform, then proportional to squared distance."""
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # remaining points coincide with chosen centres
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(free))
        chosen.append(idx)
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1))
    return X[chosen].copy()


def lloyd(X, centroids, max_iter: int = 300, tol: float = 1e-6, sink: list | None = None):
    """Lloyd iterations from the given centres.

    Returns ``(centroids, assignment, wcss_history, n_iter)``. Each entry of
    the history is the WCSS after an assign+update step. An empty cluster is
    reseeded with the point farthest from its assigned centre. Stops when no
    centre moves by ``tol`` or more (Euclidean norm).
    """
    X = np.asarray(X, dtype=float)
    centroids = np.array(centroids, dtype=float)
    k = centroids.shape[0]
    history: list[float] = []
    assignment = np.zeros(X.shape[0], dtype=int)
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(X, centroids)
        assignment = np.argmin(d2, axis=1)
        counts = np.bincount(assignment, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            own = d2[np.arange(X.shape[0]), assignment]
            for c in empty:
                far = int(np.argmax(np.where(counts[assignment] > 1, own, -1.0)))
                warn("EMPTY_CLUSTER_REPAIRED", f"cluster {c} reseeded at row {far}", sink=sink)
                counts[assignment[far]] -= 1
                assignment[far] = c
                counts[c] = 1
        new = np.array([X[assignment == c].mean(axis=0) for c in range(k)])
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        history.append(compute_wcss(X, centroids, assignment))
        if shift < tol:
            break
    return centroids, assignment, history, it


def kmeans(X, k: int, n_init: int = 10, max_iter: int = 300, tol: float = 1e-6,
           seed: int = 0, units=None, sink: list | None = None) -> ClusterModel:
    """Best of ``n_init`` k-means++ / Lloyd runs by WCSS (ties keep the earliest run)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("X must be a 2-D matrix")
    n = X.shape[0]
    if not 1 <= k <= n:
        raise KExceedsUnits(f"k={k} must be between 1 and the number of units ({n})")
    if not np.all(np.isfinite(X)):
        raise DataError("X contains non-finite values")
    if units is not None and len(units) != n:
        raise UnitMismatch(f"{len(units)} unit ids for {n} rows")
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        rng = np.random.default_rng(child)
        cent, assign, hist, it = lloyd(X, kmeans_plusplus(X, k, rng), max_iter, tol, sink)
        if best is None or hist[-1] < best[2][-1]:
            best = (cent, assign, hist, it)
    cent, assign, hist, it = best
    return ClusterModel(k=k, centroids=cent, assignment=assign, wcss=hist[-1],
                        units=None if units is None else tuple(str(u) for u in units),
                        n_iter=it, history=tuple(hist))


def knee_index(ks, wcss) -> int:
    """Interior point farthest from the chord joining the curve's endpoints.

    Ties (including a perfectly straight curve) go to the smallest k. The
    argmax does not depend on how the two axes are scaled.
    """
    ks = np.asarray(ks, dtype=float)
    w = np.asarray(wcss, dtype=float)
    dx, dy = ks[-1] - ks[0], w[-1] - w[0]
    dist = np.abs(dx * (w - w[0]) - dy * (ks - ks[0])) / np.hypot(dx, dy)
    return 1 + int(np.argmax(dist[1:-1]))


@dataclass
class ElbowResult:
    k: int
    ks: list[int]
    wcss: list[float]
    models: dict


def elbow_select_k(X, k_range, n_init: int = 10, max_iter: int = 300, tol: float = 1e-6,
                   seed: int = 0, units=None, sink: list | None = None) -> ElbowResult:
    ks = [int(k) for k in k_range]
    if len(ks) < 3:
        raise RangeTooShort(f"elbow needs at least 3 candidate k values, got {len(ks)}")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise DataError("k_range must be strictly increasing")
    models = {k: kmeans(X, k, n_init=n_init, max_iter=max_iter, tol=tol, seed=seed,
                        units=units, sink=sink) for k in ks}
    curve = [models[k].wcss for k in ks]
    return ElbowResult(k=ks[knee_index(ks, curve)], ks=ks, wcss=curve, models=models)


def _aligned(model: ClusterModel, target: TargetVector):
    if model.units is not None:
        if tuple(model.units) != tuple(target.units):
            raise UnitMismatch("cluster model and target cover different units")
    elif len(model.assignment) != len(target.units):
        raise UnitMismatch(f"{len(model.assignment)} assignments for {len(target.units)} target units")


def relabel_by_ir(model: ClusterModel, target: TargetVector) -> ClusterModel:
    """Renumber clusters so mean IR increases with cluster ID; ties keep the original order."""
    _aligned(model, target)
    ir = np.asarray(target.ir, dtype=float)
    means = np.array([ir[model.assignment == c].mean() if np.any(model.assignment == c) else -np.inf
                      for c in range(model.k)])
    order = np.argsort(means, kind="stable")     # order[new] = old
    new_id = np.empty(model.k, dtype=int)
    new_id[order] = np.arange(model.k)
    return replace(model, centroids=model.centroids[order], assignment=new_id[model.assignment],
                   cluster_ir_mean=means[order], units=tuple(target.units))


def five_number(values) -> dict:
    """min, quartiles, median, max with linear interpolation between order statistics."""
    v = np.asarray(values, dtype=float)
    q = np.percentile(v, [0, 25, 50, 75, 100], method="linear")
    return {"min": float(q[0]), "q1": float(q[1]), "median": float(q[2]),
            "q3": float(q[3]), "max": float(q[4]), "mean": float(v.mean()),
            "iqr": float(q[3] - q[1]), "range": float(q[4] - q[0])}


def cluster_report(model: ClusterModel, target: TargetVector) -> list[dict]:
    """Per-cluster size, IR boxplot summary and member units."""
    _aligned(model, target)
    ir = np.asarray(target.ir, dtype=float)
    out = []
    for c in range(model.k):
        members = np.flatnonzero(model.assignment == c)
        out.append({"cluster_id": c, "size": int(members.size),
                    "ir": five_number(ir[members]),
                    "units": [target.units[i] for i in members]})
    return out
