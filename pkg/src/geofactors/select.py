"""Feature selection against the IR target: Lasso, RReliefF and their union."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .diagnostics import warn
from .errors import (
    DataError,
    DimensionMismatch,
    GridEmpty,
    KTooLarge,
    TooFewRows,
    TooFewUnitsForFolds,
    UnknownFeatureName,
)
from .ingest import FeatureTable
from .target import TargetVector


@dataclass(frozen=True)
class StandardizedMatrix:
    """Column z-scores (population standard deviation) of a feature table.

    Constant columns are flagged in ``constant`` and carried as zeros.
    """

    units: tuple[str, ...]
    feature_names: tuple[str, ...]
    means: np.ndarray
    stds: np.ndarray
    z: np.ndarray
    constant: np.ndarray

    def columns(self, names) -> np.ndarray:
        index = {f: j for j, f in enumerate(self.feature_names)}
        try:
            cols = [index[f] for f in names]
        except KeyError as exc:
            raise UnknownFeatureName(f"feature {exc.args[0]!r} not in matrix") from None
        return self.z[:, cols]

    @property
    def shape(self):
        return self.z.shape


def standardize(table: FeatureTable) -> StandardizedMatrix:
    values = np.asarray(table.values, dtype=float)
    if values.shape[0] < 2:
        raise TooFewRows(f"standardize needs at least 2 rows, got {values.shape[0]}")
    if np.isnan(values).any():
        raise DataError("standardize requires a table without missing values")
    means = values.mean(axis=0)
    stds = values.std(axis=0)
    # exact equality: a mean/std round-off must not flag a varying column
    constant = np.ptp(values, axis=0) == 0
    centered = values - means
    z = np.zeros_like(values)
    z[:, ~constant] = centered[:, ~constant] / stds[~constant]
    stds = np.where(constant, 0.0, stds)
    for arr in (means, stds, z, constant):
        arr.setflags(write=False)
    return StandardizedMatrix(units=table.units, feature_names=table.feature_names,
                              means=means, stds=stds, z=z, constant=constant)


def _matrix(X) -> np.ndarray:
    return np.asarray(X.z if isinstance(X, StandardizedMatrix) else X, dtype=float)


def _vector(y) -> np.ndarray:
    return np.asarray(y.ir if isinstance(y, TargetVector) else y, dtype=float)


def _check_units(X, y):
    if isinstance(X, StandardizedMatrix) and isinstance(y, TargetVector):
        if tuple(X.units) != tuple(y.units):
            raise DimensionMismatch("matrix rows and target units are not aligned")


# ---------------------------------------------------------------- Lasso

def soft_threshold(value, threshold):
    return np.sign(value) * np.maximum(np.abs(value) - threshold, 0.0)


def _lasso_prepare(X, y):
    X = _matrix(X)
    y = _vector(y)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has shape {X.shape} but y has shape {y.shape}")
    x_mean = X.mean(axis=0)
    Xc = np.asfortranarray(X - x_mean)
    y_mean = float(y.mean())
    return Xc, y - y_mean, x_mean, y_mean


_EPS = np.finfo(float).eps


@numba.njit(cache=True)
def _dot(Xc, j, r):
    # sequential sum; also returns sum |x_i r_i| for the rounding bound
    acc = 0.0
    mag = 0.0
    for i in range(Xc.shape[0]):
        t = Xc[i, j] * r[i]
        acc += t
        mag += abs(t)
    return acc, mag


@numba.njit(cache=True)
def _correlations(Xc, r):
    n, p = Xc.shape
    out = np.empty(p)
    for j in range(p):
        out[j] = _dot(Xc, j, r)[0] / n
    return out


@numba.njit(cache=True)
def _cd_sweep(Xc, r, beta, col_sq, lam, slack):
    """One cyclic pass over all coordinates; updates ``r`` and ``beta`` in place.

    A correlation within rounding distance of the threshold counts as on it,
    so exactly tied columns (duplicates) stay at zero. The allowance covers
    the dot product (eps * sum |x_i r_i| / n) plus ``slack[j]``, the error
    carried by residual updates, which scales with |y| rather than |r|.
    """
    n, p = Xc.shape
    max_delta = 0.0
    for j in range(p):
        if col_sq[j] == 0.0:
            continue
        old = beta[j]
        dot, mag = _dot(Xc, j, r)
        rho = dot / n + col_sq[j] * old
        if abs(rho) <= lam + _EPS * mag / n + slack[j]:
            new = 0.0
        elif rho > 0:
            new = (rho - lam) / col_sq[j]
        else:
            new = (rho + lam) / col_sq[j]
        if new != old:
            delta = new - old
            for i in range(n):
                r[i] -= delta * Xc[i, j]
            beta[j] = new
            if abs(delta) > max_delta:
                max_delta = abs(delta)
    return max_delta


def lambda_max(X, y) -> float:
    """Smallest penalty at which every Lasso coefficient is zero: max_j |x_j^T y| / n."""
    Xc, yc, _, _ = _lasso_prepare(X, y)
    if Xc.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(_correlations(Xc, yc))))


def log_lambda_grid(X, y, n_lambda: int = 50, min_ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced penalties from lambda_max down to ``min_ratio * lambda_max``."""
    top = lambda_max(X, y)
    if top == 0.0:
        return np.zeros(1)
    return np.geomspace(top, top * min_ratio, n_lambda)


@dataclass
class LassoFit:
    coef: np.ndarray
    intercept: float
    lam: float
    n_iter: int
    converged: bool
    max_delta: float
    objective: list = field(default_factory=list, repr=False)


def lasso_fit(X, y, lam: float, tol: float = 1e-7, max_iter: int = 1000,
              coef_init=None, sink: list | None = None) -> LassoFit:
    """Cyclic coordinate descent for (1/2n)||y - Xb||^2 + lam*||b||_1.

    X and y are centered internally; the intercept is recovered afterwards.
    ``objective`` holds the objective before the first sweep followed by its
    value after every sweep. Stops when the largest coefficient change in a
    sweep falls below ``tol``; hitting ``max_iter`` emits a NONCONVERGENCE
    warning.
    """
    if lam < 0:
        raise DataError("lambda must be non-negative")
    _check_units(X, y)
    Xc, yc, x_mean, y_mean = _lasso_prepare(X, y)
    n, p = Xc.shape
    col_sq = np.array([float(Xc[:, j] @ Xc[:, j]) / n for j in range(p)])
    slack = 8 * _EPS * (np.abs(Xc).T @ np.abs(yc)) / n
    beta = np.zeros(p) if coef_init is None else np.array(coef_init, dtype=float)
    r = yc - Xc @ beta if beta.any() else yc.copy()

    def objective():
        return math.fsum(r * r) / (2 * n) + lam * math.fsum(np.abs(beta))

    history = [objective()]
    converged = False
    max_delta = 0.0
    sweep = 0
    for sweep in range(1, max_iter + 1):
        max_delta = _cd_sweep(Xc, r, beta, col_sq, float(lam), slack)
        history.append(objective())
        if max_delta < tol:
            converged = True
            break
    if not converged:
        warn("NONCONVERGENCE",
             f"lasso lambda={lam:.6g} stopped after {max_iter} sweeps, max change {max_delta:.3g}",
             sink=sink)
    intercept = y_mean - float(x_mean @ beta)
    return LassoFit(coef=beta, intercept=intercept, lam=float(lam), n_iter=sweep,
                    converged=converged, max_delta=max_delta, objective=history)


def lasso_path(X, y, lambdas, tol: float = 1e-7, max_iter: int = 1000,
               sink: list | None = None) -> list[LassoFit]:
    """Warm-started fits along a descending penalty grid."""
    fits = []
    coef = None
    for lam in lambdas:
        fit = lasso_fit(X, y, lam, tol=tol, max_iter=max_iter, coef_init=coef, sink=sink)
        coef = fit.coef
        fits.append(fit)
    return fits


def kfold_ids(n: int, folds: int, seed: int = 0) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % folds
    return ids


@dataclass
class LassoSelection:
    selected: tuple[str, ...]
    lam: float
    coef: np.ndarray
    grid: np.ndarray
    cv_mse: np.ndarray | None
    fit: LassoFit


def lasso_select(X, y, lambda_grid=None, folds: int = 5, seed: int = 0,
                 tol: float = 1e-7, max_iter: int = 1000, feature_names=None,
                 sink: list | None = None) -> LassoSelection:
    """Pick lambda by k-fold CV mean squared error, refit on all rows, keep non-zero coefficients.

    Ties in CV error go to the larger penalty. Without an explicit grid the
    default 50-point log grid from :func:`log_lambda_grid` is used.
    """
    _check_units(X, y)
    Z, target = _matrix(X), _vector(y)
    n, p = Z.shape
    if feature_names is None:
        feature_names = (X.feature_names if isinstance(X, StandardizedMatrix)
                         else tuple(f"x{j}" for j in range(p)))
    grid = log_lambda_grid(Z, target) if lambda_grid is None else np.asarray(lambda_grid, float)
    if grid.size == 0:
        raise GridEmpty("lambda grid is empty")
    if np.any(grid < 0) or np.any(np.diff(grid) > 0):
        raise DataError("lambda grid must be non-negative and sorted descending")
    if folds < 2 or folds > n:
        raise TooFewUnitsForFolds(f"{folds} folds requested for {n} units")

    ids = kfold_ids(n, folds, seed)
    errors = np.zeros((folds, grid.size))
    for f in range(folds):
        train, test = ids != f, ids == f
        for i, fit in enumerate(lasso_path(Z[train], target[train], grid, tol, max_iter, sink)):
            resid = target[test] - (fit.intercept + Z[test] @ fit.coef)
            errors[f, i] = float(np.mean(resid ** 2))
    cv_mse = errors.mean(axis=0)
    best = int(np.argmin(cv_mse))
    fit = lasso_fit(Z, target, grid[best], tol=tol, max_iter=max_iter, sink=sink)
    selected = tuple(name for name, c in zip(feature_names, fit.coef) if c != 0.0)
    return LassoSelection(selected=selected, lam=float(grid[best]), coef=fit.coef,
                          grid=grid, cv_mse=cv_mse, fit=fit)


# ---------------------------------------------------------------- RReliefF

def rrelieff_weights(X, y, k_neighbors: int = 10, m_samples: int | None = None,
                     sigma: float = 20.0, seed: int = 0,
                     sink: list | None = None) -> np.ndarray:
    """RReliefF relevance weights for a regression target.

    For every sampled instance the ``k_neighbors`` nearest units (Euclidean
    distance on the rows of ``X``) contribute with rank weights
    exp(-(rank/sigma)^2), normalised over the k neighbours. Target and feature
    differences are absolute differences divided by the observed range.
    The weight of feature A is

        N_dC&dA[A] / N_dC - (N_dA[A] - N_dC&dA[A]) / (m - N_dC)

    and lies in [-1, 1]. With ``m_samples`` equal to the number of units every
    unit is used once and ``seed`` has no effect.
    """
    _check_units(X, y)
    Z, target = _matrix(X), _vector(y)
    n, p = Z.shape
    if target.shape != (n,):
        raise DimensionMismatch(f"X has {n} rows but y has shape {target.shape}")
    if not 1 <= k_neighbors < n:
        raise KTooLarge(f"k_neighbors={k_neighbors} must be in [1, {n - 1}]")
    m = n if m_samples is None else int(m_samples)
    if not 1 <= m <= n:
        raise DataError(f"m_samples={m} must be in [1, {n}]")
    if sigma <= 0:
        raise DataError("sigma must be positive")

    y_range = float(np.ptp(target))
    if y_range == 0.0:
        warn("DEGENERATE_TARGET", "all target values are equal; RReliefF weights set to 0",
             sink=sink)
        return np.zeros(p)
    f_range = np.ptp(Z, axis=0)
    scale = np.where(f_range > 0, f_range, 1.0)

    samples = np.arange(n) if m == n else np.random.default_rng(seed).choice(n, m, replace=False)
    rank_w = np.exp(-(np.arange(1, k_neighbors + 1) / sigma) ** 2)
    rank_w /= rank_w.sum()

    n_dc = 0.0
    n_da = np.zeros(p)
    n_dcda = np.zeros(p)
    for i in samples:
        dist = ((Z - Z[i]) ** 2).sum(axis=1)
        dist[i] = np.inf
        nbrs = np.argsort(dist, kind="stable")[:k_neighbors]
        d_target = np.abs(target[i] - target[nbrs]) / y_range
        d_feat = np.abs(Z[i] - Z[nbrs]) / scale
        n_dc += float(rank_w @ d_target)
        n_da += rank_w @ d_feat
        n_dcda += (rank_w * d_target) @ d_feat

    weights = n_dcda / n_dc
    if m - n_dc > 0:
        weights -= (n_da - n_dcda) / (m - n_dc)
    return weights


def rrelieff_select(weights, threshold: float = 0.0, feature_names=None) -> tuple[str, ...]:
    if isinstance(weights, dict):
        return tuple(f for f, w in weights.items() if w > threshold)
    names = feature_names if feature_names is not None else [f"x{j}" for j in range(len(weights))]
    return tuple(f for f, w in zip(names, weights) if w > threshold)


# ---------------------------------------------------------------- union

def union_select(lasso, relieff, original_order) -> list[str]:
    order = list(original_order)
    known = set(order)
    unknown = (set(lasso) | set(relieff)) - known
    if unknown:
        raise UnknownFeatureName(f"unknown features {sorted(unknown)}")
    chosen = set(lasso) | set(relieff)
    return [f for f in order if f in chosen]


@dataclass
class SelectionResult:
    feature_names: tuple[str, ...]
    lasso_selected: tuple[str, ...]
    lasso_coefs: np.ndarray
    relieff_selected: tuple[str, ...]
    relieff_weights: np.ndarray
    union_selected: list[str]
    lam: float
    lasso: LassoSelection | None = None
    params: dict = field(default_factory=dict)

    def selected_by(self, name: str) -> str | None:
        in_l, in_r = name in self.lasso_selected, name in self.relieff_selected
        if in_l and in_r:
            return "both"
        if in_l:
            return "lasso"
        if in_r:
            return "relieff"
        return None

    def to_report(self) -> dict:
        features = [
            {"name": name, "lasso_coef": float(c), "relieff_weight": float(w),
             "selected_by": self.selected_by(name)}
            for name, c, w in zip(self.feature_names, self.lasso_coefs, self.relieff_weights)
        ]
        report = {
            "lambda": self.lam,
            "features": features,
            "lasso_selected": list(self.lasso_selected),
            "relieff_selected": list(self.relieff_selected),
            "union_selected": list(self.union_selected),
            "params": self.params,
        }
        if self.lasso is not None:
            fit = self.lasso.fit
            report["lambda_grid"] = [float(v) for v in self.lasso.grid]
            report["cv_mse"] = (None if self.lasso.cv_mse is None
                                else [float(v) for v in self.lasso.cv_mse])
            report["convergence"] = {"converged": fit.converged, "n_iter": fit.n_iter,
                                     "max_delta": float(fit.max_delta)}
        return report


def select_features(X: StandardizedMatrix, y: TargetVector, *, lam: float | None = None,
                    n_lambda: int = 50, lambda_min_ratio: float = 1e-3, folds: int = 5,
                    tol: float = 1e-7, max_iter: int = 1000, k_neighbors: int = 10,
                    m_samples: int | None = None, sigma: float = 20.0,
                    threshold: float = 0.0, cv_seed: int = 0, relieff_seed: int = 0,
                    sink: list | None = None) -> SelectionResult:
    """Lasso (CV-tuned unless ``lam`` is given) and RReliefF on the same matrix, then their union."""
    names = X.feature_names
    if lam is None:
        grid = log_lambda_grid(X, y, n_lambda, lambda_min_ratio)
        lsel = lasso_select(X, y, grid, folds=folds, seed=cv_seed, tol=tol,
                            max_iter=max_iter, sink=sink)
        chosen, coefs, lasso_set = lsel.lam, lsel.coef, lsel.selected
    else:
        fit = lasso_fit(X, y, lam, tol=tol, max_iter=max_iter, sink=sink)
        lsel = LassoSelection(selected=tuple(f for f, c in zip(names, fit.coef) if c != 0.0),
                              lam=float(lam), coef=fit.coef, grid=np.array([lam], float),
                              cv_mse=None, fit=fit)
        chosen, coefs, lasso_set = float(lam), fit.coef, lsel.selected
    weights = rrelieff_weights(X, y, k_neighbors=k_neighbors, m_samples=m_samples,
                               sigma=sigma, seed=relieff_seed, sink=sink)
    relieff_set = rrelieff_select(weights, threshold, names)
    params = {"folds": folds, "n_lambda": n_lambda, "lambda_min_ratio": lambda_min_ratio,
              "tol": tol, "max_iter": max_iter, "k_neighbors": k_neighbors,
              "m_samples": m_samples, "sigma": sigma, "threshold": threshold,
              "cv_seed": cv_seed, "relieff_seed": relieff_seed}
    return SelectionResult(feature_names=names, lasso_selected=lasso_set, lasso_coefs=coefs,
                           relieff_selected=relieff_set, relieff_weights=weights,
                           union_selected=union_select(lasso_set, relieff_set, names),
                           lam=chosen, lasso=lsel, params=params)
