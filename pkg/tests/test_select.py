import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geofactors.errors import (
    DimensionMismatch,
    GridEmpty,
    KTooLarge,
    TooFewRows,
    TooFewUnitsForFolds,
    UnknownFeatureName,
)
from geofactors.ingest import FeatureTable
from geofactors.select import (
    StandardizedMatrix,
    kfold_ids,
    lambda_max,
    lasso_fit,
    lasso_path,
    lasso_select,
    log_lambda_grid,
    rrelieff_select,
    rrelieff_weights,
    select_features,
    soft_threshold,
    standardize,
    union_select,
)
from geofactors.target import TargetVector


def z_matrix(values, names=None):
    values = np.asarray(values, float)
    names = names or [f"f{j}" for j in range(values.shape[1])]
    return standardize(FeatureTable([str(i) for i in range(len(values))], names, values))


def orthonormal_design(rng, n, p):
    """Centered X with X^T X / n = I."""
    A = rng.normal(size=(n, p))
    A -= A.mean(axis=0)
    q, _ = np.linalg.qr(A)
    return q * math.sqrt(n)


# ---------------------------------------------------------------- standardize

class TestStandardize:
    def test_two_points(self):
        np.testing.assert_array_equal(z_matrix([[1.0], [3.0]]).z[:, 0], [-1, 1])

    def test_constant_flagged(self):
        s = z_matrix([[7.0, 1], [7, 2], [7, 3]])
        assert s.constant.tolist() == [True, False]
        assert s.z[:, 0].tolist() == [0, 0, 0]

    def test_moments(self):
        s = z_matrix(np.random.default_rng(3).normal(5, 3, size=(10, 4)))
        assert np.all(np.abs(s.z.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(s.z.std(axis=0) - 1) < 1e-9)

    def test_too_few_rows(self):
        with pytest.raises(TooFewRows):
            z_matrix([[1.0, 2.0]])

    def test_columns_unknown_name(self):
        with pytest.raises(UnknownFeatureName):
            z_matrix([[1.0], [2.0]]).columns(["nope"])


# ---------------------------------------------------------------- Lasso

def test_soft_threshold_values():
    np.testing.assert_array_equal(soft_threshold(np.array([-3.0, -0.5, 0.0, 0.5, 3.0]), 1.0),
                                  [-2, 0, 0, 0, 2])


class TestLassoFit:
    def test_zero_penalty_matches_normal_equations(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(40, 5))
        y = X @ rng.normal(size=5) + rng.normal(size=40)
        fit = lasso_fit(X, y, 0.0, tol=1e-13, max_iter=10000)
        Xc, yc = X - X.mean(axis=0), y - y.mean()
        beta = np.linalg.solve(Xc.T @ Xc, Xc.T @ yc)
        np.testing.assert_allclose(fit.coef, beta, atol=1e-9)
        assert fit.intercept == pytest.approx(y.mean() - X.mean(axis=0) @ beta, abs=1e-9)

    def test_single_column_y_equals_2x(self):
        x = z_matrix(np.random.default_rng(1).normal(size=(30, 1)))
        y = 2 * x.z[:, 0]
        fit = lasso_fit(x, y, 0.0)
        assert fit.coef[0] == pytest.approx(2.0, abs=1e-12)

    def test_orthonormal_closed_form(self):
        rng = np.random.default_rng(5)
        X = orthonormal_design(rng, 30, 6)
        y = X @ rng.normal(size=6) + rng.normal(size=30)
        ols = X.T @ (y - y.mean()) / 30
        for lam in (0.0, 0.1, 0.5, float(np.max(np.abs(ols))) * 0.9):
            fit = lasso_fit(X, y, lam, tol=1e-12)
            np.testing.assert_allclose(fit.coef, soft_threshold(ols, lam), atol=1e-10)

    def test_kill_switch_exact(self):
        rng = np.random.default_rng(2)
        X, y = rng.normal(size=(25, 8)), rng.normal(size=25)
        lmax = lambda_max(X, y)
        Xc, yc = X - X.mean(axis=0), y - y.mean()
        assert lmax == pytest.approx(np.max(np.abs(Xc.T @ yc)) / 25, rel=1e-14)
        assert np.all(lasso_fit(X, y, lmax).coef == 0.0)
        assert np.any(lasso_fit(X, y, lmax * 0.99).coef != 0.0)

    def test_duplicate_columns_first_wins(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=50)
        X = np.column_stack([a, a, rng.normal(size=50)])
        y = 3 * a + rng.normal(scale=0.1, size=50)
        fit = lasso_fit(X, y, 0.1)
        assert fit.coef[0] != 0.0
        assert fit.coef[1] == 0.0

    def test_objective_recorded_and_decreasing(self):
        rng = np.random.default_rng(4)
        X, y = rng.normal(size=(30, 10)), rng.normal(size=30)
        obj = lasso_fit(X, y, 0.05).objective
        assert len(obj) >= 2
        assert all(b <= a * (1 + 1e-12) for a, b in zip(obj, obj[1:]))

    def test_nonconvergence_is_a_warning(self):
        rng = np.random.default_rng(4)
        X, y = rng.normal(size=(30, 10)), rng.normal(size=30)
        sink = []
        fit = lasso_fit(X, y, 1e-4, max_iter=2, sink=sink)
        assert not fit.converged
        assert [w.code for w in sink] == ["NONCONVERGENCE"]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            lasso_fit(np.ones((4, 2)), np.ones(5), 0.1)

    def test_misaligned_units(self):
        X = z_matrix([[1.0], [2.0], [4.0]])
        y = TargetVector(["2", "1", "0"], [1, 2, 3], 2)
        with pytest.raises(DimensionMismatch):
            lasso_fit(X, y, 0.1)

    def test_path_warm_start_matches_cold(self):
        rng = np.random.default_rng(8)
        X, y = rng.normal(size=(40, 6)), rng.normal(size=40)
        grid = log_lambda_grid(X, y, 10)
        for warm, lam in zip(lasso_path(X, y, grid, tol=1e-12), grid):
            np.testing.assert_allclose(warm.coef, lasso_fit(X, y, lam, tol=1e-12).coef, atol=1e-8)


class TestLassoSelect:
    def test_planted_single_feature(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(60, 8))
        y = 2 * X[:, 3] + rng.normal(scale=0.1, size=60)
        sel = lasso_select(X, y, folds=5, seed=1)
        assert "x3" in sel.selected
        assert sel.cv_mse.shape == sel.grid.shape

    def test_noise_at_lambda_max_selects_nothing(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(50, 8)), rng.normal(size=50)
        sel = lasso_select(X, y, lambda_grid=[lambda_max(X, y)])
        assert sel.selected == ()

    def test_empty_grid(self):
        with pytest.raises(GridEmpty):
            lasso_select(np.ones((10, 2)), np.arange(10.0), lambda_grid=[])

    def test_too_few_units(self):
        with pytest.raises(TooFewUnitsForFolds):
            lasso_select(np.random.default_rng(0).normal(size=(4, 2)), np.arange(4.0), folds=5)

    def test_grid_must_descend(self):
        with pytest.raises(ValueError):
            lasso_select(np.random.default_rng(0).normal(size=(10, 2)), np.arange(10.0),
                         lambda_grid=[0.1, 0.2])

    def test_folds_balanced_and_seeded(self):
        ids = kfold_ids(23, 5, seed=3)
        assert sorted(np.bincount(ids).tolist()) == [4, 4, 5, 5, 5]
        assert np.array_equal(ids, kfold_ids(23, 5, seed=3))

    def test_grid_shape(self):
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(20, 3)), rng.normal(size=20)
        grid = log_lambda_grid(X, y, 50, 1e-3)
        assert grid[0] == lambda_max(X, y)
        assert grid[-1] == pytest.approx(grid[0] * 1e-3)
        assert np.all(np.diff(grid) < 0)


# ---------------------------------------------------------------- RReliefF

def rrelieff_reference(X, y, k, sigma):
    """Literal per-instance, per-neighbour, per-feature loops over the RReliefF update."""
    n, p = X.shape
    y_rng = max(y) - min(y)
    f_rng = [max(X[:, a]) - min(X[:, a]) or 1.0 for a in range(p)]
    raw = [math.exp(-((r + 1) / sigma) ** 2) for r in range(k)]
    rank_w = [w / sum(raw) for w in raw]
    n_dc, n_da, n_dcda = 0.0, [0.0] * p, [0.0] * p
    for i in range(n):
        others = sorted((sum((X[i, a] - X[j, a]) ** 2 for a in range(p)), j)
                        for j in range(n) if j != i)
        for r, (_, j) in enumerate(others[:k]):
            dc = abs(y[i] - y[j]) / y_rng
            n_dc += dc * rank_w[r]
            for a in range(p):
                da = abs(X[i, a] - X[j, a]) / f_rng[a]
                n_da[a] += da * rank_w[r]
                n_dcda[a] += dc * da * rank_w[r]
    return np.array([n_dcda[a] / n_dc - (n_da[a] - n_dcda[a]) / (n - n_dc) for a in range(p)])


class TestRReliefF:
    def test_matches_reference_loops(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(25, 4))
        y = X[:, 0] + 0.3 * rng.normal(size=25)
        np.testing.assert_allclose(rrelieff_weights(X, y, k_neighbors=5, sigma=2.0),
                                   rrelieff_reference(X, y, 5, 2.0), atol=1e-12)

    def test_constant_feature_exact_zero(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([rng.normal(size=40), np.full(40, 3.0)])
        w = rrelieff_weights(z_matrix(X), rng.normal(size=40))
        assert w[1] == 0.0

    def test_degenerate_target(self):
        sink = []
        w = rrelieff_weights(np.random.default_rng(0).normal(size=(20, 3)), np.ones(20), sink=sink)
        assert w.tolist() == [0.0, 0.0, 0.0]
        assert sink[0].code == "DEGENERATE_TARGET"

    @pytest.mark.parametrize("seed", range(20))
    def test_planted_beats_noise(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(100, 2))
        y = X[:, 0] + 0.05 * rng.normal(size=100)
        w = rrelieff_weights(X, y)
        assert w[0] > w[1]

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            rrelieff_weights(np.ones((5, 2)), np.arange(5.0), k_neighbors=5)

    def test_weights_bounded(self):
        rng = np.random.default_rng(3)
        w = rrelieff_weights(rng.normal(size=(50, 6)), rng.normal(size=50))
        assert np.all(np.abs(w) <= 1)

    def test_subsample_seeded(self):
        rng = np.random.default_rng(3)
        X, y = rng.normal(size=(50, 3)), rng.normal(size=50)
        a = rrelieff_weights(X, y, m_samples=20, seed=5)
        assert np.array_equal(a, rrelieff_weights(X, y, m_samples=20, seed=5))

    def test_select_threshold(self):
        assert rrelieff_select({"A": 0.3, "B": -0.1}) == ("A",)
        assert rrelieff_select(np.array([-0.2, -0.1]), feature_names=["A", "B"]) == ()

    def test_planted_five_of_fifty_all_selected(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(177, 50))
            y = X[:, :5].sum(axis=1) + 0.1 * rng.normal(size=177)
            assert np.all(rrelieff_weights(X, y)[:5] > 0)

    @pytest.mark.xfail(strict=True, reason=(
        "noise-feature weights scatter around zero (sd ~3.5e-3 at n=177, k=10), so roughly "
        "40% of 45 noise features clear a zero threshold; see decisions ledger"))
    def test_planted_five_of_fifty_few_false_positives(self):
        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(177, 50))
            y = X[:, :5].sum(axis=1) + 0.1 * rng.normal(size=177)
            names = [f"f{j}" for j in range(50)]
            chosen = set(rrelieff_select(rrelieff_weights(X, y), 0.0, names))
            planted = {f"f{j}" for j in range(5)}
            hits += planted <= chosen and len(chosen - planted) <= 5
        assert hits >= 11


# ---------------------------------------------------------------- union

class TestUnion:
    def test_small(self):
        assert union_select({"A", "B"}, {"B", "C"}, ["A", "B", "C", "D"]) == ["A", "B", "C"]

    def test_empty(self):
        assert union_select(set(), set(), ["A"]) == []

    def test_unknown(self):
        with pytest.raises(UnknownFeatureName):
            union_select({"Z"}, set(), ["A"])

    def test_disjoint_90_60(self):
        order = [f"f{j}" for j in range(245)]
        assert len(union_select(order[:90], order[100:160], order)) == 150

    @given(st.sets(st.integers(0, 49)), st.sets(st.integers(0, 49)))
    def test_inclusion_exclusion(self, a, b):
        order = [f"f{j}" for j in range(50)]
        la, lb = {order[i] for i in a}, {order[i] for i in b}
        out = union_select(la, lb, order)
        assert len(out) == len(la) + len(lb) - len(la & lb)
        assert out == sorted(out, key=order.index)


def test_select_features_report():
    rng = np.random.default_rng(0)
    X = z_matrix(rng.normal(size=(60, 12)))
    y = TargetVector(X.units, 2 * X.z[:, 0] + 0.1 * rng.normal(size=60), 10)
    res = select_features(X, y, cv_seed=1, relieff_seed=2)
    rep = res.to_report()
    assert set(res.lasso_selected) == {f for f, c in zip(X.feature_names, res.lasso_coefs) if c != 0}
    assert res.union_selected == union_select(res.lasso_selected, res.relieff_selected,
                                              X.feature_names)
    assert rep["features"][0]["selected_by"] == "both"
    assert len(rep["cv_mse"]) == len(rep["lambda_grid"]) == 50
    fixed = select_features(X, y, lam=0.05).to_report()
    assert fixed["cv_mse"] is None and fixed["lambda"] == 0.05
    assert isinstance(X, StandardizedMatrix)
