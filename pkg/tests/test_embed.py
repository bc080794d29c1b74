import json

import numpy as np
import pytest

from geofactors.cluster import ClusterModel
from geofactors.embed import (
    CATEGORIES,
    CAVEAT,
    FactorEmbedding,
    build_category_map,
    conditional_probabilities,
    default_category_map,
    embed_all,
    factor_report,
    joint_probabilities,
    kl_divergence,
    load_category_map,
    tsne_1d,
)
from geofactors.errors import (
    DuplicateAssignment,
    PerplexityTooLarge,
    SingleUnit,
    UnitMismatch,
    UnknownCategory,
)
from geofactors.ingest import FeatureTable
from geofactors.select import standardize
from geofactors.synth import make_blobs


def separable(levels, labels):
    a, b = levels[labels == 0], levels[labels == 1]
    return a.max() < b.min() or b.max() < a.min()


class TestCategoryMap:
    def test_default_has_nine_categories(self):
        m = default_category_map()
        assert list(m) == list(CATEGORIES)
        assert m["General Demographics"] == ["population_density"]

    def test_default_has_no_duplicates(self):
        feats = [f for fs in default_category_map().values() for f in fs]
        assert len(feats) == len(set(feats))

    def test_duplicate_assignment(self):
        with pytest.raises(DuplicateAssignment):
            build_category_map({"Race": ["a"], "Income": ["a"]}, ["a"])

    def test_unknown_category(self):
        with pytest.raises(UnknownCategory):
            build_category_map({"Weather": ["a"]}, ["a"])

    def test_uncategorized_reported(self):
        sink = []
        cmap = build_category_map({"Race": ["a"]}, ["a", "x", "y", "z"], sink=sink)
        assert cmap.uncategorized == ("x", "y", "z")
        assert sink[0].code == "UNCATEGORIZED"

    def test_unselected_excluded_and_order_kept(self):
        cmap = build_category_map({"Race": ["b", "a", "gone"]}, ["a", "b"])
        assert cmap.categories["Race"] == ("a", "b")
        assert cmap.excluded == ("gone",)
        assert cmap.non_empty() == ["Race"]

    def test_load_from_file(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text(json.dumps({"Income": ["median_income"]}))
        assert load_category_map(p, ["median_income"]).categories["Income"] == ("median_income",)
        assert load_category_map(None, ["population_density"]).categories[
            "General Demographics"] == ("population_density",)


class TestAffinities:
    def test_two_points(self):
        P = joint_probabilities(np.array([[0.0], [1.0]]), perplexity=0.5)
        np.testing.assert_array_equal(P, [[0, 0.5], [0.5, 0]])

    def test_identical_points_uniform(self):
        P = joint_probabilities(np.zeros((6, 2)), perplexity=2.0)
        off = ~np.eye(6, dtype=bool)
        np.testing.assert_allclose(P[off], 1 / 30, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_invariants(self, seed):
        X = np.random.default_rng(seed).normal(size=(50, 4))
        P = joint_probabilities(X, 10.0)
        assert np.array_equal(P, P.T)
        assert np.all(P >= 0) and np.all(np.diag(P) == 0)
        assert abs(P.sum() - 1) < 1e-10

    def test_entropy_matches_perplexity(self):
        X = np.random.default_rng(0).normal(size=(40, 3))
        cond, _ = conditional_probabilities(X, 7.0)
        for row in cond:
            p = row[row > 0]
            assert abs(-(p * np.log(p)).sum() - np.log(7.0)) < 1e-4

    def test_kl_zero_for_matching(self):
        Y = np.array([0.0, 1.0, 3.0])
        diff = Y[:, None] - Y[None, :]
        Q = 1 / (1 + diff ** 2)
        np.fill_diagonal(Q, 0)
        assert kl_divergence(Q / Q.sum(), Y) == pytest.approx(0.0, abs=1e-15)


class TestTsne:
    def test_two_points_distinct(self):
        emb = tsne_1d(np.array([[0.0], [1.0]]), perplexity=0.5, iters=50)
        assert emb.levels[0] != emb.levels[1]

    def test_single_unit(self):
        with pytest.raises(SingleUnit):
            tsne_1d(np.zeros((1, 2)))

    def test_perplexity_too_large(self):
        with pytest.raises(PerplexityTooLarge):
            tsne_1d(np.random.default_rng(0).normal(size=(60, 2)), perplexity=20)

    def test_seeded(self):
        X = np.random.default_rng(0).normal(size=(30, 2))
        a, b = tsne_1d(X, 5, iters=100, seed=3), tsne_1d(X, 5, iters=100, seed=3)
        assert np.array_equal(a.levels, b.levels)

    def test_two_blob_separable_and_kl_decreases(self):
        X, labels, _ = make_blobs(60, 2, 4, separation=8.0, rng=0)
        emb = tsne_1d(X, perplexity=10, seed=1, kl_every=100)
        assert separable(emb.levels, labels)
        assert emb.kl_final < emb.kl_initial
        assert np.all(np.isfinite(emb.levels)) and emb.kl_final >= 0
        assert emb.kl_history[0][0] == 0 and emb.kl_history[-1][0] == 1000

    def test_numeric_learning_rate(self):
        X = np.random.default_rng(0).normal(size=(30, 2))
        assert np.all(np.isfinite(tsne_1d(X, 5, iters=50, learning_rate=1.0).levels))

    def test_permutation_equivariant(self):
        X = np.random.default_rng(0).normal(size=(25, 3))
        perm = np.random.default_rng(1).permutation(25)
        a = tsne_1d(X, 5, iters=200, init=np.linspace(-1e-4, 1e-4, 25))
        b = tsne_1d(X[perm], 5, iters=200, init=np.linspace(-1e-4, 1e-4, 25)[perm])
        np.testing.assert_allclose(b.levels, a.levels[perm], atol=1e-9)


def matrix(n=40, seed=0):
    names = ["population_density", "black_pop", "white_pop", "median_income", "zzz"]
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(n, len(names)))
    return standardize(FeatureTable([f"{10000 + i}" for i in range(n)], names, values))


class TestEmbedAll:
    def test_one_per_non_empty_category(self):
        X = matrix()
        sink = []
        cmap = load_category_map(None, X.feature_names, sink=sink)
        embs = embed_all(X, cmap, perplexity=5, iters=100, sink=sink)
        assert [e.category for e in embs] == ["Race", "Income", "General Demographics"]
        assert embs[0].features == ("black_pop", "white_pop")
        assert sum(w.code == "EMPTY_CATEGORY" for w in sink) == 6
        assert len({e.seed for e in embs}) == 3

    def test_nine_categories(self):
        m = default_category_map()
        names = [fs[0] for fs in m.values()]
        rng = np.random.default_rng(0)
        X = standardize(FeatureTable([str(i) for i in range(30)], names, rng.normal(size=(30, 9))))
        embs = embed_all(X, build_category_map(m, names), perplexity=5, iters=50)
        assert len(embs) == 9
        names8 = names[:-1]
        X8 = standardize(FeatureTable([str(i) for i in range(30)], names8, rng.normal(size=(30, 8))))
        sink = []
        assert len(embed_all(X8, build_category_map(m, names8), perplexity=5, iters=50, sink=sink)) == 8
        assert [w.code for w in sink] == ["EMPTY_CATEGORY"]

    def test_failure_isolated(self):
        X = matrix(n=12)
        sink = []
        embs = embed_all(X, load_category_map(None, X.feature_names), perplexity=5, iters=10,
                         sink=sink)
        assert embs == []
        assert sum(w.code == "TSNE_FAILED" for w in sink) == 3

    def test_row_permutation_conjugation(self):
        X = matrix()
        perm = np.random.default_rng(5).permutation(40)
        table = FeatureTable([X.units[i] for i in perm], X.feature_names,
                             np.random.default_rng(0).normal(size=(40, 5))[perm])
        Xp = standardize(table)
        cmap = load_category_map(None, X.feature_names)
        a = embed_all(X, cmap, perplexity=5, iters=200, seed=4)
        b = embed_all(Xp, cmap, perplexity=5, iters=200, seed=4)
        for ea, eb in zip(a, b):
            back = np.empty(40)
            back[perm] = eb.levels
            np.testing.assert_allclose(back, ea.levels, rtol=1e-12, atol=1e-12)


class TestFactorReport:
    def model(self, assignment, k, units=None):
        return ClusterModel(k=k, centroids=np.zeros((k, 1)), assignment=np.asarray(assignment),
                            wcss=0.0, units=units)

    def test_single_cluster_median(self):
        emb = FactorEmbedding("Race", np.array([0.0, 1.0, 2.0]), 0.0, 0)
        rows = factor_report([emb], self.model([0, 0, 0], 1))
        assert rows[0]["median"] == 1.0 and rows[0]["n"] == 3

    def test_54_rows(self):
        rng = np.random.default_rng(0)
        embs = [FactorEmbedding(c, rng.normal(size=60), 0.0, 0) for c in CATEGORIES]
        rows = factor_report(embs, self.model(np.arange(60) % 6, 6))
        assert len(rows) == 54

    def test_descriptive_oracle(self):
        rng = np.random.default_rng(1)
        levels = rng.normal(size=30)
        assign = rng.integers(0, 3, 30)
        rows = factor_report([FactorEmbedding("Race", levels, 0.0, 0)], self.model(assign, 3))
        for r in rows:
            v = levels[assign == r["cluster_id"]]
            assert r["mean"] == pytest.approx(v.mean(), abs=1e-12)
            assert r["median"] == pytest.approx(float(np.median(v)), abs=1e-12)
            assert r["range"] == pytest.approx(v.max() - v.min(), abs=1e-12)

    def test_reflection_keeps_dispersion(self):
        rng = np.random.default_rng(2)
        levels = rng.normal(size=40)
        model = self.model(rng.integers(0, 4, 40), 4)
        a = factor_report([FactorEmbedding("Race", levels, 0.0, 0)], model)
        b = factor_report([FactorEmbedding("Race", -levels, 0.0, 0)], model)
        for ra, rb in zip(a, b):
            assert ra["range"] == pytest.approx(rb["range"], abs=1e-12)
            assert ra["iqr"] == pytest.approx(rb["iqr"], abs=1e-12)

    def test_unit_mismatch(self):
        emb = FactorEmbedding("Race", np.zeros(3), 0.0, 0, units=("a", "b", "c"))
        with pytest.raises(UnitMismatch):
            factor_report([emb], self.model([0, 0, 0], 1, units=("a", "b", "d")))
        with pytest.raises(UnitMismatch):
            factor_report([FactorEmbedding("Race", np.zeros(2), 0.0, 0)], self.model([0, 0, 0], 1))

    def test_caveat_present(self):
        assert "not feature weights" in CAVEAT
