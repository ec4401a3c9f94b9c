import math

import numpy as np
import pytest
from sklearn.base import clone

import oracles
from conftest import rec
from rfr.data import RecurrenceDataset
from rfr.forest import (ForestModel, RecurrenceForest, bootstrap_sample, c_index, fit_forest,
                        grow_tree, oob_predict, oob_trace, per_tree_scores,
                        permutation_importance, predict_cum_hazard, predict_intensity,
                        predict_mcf, tree_predict_mcf)
from rfr.mcf import local_mcf
from rfr.nhpp import IntensityModel
from rfr.simulation import SimConfig, build_dataset
from rfr.tree import TreeModel, TreeNode


@pytest.fixture(scope="module")
def data_a():
    return build_dataset(SimConfig(n=150, scenario="A", seed=21))


@pytest.fixture(scope="module")
def forest_a(data_a):
    return fit_forest(data_a, B=12, seed=3)


def test_bootstrap_examples():
    one = [rec("only", [1], 5)]
    ids, gamma = bootstrap_sample(one, 0)
    assert ids == ["only"] and list(gamma) == [0]
    recs = [rec(i, [], 5) for i in range(1000)]
    frac = np.mean([bootstrap_sample(recs, s)[1].mean() for s in range(100)])
    assert frac == pytest.approx((1 - 1 / 1000) ** 1000, abs=0.005)
    assert bootstrap_sample(recs, 7)[0] == bootstrap_sample(recs, 7)[0]


def test_homogeneous_node_gives_single_leaf():
    recs = [rec(i, [1, 2, 3], 10, (0.4, 0.6)) for i in range(12)]
    tree = grow_tree(recs, m=2, d0=2)
    assert tree.root.is_terminal and tree.root.payload == local_mcf(recs)
    with pytest.raises(ValueError):
        grow_tree(recs[:1], m=1, d0=5)


def test_toy_root_split_matches_exhaustive_oracle():
    # x1 separates two fast systems from two slow ones; x2 is noise
    systems = [([1.0, 2.0, 3.0, 4.0], 10.0), ([1.5, 2.5, 3.5], 10.0), ([6.0], 10.0), ([8.0], 10.0)]
    x1, x2 = [0.1, 0.2, 0.8, 0.9], [0.3, 0.9, 0.1, 0.6]
    recs = [rec(i, ft, c, (a, b)) for i, ((ft, c), a, b) in enumerate(zip(systems, x1, x2))]
    tree = grow_tree(recs, m=2, d0=1, L=10)
    bounds = np.arange(1, 10) / 10
    best = None
    for j, x in enumerate((x1, x2)):
        for s, score in zip(bounds, oracles.l2_split_scores(systems, x, bounds)):
            if score is not None and score > 0 and (best is None or score > best[0] + 1e-12):
                best = (score, j, s)
    assert tree.root.covariate_index == best[1] == 0
    assert tree.root.split_point == best[2]


def test_dataset_a_roots_use_signal_covariates(data_a):
    f = fit_forest(data_a, B=10, m=10, seed=1)
    roots = [t.root.covariate_index for t in f.trees]
    assert sum(r in (0, 1) for r in roots) >= 9


def test_forest_determinism_membership_and_single_tree(data_a, forest_a):
    again = fit_forest(data_a, B=12, seed=3)
    assert again.to_json() == forest_a.to_json()
    pos = {s: i for i, s in enumerate(forest_a.ids)}
    for b, t in enumerate(forest_a.trees):
        inbag = {pos[s] for s in t.bootstrap_ids}
        assert all(forest_a.membership[b, i] == (i not in inbag) for i in range(data_a.n))
    single = fit_forest(data_a, B=1, seed=9)
    x = data_a.X[:7]
    assert np.array_equal(predict_mcf(single, x, 50.0), tree_predict_mcf(single.trees[0], x, 50.0))
    t3 = fit_forest(data_a, B=3, seed=3, n_jobs=2)
    assert t3.to_json() == fit_forest(data_a, B=3, seed=3).to_json()


def test_json_roundtrip(forest_a):
    back = ForestModel.from_json(forest_a.to_json())
    assert back.to_json() == forest_a.to_json()
    d = forest_a.to_dict()
    d["version"] = 99
    with pytest.raises(ValueError):
        ForestModel.from_dict(d)


def _hand_forest(trees, mode="mcf", n=1):
    return ForestModel(trees, mode, np.ones((len(trees), n), dtype=np.uint8), tuple(str(i) for i in range(n)),
                       np.full((n, 1), 0.3))


def test_predict_mcf_hand_examples():
    a = [rec(1, [1, 2], 10, (0.1,)), rec(2, [3], 10, (0.2,))]
    b = [rec(3, [2], 10, (0.8,))]
    root = TreeNode(0, left=TreeNode(1, payload=local_mcf(a)), right=TreeNode(2, payload=local_mcf(b)),
                    covariate_index=0, split_point=0.5)
    stump = TreeModel(TreeNode(0, payload=local_mcf(a + b)))
    forest = _hand_forest([TreeModel(root), stump])
    # left leaf: 0.5 at t=1, 1.0 at t=2; right leaf: 1.0 at t=2; stump: 1/3, 1.0
    assert predict_mcf(forest, [0.3], 1.0) == pytest.approx((0.5 + 1 / 3) / 2)
    assert predict_mcf(forest, [0.3], 2.5) == pytest.approx(1.0)
    assert predict_mcf(forest, [0.9], 1.0) == pytest.approx((0.0 + 1 / 3) / 2)
    same = _hand_forest([stump, stump, stump])
    assert predict_mcf(same, [0.5], 2.0) == tree_predict_mcf(stump, [0.5], 2.0)
    assert predict_mcf(_hand_forest([stump]), [0.5], 3.0) == local_mcf(a + b)(3.0)
    with pytest.raises(ValueError):
        predict_intensity(forest, [0.5], a[0], 1.0)


def test_ensemble_is_mean_of_trees(forest_a, data_a):
    X, t = data_a.X[:40], np.array([10.0, 50.0, 90.0])
    per_tree = np.stack([tree_predict_mcf(tr, X, t) for tr in forest_a.trees])
    assert np.array_equal(predict_mcf(forest_a, X, t), per_tree.mean(axis=0))


def test_partition_property(forest_a):
    X = np.random.default_rng(0).uniform(size=(10_000, forest_a.train_X.shape[1]))
    for tree in forest_a.trees[:3]:
        leaves = tree.leaf_nodes(X)
        assert all(leaf.is_terminal for leaf in leaves)
        boxes = []

        def walk(node, lo, hi):
            if node.is_terminal:
                boxes.append((lo, hi))
                return
            j, s = node.covariate_index, node.split_point
            h2, l2 = hi.copy(), lo.copy()
            h2[j], l2[j] = min(hi[j], s), max(lo[j], s)
            walk(node.left, lo, h2)
            walk(node.right, l2, hi)
        p = X.shape[1]
        walk(tree.root, np.full(p, -np.inf), np.full(p, np.inf))
        inside = np.zeros(len(X), dtype=int)
        for lo, hi in boxes:
            inside += np.all((X > lo) & (X <= hi), axis=1)
        assert np.all(inside == 1)


def test_nhpp_predictions_hand_forest():
    m = IntensityModel(math.log(0.05), [])
    tree = TreeModel(TreeNode(0, payload=m))
    forest = _hand_forest([tree, tree], mode="nhpp")
    r = rec(0, [], 100, (0.3,))
    assert predict_intensity(forest, [0.3], r, 7.0) == pytest.approx(0.05)
    assert np.allclose(predict_cum_hazard(forest, [0.3], r, [0, 40, 100]), [0, 2.0, 5.0])
    with pytest.raises(ValueError):
        predict_mcf(forest, [0.3], 1.0)


def test_oob_predict_examples(forest_a, data_a):
    f = ForestModel(forest_a.trees, "mcf", np.ones_like(forest_a.membership), forest_a.ids,
                    forest_a.train_X)
    sid = f.ids[0]
    assert oob_predict(f, sid, 40.0) == pytest.approx(predict_mcf(f, f.train_X[0], 40.0), rel=1e-15)
    g = np.zeros_like(f.membership)
    g[4, 0] = 1
    f1 = ForestModel(f.trees, "mcf", g, f.ids, f.train_X)
    assert oob_predict(f1, sid, 40.0) == tree_predict_mcf(f.trees[4], f.train_X[0], 40.0)
    g[4, 0] = 0
    assert math.isnan(oob_predict(ForestModel(f.trees, "mcf", g, f.ids, f.train_X), sid, 40.0))


def test_c_index_examples():
    assert c_index([1, 2, 3, 4], [10, 20, 30, 40]) == 1.0
    assert c_index([4, 3, 2, 1], [10, 20, 30, 40]) == 0.0
    assert c_index([1, 1, 1], [1, 2, 3]) == 0.5
    rng = np.random.default_rng(0)
    vals = [c_index(rng.normal(size=46), rng.normal(size=46)) for _ in range(20)]
    assert abs(np.mean(vals) - 0.5) < 0.05
    with pytest.raises(ValueError):
        c_index([1.0], [2.0])
    for _ in range(30):
        p, o = rng.integers(0, 5, 15), rng.integers(0, 4, 15)
        assert c_index(p, o) == oracles.c_index(list(p), list(o))


def test_unused_covariate_importance_is_exactly_zero(data_a):
    f = fit_forest(data_a, B=3, m=2, d0=20, seed=2)
    used = set().union(*(t.used_covariates for t in f.trees))
    imp = permutation_importance(f, data_a, seed=0, repeats=2)
    for j in range(data_a.p):
        if j not in used:
            assert imp[j] == 0.0
    j = next(j for j in range(data_a.p) if j not in used)
    X = data_a.X.copy()
    X[:, j] = np.random.default_rng(1).permutation(X[:, j])
    assert np.array_equal(per_tree_scores(f, data_a.records, X), per_tree_scores(f, data_a.records))


def test_oob_trace_shape(forest_a, data_a):
    tr = oob_trace(forest_a, data_a)
    assert tr.shape == (12,) and np.all((tr[np.isfinite(tr)] >= 0) & (tr[np.isfinite(tr)] <= 1))
    assert np.isfinite(tr[-1])


def test_single_tree_variance_shrinks_with_node_size(data_a):
    X = np.random.default_rng(5).uniform(size=(20, data_a.p))

    def spread(d0):
        f = fit_forest(data_a, B=30, seed=4, d0=d0)
        per_tree = np.stack([tree_predict_mcf(t, X, 50.0) for t in f.trees])
        return per_tree.var(axis=0).mean()
    small, large = spread(3), spread(25)
    assert np.isfinite(small) and large < small


def test_estimator_api(data_a):
    est = RecurrenceForest(n_trees=4, random_state=1)
    assert clone(est).get_params() == est.get_params()
    est.fit(data_a)
    assert 0.5 < est.oob_score_ <= 1 and est.predict(data_a).shape == (data_a.n,)
    assert 0 <= est.score(data_a) <= 1
    bad = RecurrenceDataset(tuple(r.with_covariates(r.static_covariates * 5) for r in data_a))
    with pytest.raises(ValueError):
        RecurrenceForest(n_trees=1).fit(bad)
