import math

import numpy as np
import pytest

from app.models.dataset import FeatureMatrix
from app.schemas.plan import ImportanceOptions
from app.services import importance
from app.services.ciforest import CIForest, association_log_pvalue, fit_ciforest, select_covariate
from app.services.learners.tree import Node, Split, Tree


@pytest.fixture
def signal_data():
    rng = np.random.default_rng(21)
    X = rng.normal(size=(200, 3))
    return X, X[:, 0].copy()


def hand_forest(trees: list[Tree], n: int, names=("x1", "x2")) -> CIForest:
    return CIForest(trees, np.ones((len(trees), n), dtype=bool), np.zeros(n), tuple(names),
                    mtry=len(names), alpha=0.05, min_leaf=1, max_depth=None)


def stump(feature: int, low: float, high: float) -> Tree:
    return Tree([Node(value=0.0, n=0, split=Split(feature=feature, gain=1.0, threshold=0.0), left=1, right=2),
                 Node(value=low, n=0), Node(value=high, n=0)])


def test_noise_response_leaves_most_trees_unsplit():
    rng = np.random.default_rng(1)
    X, phi = rng.normal(size=(200, 10)), rng.normal(size=200)
    forest = fit_ciforest(X, phi, n_trees=40, seed=2)
    assert forest.root_only_fraction >= 0.5


def test_step_response_splits_root_near_zero():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 3))
    phi = (X[:, 0] > 0).astype(float)
    forest = fit_ciforest(X, phi, n_trees=10, mtry=3, seed=4)
    for tree in forest.trees:
        root = tree.nodes[0]
        assert root.split.feature == 0
        assert abs(root.split.threshold) < 0.2


def test_selected_covariate_has_strongest_association():
    X = FeatureMatrix.from_array(np.array([
        [1.0, 0.3, 5.0], [2.0, -0.2, 3.0], [3.0, 0.8, 4.0], [4.0, 0.1, 1.0],
        [5.0, -0.5, 2.0], [6.0, 0.4, 0.5], [7.0, -0.9, 0.0], [8.0, 0.6, -1.0],
    ]))
    y = np.array([0.1, 0.3, 0.2, 0.9, 0.8, 1.1, 1.0, 1.6])
    rows = np.arange(8)
    correlations = [abs(np.corrcoef(X.values[:, j], y)[0, 1]) for j in range(3)]
    assert select_covariate(X, y, rows, [0, 1, 2], alpha=1.0) == int(np.argmax(correlations))
    logs = [association_log_pvalue(X, y - y.mean(), rows, j) for j in range(3)]
    assert np.argmin(logs) == np.argmax(correlations)


def test_bonferroni_stop():
    rng = np.random.default_rng(5)
    X = FeatureMatrix.from_array(rng.normal(size=(30, 4)))
    y = rng.normal(size=30)
    rows = np.arange(30)
    logs = [association_log_pvalue(X, y - y.mean(), rows, j) for j in range(4)]
    alpha = 0.5 * 4 * math.exp(min(logs))
    assert select_covariate(X, y, rows, [0, 1, 2, 3], alpha=alpha) is None
    assert select_covariate(X, y, rows, [0, 1, 2, 3], alpha=3.0 * alpha) is not None


def test_binary_factor_p_value_matches_continuous_coding():
    rng = np.random.default_rng(6)
    codes = np.tile([0.0, 1.0], 20)
    y = codes + rng.normal(size=40)
    categorical = FeatureMatrix(values=codes[:, None], names=("g",), is_categorical=np.array([True]),
                                levels=(("a", "b"),))
    continuous = FeatureMatrix.from_array(codes)
    rows = np.arange(40)
    assert association_log_pvalue(categorical, y - y.mean(), rows, 0) == pytest.approx(
        association_log_pvalue(continuous, y - y.mean(), rows, 0))


def test_constant_column_is_not_tested():
    X = FeatureMatrix.from_array(np.ones((10, 1)))
    y = np.arange(10.0)
    assert association_log_pvalue(X, y - y.mean(), np.arange(10), 0) is None


def test_unused_covariate_has_zero_importance():
    rng = np.random.default_rng(7)
    X = np.column_stack([rng.normal(size=150), rng.normal(size=150), np.ones(150)])
    phi = X[:, 0] + 0.1 * rng.normal(size=150)
    forest = fit_ciforest(X, phi, n_trees=20, seed=8)
    vimp = importance.permutation_importance(forest, X, phi, n_repeats=2, seed=9)
    assert vimp[2] == 0.0
    assert vimp[0] > 0.0 and np.argmax(vimp) == 0


def test_importance_is_seed_deterministic(signal_data):
    X, phi = signal_data
    forest = fit_ciforest(X, phi, n_trees=10, seed=1)
    first = importance.permutation_importance(forest, X, phi, seed=3)
    second = importance.permutation_importance(forest, X, phi, seed=3)
    assert np.array_equal(first, second)


def test_ranking_breaks_ties_by_name():
    assert importance.ranking(["b", "a", "c"], np.array([1.0, 1.0, 2.0])) == ["c", "a", "b"]


def test_ranking_invariant_to_affine_covariate_change(signal_data):
    X, phi = signal_data
    X = X.copy()
    X[:, 1] = 0.5 * phi + X[:, 1]
    base = importance.importance_report(X, phi, n_trees=15, seed=2, bootstrap_reps=0,
                                        options=ImportanceOptions(top_k=2, pd_covariates=0))
    moved = X.copy()
    moved[:, 1] = 3.0 * moved[:, 1] - 2.0
    other = importance.importance_report(moved, phi, n_trees=15, seed=2, bootstrap_reps=0,
                                         options=ImportanceOptions(top_k=2, pd_covariates=0))
    assert other.ranking == base.ranking


def test_pd_of_constant_forest_is_flat(signal_data):
    X, _ = signal_data
    forest = fit_ciforest(X, np.full(X.shape[0], 0.4), n_trees=5, seed=0)
    table = importance.partial_dependence(forest, X, ["x1"], grid_size=5)
    assert table.values == pytest.approx(np.full(5, 0.4))


def test_pd_single_point_is_mean_of_modified_predictions(signal_data):
    X, phi = signal_data
    forest = fit_ciforest(X, phi, n_trees=8, seed=5)
    table = importance.partial_dependence(forest, X, ["x1", "x2"], grids=[np.array([0.3]), np.array([-0.1])])
    modified = X.copy()
    modified[:, 0], modified[:, 1] = 0.3, -0.1
    assert table.values.shape == (1, 1)
    assert table.values[0, 0] == pytest.approx(forest.predict(modified).mean(), abs=1e-10)


def test_pd_grid_uses_quantiles_or_levels():
    X = FeatureMatrix(values=np.column_stack([np.arange(11.0), np.tile([0.0, 1.0, 2.0], 4)[:11]]),
                      names=("x", "g"), is_categorical=np.array([False, True]), levels=((), ("a", "b", "c")))
    grid, _ = importance.pd_grid(X, 0, grid_size=3)
    assert grid.tolist() == [0.0, 5.0, 10.0]
    levels, labels = importance.pd_grid(X, 1)
    assert levels.tolist() == [0.0, 1.0, 2.0] and labels == ("a", "b", "c")


def test_additive_forest_has_no_interaction():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(50, 2))
    forest = hand_forest([stump(0, 0.0, 1.0), stump(1, -1.0, 2.0)], 50)
    vint = importance.interaction_importance(forest, X, ["x1", "x2"], grid_size=6)
    assert vint[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_product_forest_has_interaction():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(50, 2))
    tree = Tree([
        Node(value=0.0, n=0, split=Split(feature=0, gain=1.0, threshold=0.0), left=1, right=2),
        Node(value=0.0, n=0),
        Node(value=0.0, n=0, split=Split(feature=1, gain=1.0, threshold=0.0), left=3, right=4),
        Node(value=0.0, n=0),
        Node(value=1.0, n=0),
    ])
    forest = hand_forest([tree], 50)
    vimp = np.array([0.3, 0.2])
    vint = importance.interaction_importance(forest, X, ["x1", "x2"], vimp=vimp, grid_size=6)
    assert vint[0, 1] > 0.0
    assert vint[0, 1] == vint[1, 0]
    assert np.diag(vint).tolist() == [0.3, 0.2]


def test_pair_interaction_hand_table():
    table = importance.PDTable(names=("a", "b"), grids=(np.array([0.0, 1.0]), np.array([0.0, 1.0])),
                               labels=(("0", "1"), ("0", "1")), values=np.array([[0.0, 0.0], [0.0, 1.0]]))
    # sd over each axis is (0, 0.7071); its sd across the other axis is 0.5
    assert importance.pair_interaction(table) == pytest.approx(0.5)


def test_nogueira_hand_values():
    assert importance.nogueira_stability(np.array([[1, 0], [0, 1]])) == pytest.approx(-1.0)
    same = np.array([[1, 1, 0, 0]] * 5)
    assert importance.nogueira_stability(same) == pytest.approx(1.0)


def test_nogueira_undefined_cases():
    assert importance.nogueira_stability(np.array([[1, 0]])) is None
    assert importance.nogueira_stability(np.zeros((3, 4))) is None
    assert importance.nogueira_stability(np.ones((3, 4))) is None


def test_nogueira_random_selections_near_zero():
    rng = np.random.default_rng(10)
    Z = np.zeros((2000, 10), dtype=int)
    for row in Z:
        row[rng.choice(10, size=3, replace=False)] = 1
    assert abs(importance.nogueira_stability(Z)) < 0.02


def test_selection_matrix_marks_top_k():
    runs = np.array([[3.0, 1.0, 2.0], [0.0, 5.0, 4.0]])
    Z = importance.selection_matrix(runs, ["a", "b", "c"], top_k=2)
    assert Z.tolist() == [[1, 0, 1], [0, 1, 1]]


def test_bootstrap_stability_needs_two_runs(signal_data):
    X, phi = signal_data
    with pytest.raises(ValueError):
        importance.bootstrap_stability(X, phi, B=1, top_k=1, seed=0)


def test_bootstrap_stability_runs(signal_data):
    X, phi = signal_data
    options = ImportanceOptions(bootstrap_trees=5)
    runs, stability = importance.bootstrap_stability(X, phi, B=3, top_k=1, seed=4, options=options)
    again, _ = importance.bootstrap_stability(X, phi, B=3, top_k=1, seed=4, options=options)
    assert runs.shape == (3, 3)
    assert np.array_equal(runs, again)
    assert stability is None or -1.0 <= stability <= 1.0


def test_importance_report_layout(small_trial):
    ds = small_trial.dataset
    X = FeatureMatrix.from_dataset(ds)
    phi = small_trial.tau + np.random.default_rng(11).normal(size=ds.n_rows)
    options = ImportanceOptions(top_k=4, grid_size=4, bootstrap_trees=3, n_repeats=1, pd_covariates=2)
    report = importance.importance_report(X, phi, n_trees=10, seed=6, bootstrap_reps=2, options=options)
    assert sorted(report.ranking) == sorted(ds.covariates)
    vint = np.array(report.vint)
    assert vint.shape == (4, 4)
    assert np.allclose(vint, vint.T)
    for i, name in enumerate(report.vint_names):
        assert vint[i, i] == report.vimp[report.names.index(name)]
    assert len(report.bootstrap_vimp) == 2
    assert len(report.partial_dependence) == 2
    for curve in report.partial_dependence:
        assert curve.categorical == ds.column(curve.covariate).is_categorical
    assert report.rank_of(report.ranking[0]) == 1
    assert report.rank_of("nope") is None
