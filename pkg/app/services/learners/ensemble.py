"""
Bagged and boosted tree ensembles.
"""
import logging
import math
from typing import Any, Optional

import numpy as np
from joblib import Parallel, delayed

from app.core.config import settings
from app.core.rng import stream
from app.models.dataset import FeatureMatrix
from app.models.enums import LearnerKind, TaskKind
from app.services.learners.base import Features, Model, as_features, check_finite
from app.services.learners.tree import Tree, grow, variance_rule

logger = logging.getLogger(__name__)


def default_mtry(p: int) -> int:
    return max(1, math.ceil(math.sqrt(p)))


def oob_predictions(trees: list[Tree], inbag: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Mean over the trees that did not see each row; NaN for rows always in the bag"""
    total = np.zeros(X.shape[0])
    count = np.zeros(X.shape[0])
    for tree, bag in zip(trees, inbag):
        out = ~bag
        if out.any():
            total[out] += tree.predict(X[out])
            count[out] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / count, np.nan)


class ForestModel(Model):
    kind = LearnerKind.FOREST

    def __init__(self, trees: list[Tree], inbag: np.ndarray, oob_prediction: np.ndarray,
                 task: TaskKind = TaskKind.REGRESSION, mtry: int = 1, **options: Any):
        super().__init__(task)
        self.trees = trees
        self.inbag = inbag
        self.oob_prediction = oob_prediction
        self.mtry = mtry
        self.options = options

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _predict(self, X: FeatureMatrix) -> np.ndarray:
        return np.mean([tree.predict(X.values) for tree in self.trees], axis=0)

    def params(self) -> dict[str, Any]:
        return {
            "n_trees": self.n_trees,
            "mtry": self.mtry,
            **self.options,
            "trees": [tree.to_dict() for tree in self.trees],
        }


def _grow_bagged(X: FeatureMatrix, y: np.ndarray, seed: int, t: int, mtry: int,
                 max_depth: Optional[int], min_leaf: int, bootstrap: bool) -> tuple[Tree, np.ndarray]:
    rng = stream(seed, "forest", t)
    n = X.n_rows
    rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
    inbag = np.zeros(n, dtype=bool)
    inbag[rows] = True
    tree = grow(X.values, y, np.sort(rows), variance_rule(X, y, min_leaf, mtry, rng), max_depth, min_leaf)
    return tree, inbag


def fit_forest(
    features: Features,
    y: np.ndarray,
    n_trees: int = 100,
    mtry: Optional[int] = None,
    max_depth: Optional[int] = 8,
    min_leaf: int = 5,
    seed: int = 0,
    task: TaskKind = TaskKind.REGRESSION,
    bootstrap: bool = True,
    n_jobs: Optional[int] = None,
) -> ForestModel:
    """Random forest; tree t draws from the stream (seed, "forest", t)"""
    X = as_features(features)
    y = np.asarray(y, dtype=float)
    check_finite(X.values, y)
    mtry = default_mtry(X.n_features) if mtry is None else min(mtry, X.n_features)

    grown = Parallel(n_jobs=n_jobs or settings.N_JOBS)(
        delayed(_grow_bagged)(X, y, seed, t, mtry, max_depth, min_leaf, bootstrap)
        for t in range(n_trees)
    )
    trees = [tree for tree, _ in grown]
    inbag = np.array([bag for _, bag in grown]).reshape(n_trees, X.n_rows)
    oob = oob_predictions(trees, inbag, X.values)
    logger.debug(f"Grew forest of {n_trees} trees on {X.n_rows} rows (mtry={mtry})")
    return ForestModel(trees, inbag, oob, task, mtry, max_depth=max_depth, min_leaf=min_leaf)


class BoostingModel(Model):
    kind = LearnerKind.BOOSTING

    def __init__(self, baseline: float, trees: list[Tree], learning_rate: float,
                 task: TaskKind = TaskKind.REGRESSION, depth: int = 3):
        super().__init__(task)
        self.baseline = baseline
        self.trees = trees
        self.learning_rate = learning_rate
        self.depth = depth

    def _predict(self, X: FeatureMatrix) -> np.ndarray:
        out = np.full(X.n_rows, self.baseline)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X.values)
        return out

    def params(self) -> dict[str, Any]:
        return {
            "baseline": self.baseline,
            "learning_rate": self.learning_rate,
            "depth": self.depth,
            "trees": [tree.to_dict() for tree in self.trees],
        }


def fit_boosting(
    features: Features,
    y: np.ndarray,
    n_rounds: int = 200,
    learning_rate: float = 0.05,
    depth: int = 3,
    min_leaf: int = 10,
    seed: int = 0,
    task: TaskKind = TaskKind.REGRESSION,
    subsample: float = 1.0,
) -> BoostingModel:
    """Stagewise least-squares boosting of shallow trees, starting from mean(y)"""
    X = as_features(features)
    y = np.asarray(y, dtype=float)
    check_finite(X.values, y)
    if not 0.0 < subsample <= 1.0:
        raise ValueError(f"subsample must lie in (0, 1], got {subsample}")

    baseline = float(y.mean())
    fitted = np.full(X.n_rows, baseline)
    trees = []
    for r in range(n_rounds):
        residual = y - fitted
        rows = np.arange(X.n_rows)
        if subsample < 1.0:
            size = max(2 * min_leaf, int(subsample * X.n_rows))
            rows = np.sort(stream(seed, "boosting", r).choice(X.n_rows, size=min(size, X.n_rows), replace=False))
        rule = variance_rule(X, residual, min_leaf)
        tree = grow(X.values, residual, rows, rule, depth, min_leaf)
        fitted += learning_rate * tree.predict(X.values)
        trees.append(tree)
    return BoostingModel(baseline, trees, learning_rate, task, depth)
