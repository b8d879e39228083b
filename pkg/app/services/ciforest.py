"""
Conditional-inference random forest.

At each node the candidate covariate with the smallest association p-value against the
response is chosen; the node becomes a leaf when the Bonferroni-adjusted minimum exceeds
alpha. Selecting the variable by a p-value rather than by impurity keeps covariates with
many possible cut points from being favoured.
"""
import logging
import math
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import chi2, norm

from app.core.config import settings
from app.core.rng import stream
from app.models.dataset import FeatureMatrix
from app.models.enums import TaskKind
from app.services.learners.base import Features, as_features, check_finite
from app.services.learners.ensemble import ForestModel, default_mtry, oob_predictions
from app.services.learners.tree import Split, SplitRule, Tree, feature_split, grow

logger = logging.getLogger(__name__)


def association_log_pvalue(X: FeatureMatrix, y_centered: np.ndarray, rows: np.ndarray, j: int) -> Optional[float]:
    """
    Log p-value of the standardized linear statistic between column j and the response
    on the node rows: normal approximation for continuous columns, chi-square with L-1
    degrees of freedom for a categorical column with L levels present. None when the
    column is constant on the node.
    """
    n = rows.size
    s_y = float(y_centered @ y_centered)
    if n < 2 or s_y <= 0.0:
        return None
    column = X.values[rows, j]
    if X.is_categorical[j]:
        codes = column.astype(np.int64)
        counts = np.bincount(codes, minlength=int(X.n_levels[j])).astype(float)
        present = counts > 0
        if present.sum() < 2:
            return None
        sums = np.bincount(codes, weights=y_centered, minlength=int(X.n_levels[j]))
        between = float(np.sum(sums[present] ** 2 / counts[present]))
        statistic = (n - 1) * between / s_y
        return float(chi2.logsf(statistic, int(present.sum()) - 1))
    xc = column - column.mean()
    s_x = float(xc @ xc)
    if s_x <= 1e-24 * max(1.0, float(np.abs(column).max()) ** 2) * n:
        return None
    statistic = math.sqrt(n - 1) * abs(float(xc @ y_centered)) / math.sqrt(s_x * s_y)
    return math.log(2.0) + float(norm.logsf(statistic))


def select_covariate(X: FeatureMatrix, y: np.ndarray, rows: np.ndarray, candidates: list[int],
                     alpha: float) -> Optional[int]:
    """Candidate with the minimal p-value, or None if its Bonferroni-adjusted p exceeds alpha"""
    y_centered = y[rows] - y[rows].mean()
    tested = []
    for j in sorted(candidates):
        log_p = association_log_pvalue(X, y_centered, rows, j)
        if log_p is not None:
            tested.append((log_p, j))
    if not tested:
        return None
    log_p, j = min(tested, key=lambda t: (t[0], t[1]))
    if math.log(len(tested)) + log_p > math.log(alpha):
        return None
    return j


def conditional_rule(X: FeatureMatrix, y: np.ndarray, mtry: int, alpha: float, min_leaf: int,
                     rng: np.random.Generator) -> SplitRule:
    p = X.n_features

    def choose(rows: np.ndarray, depth: int) -> Optional[Split]:
        candidates = list(range(p)) if mtry >= p else rng.choice(p, size=mtry, replace=False).tolist()
        j = select_covariate(X, y, rows, candidates, alpha)
        if j is None:
            return None
        # the best two-sample split of the node also maximizes the squared-error reduction
        return feature_split(X, y[rows] - y[rows].mean(), rows, j, min_leaf)

    return choose


class CIForest(ForestModel):
    def __init__(self, trees: list[Tree], inbag: np.ndarray, oob_prediction: np.ndarray, names: tuple[str, ...],
                 mtry: int, alpha: float, min_leaf: int, max_depth: Optional[int]):
        super().__init__(trees, inbag, oob_prediction, TaskKind.REGRESSION, mtry,
                         alpha=alpha, min_leaf=min_leaf, max_depth=max_depth)
        self.names = names
        self.alpha = alpha
        self.min_leaf = min_leaf

    @property
    def root_only_fraction(self) -> float:
        return float(np.mean([len(tree.nodes) == 1 for tree in self.trees])) if self.trees else 0.0

    @property
    def mean_leaves(self) -> float:
        return float(np.mean([tree.n_leaves for tree in self.trees])) if self.trees else 0.0


def _grow_conditional(X: FeatureMatrix, y: np.ndarray, seed: int, t: int, mtry: int, alpha: float,
                      min_leaf: int, max_depth: Optional[int], bootstrap: bool) -> tuple[Tree, np.ndarray]:
    rng = stream(seed, "ciforest", t)
    n = X.n_rows
    rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
    inbag = np.zeros(n, dtype=bool)
    inbag[rows] = True
    tree = grow(X.values, y, np.sort(rows), conditional_rule(X, y, mtry, alpha, min_leaf, rng), max_depth, min_leaf)
    return tree, inbag


def fit_ciforest(
    features: Features,
    phi: np.ndarray,
    n_trees: int = 500,
    mtry: Optional[int] = None,
    alpha: float = 0.05,
    seed: int = 0,
    min_leaf: int = 7,
    max_depth: Optional[int] = None,
    bootstrap: bool = True,
    n_jobs: Optional[int] = None,
) -> CIForest:
    """Forest of conditional-inference trees on (X, phi); tree t uses the stream (seed, "ciforest", t)"""
    X = as_features(features)
    phi = np.asarray(phi, dtype=float)
    check_finite(X.values, phi)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    mtry = default_mtry(X.n_features) if mtry is None else min(mtry, X.n_features)

    grown = Parallel(n_jobs=n_jobs or settings.N_JOBS)(
        delayed(_grow_conditional)(X, phi, seed, t, mtry, alpha, min_leaf, max_depth, bootstrap)
        for t in range(n_trees)
    )
    trees = [tree for tree, _ in grown]
    inbag = np.array([bag for _, bag in grown]).reshape(n_trees, X.n_rows)
    forest = CIForest(trees, inbag, oob_predictions(trees, inbag, X.values), X.names, mtry, alpha,
                      min_leaf, max_depth)
    logger.info(
        f"Grew {n_trees} conditional-inference trees (mtry={mtry}, alpha={alpha}); "
        f"{forest.root_only_fraction:.0%} root-only"
    )
    return forest
